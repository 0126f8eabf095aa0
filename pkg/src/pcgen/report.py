"""Structured key=value reports (written by evaluate, re-parseable here)."""

from __future__ import annotations

from .errors import ContractViolation


def write_report(path, entries):
    """Write an ordered mapping as 'key = value' lines."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in entries.items():
            if isinstance(value, float):
                f.write(f"{key} = {value:.9g}\n")
            else:
                f.write(f"{key} = {value}\n")


def read_report(path):
    """Parse a report back into a dict; numeric values become floats."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractViolation(
                    f"{path}, line {ln}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            value = value.strip()
            try:
                out[key.strip()] = float(value)
            except ValueError:
                out[key.strip()] = value
    return out

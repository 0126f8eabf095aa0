"""Point-cloud file I/O (PLY ascii/binary, XYZ text) and PGM images.

Coordinates are stored as 32-bit floats.  PLY vertices may carry one
optional scalar property named "error" (per-point heat values); binary
PLY round-trips bit-exactly, text formats round-trip exactly at the
printed precision (9 significant digits, enough to reproduce any
float32).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CloudParseError, ContractViolation, UnsupportedFormat

_FLOAT_TYPES = {"float", "float32"}


@dataclass
class Cloud:
    """N x 3 coordinates plus an optional per-point scalar attribute."""

    points: np.ndarray
    error: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ContractViolation(
                f"cloud must be non-empty (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ContractViolation("cloud contains non-finite coordinates")
        if self.error is not None:
            self.error = np.asarray(self.error, dtype=np.float32)
            if self.error.shape != (len(self.points),):
                raise ContractViolation(
                    f"error attribute length {self.error.shape} does not match "
                    f"{len(self.points)} points")


# -- PLY -----------------------------------------------------------------------

def _write_ply(path, cloud: Cloud, binary=True):
    props = ["x", "y", "z"] + (["error"] if cloud.error is not None else [])
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(cloud.points)}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    cols = [cloud.points]
    if cloud.error is not None:
        cols.append(cloud.error[:, None])
    table = np.hstack(cols).astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(table.tobytes())
        else:
            for row in table:
                f.write((" ".join(f"{v:.9g}" for v in row) + "\n").encode("ascii"))


def _read_ply(path):
    raw = Path(path).read_bytes()
    end_marker = b"end_header\n"
    end = raw.find(end_marker)
    if not raw.startswith(b"ply") or end < 0:
        raise CloudParseError(path, "not a ply file (missing header)", line=1)
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(end_marker):]

    fmt = None
    count = None
    props = []
    element = None
    for ln, line in enumerate(header_lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise CloudParseError(path, f"bad format line: {line!r}", line=ln)
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(path, f"unsupported ply format {parts[1]}", line=ln)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise CloudParseError(path, f"bad element line: {line!r}", line=ln)
            if parts[1] != "vertex":
                raise UnsupportedFormat(path, f"unsupported element {parts[1]}", line=ln)
            element = parts[1]
            try:
                count = int(parts[2])
            except ValueError:
                raise CloudParseError(path, f"bad vertex count {parts[2]!r}", line=ln) from None
        elif parts[0] == "property":
            if element != "vertex":
                raise CloudParseError(path, "property before element", line=ln)
            if len(parts) != 3:
                raise CloudParseError(path, f"bad property line: {line!r}", line=ln)
            if parts[1] not in _FLOAT_TYPES:
                raise UnsupportedFormat(path, f"unsupported property type {parts[1]}", line=ln)
            if parts[2] not in ("x", "y", "z", "error"):
                raise UnsupportedFormat(path, f"unknown required property {parts[2]}", line=ln)
            props.append(parts[2])
        else:
            raise CloudParseError(path, f"unknown header keyword {parts[0]!r}", line=ln)
    if fmt is None or count is None:
        raise CloudParseError(path, "incomplete header", line=len(header_lines))
    for need in ("x", "y", "z"):
        if need not in props:
            raise CloudParseError(path, f"missing property {need}", line=len(header_lines))

    width = len(props)
    if fmt == "binary_little_endian":
        expected = count * width * 4
        if len(body) < expected:
            raise CloudParseError(path, f"truncated payload: {len(body)} of "
                                  f"{expected} bytes", offset=end + len(end_marker) + len(body))
        table = np.frombuffer(body[:expected], dtype="<f4").reshape(count, width)
    else:
        lines = body.decode("ascii", errors="replace").splitlines()
        header_len = len(header_lines) + 1
        if len(lines) < count:
            raise CloudParseError(path, f"expected {count} rows, found {len(lines)}",
                                  line=header_len + len(lines))
        table = np.empty((count, width), dtype=np.float32)
        for i in range(count):
            toks = lines[i].split()
            if len(toks) != width:
                raise CloudParseError(path, f"expected {width} values, got {len(toks)}",
                                      line=header_len + i + 1)
            try:
                table[i] = [float(t) for t in toks]
            except ValueError:
                raise CloudParseError(path, f"bad number in row: {lines[i]!r}",
                                      line=header_len + i + 1) from None

    cols = {name: table[:, j] for j, name in enumerate(props)}
    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    return Cloud(points=points, error=cols.get("error"))


# -- XYZ -----------------------------------------------------------------------

def _write_xyz(path, cloud: Cloud):
    with open(path, "w", encoding="ascii") as f:
        for p in cloud.points:
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def _read_xyz(path):
    points = []
    with open(path, encoding="ascii", errors="replace") as f:
        for ln, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            toks = stripped.split()
            if len(toks) != 3:
                raise CloudParseError(path, f"expected 3 values, got {len(toks)}", line=ln)
            try:
                points.append([float(t) for t in toks])
            except ValueError:
                raise CloudParseError(path, f"bad number in row: {line!r}", line=ln) from None
    if not points:
        raise CloudParseError(path, "no points in file", line=1)
    return Cloud(points=np.array(points, dtype=np.float32))


# -- dispatch --------------------------------------------------------------------

def write_cloud(path, cloud, binary=True):
    """Write a Cloud (or bare (N, 3) array) as .ply or .xyz by extension."""
    if not isinstance(cloud, Cloud):
        cloud = Cloud(points=cloud)
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        _write_ply(path, cloud, binary=binary)
    elif suffix == ".xyz":
        _write_xyz(path, cloud)
    else:
        raise UnsupportedFormat(path, f"unknown cloud extension {suffix!r}")


def read_cloud(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return _read_ply(path)
    if suffix == ".xyz":
        return _read_xyz(path)
    raise UnsupportedFormat(path, f"unknown cloud extension {suffix!r}")


# -- PGM (P5) ---------------------------------------------------------------------

def write_pgm(path, image):
    """Write a [0, 1] float image as an 8-bit binary PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ContractViolation(f"pgm image must be 2-d, got {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM into a [0, 1] float32 image (H, W)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise CloudParseError(path, "not a binary pgm (P5) file", line=1)
    # header tokens: magic, width, height, maxval, separated by whitespace
    # with '#' comments
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CloudParseError(path, "truncated pgm header", offset=pos)
        fields.append(raw[start:pos])
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError:
        raise CloudParseError(path, "bad pgm header fields", offset=pos) from None
    if maxval != 255:
        raise UnsupportedFormat(path, f"only 8-bit pgm supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise CloudParseError(path, f"truncated pgm payload ({len(body)} of {w * h})",
                              offset=pos + len(body))
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return img.astype(np.float32) / 255.0

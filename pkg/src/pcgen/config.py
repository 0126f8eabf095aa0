"""Training configuration: typed fields, key=value file format, digest."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractViolation

_FIELD_DOC = {
    "seed": "master seed for parameters, data order and every noise stream",
    "degrees": "branching factor per tree level; product = sparse point count",
    "stage1_widths": "per-layer feature widths (blank = derived schedule)",
    "support": "hidden width of the graph-conv loop transform",
    "ratio": "upsampling ratio r (dense count = r * sparse count)",
    "feature_width": "per-point feature width C in the upsampler",
    "extractor_widths": "dense extractor block widths",
    "expand_blocks": "per-point stack depth before the widening layer",
    "recon_hidden": "hidden width of the coordinate regression",
    "image_size": "square input image size (must be divisible by 16)",
    "attn_lam": "regularizer of the parameter-free attention scores",
    "lam_gp": "gradient-penalty weight",
    "w_adv": "adversarial weight in the upsampler objective",
    "w_kl": "KL weight in the upsampler objective",
    "w_cd": "Chamfer weight in the upsampler objective",
    "w_emd": "EMD weight in the upsampler objective",
    "stage1_cd": "Chamfer weight in the sparse-stage objective",
    "emd_loss_subset": "points per cloud used by the EMD training loss",
    "critic_iters": "critic updates per generator update (t)",
    "lr": "Adam learning rate",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "batch_size": "samples per outer iteration",
    "iterations": "outer training iterations (T)",
    "log_interval": "iterations between metric rows",
    "checkpoint_interval": "iterations between checkpoint writes",
    "probe_size": "held-out samples in the training probe",
    "eval_subset": "subset size for EMD when clouds exceed the exact cap",
    "stage": "train stage '1', '2' or 'both'",
    "data_dir": "dataset directory (may be overridden on the command line)",
}


@dataclass
class TrainConfig:
    seed: int = 7
    degrees: tuple = (1, 2, 2, 4, 16)
    stage1_widths: tuple = ()
    support: int = 10
    ratio: int = 4
    feature_width: int = 64
    extractor_widths: tuple = (24, 24, 24)
    expand_blocks: int = 2
    recon_hidden: int = 32
    image_size: int = 64
    attn_lam: float = 1e-4
    lam_gp: float = 10.0
    w_adv: float = 0.1
    w_kl: float = 0.01
    w_cd: float = 100.0
    w_emd: float = 10.0
    stage1_cd: float = 100.0
    emd_loss_subset: int = 128
    critic_iters: int = 5
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 4
    iterations: int = 2000
    log_interval: int = 50
    checkpoint_interval: int = 500
    probe_size: int = 8
    eval_subset: int = 512
    stage: str = "both"
    data_dir: str = ""

    def __post_init__(self):
        self.degrees = tuple(int(d) for d in self.degrees)
        self.stage1_widths = tuple(int(w) for w in self.stage1_widths)
        self.extractor_widths = tuple(int(w) for w in self.extractor_widths)

    # -- derived -------------------------------------------------------------

    @property
    def sparse_points(self):
        return int(np.prod(self.degrees))

    @property
    def dense_points(self):
        return self.sparse_points * self.ratio

    def validate(self):
        if self.critic_iters < 1:
            raise ContractViolation("critic_iters must be >= 1")
        if self.iterations < 1:
            raise ContractViolation("iterations must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.ratio < 2:
            raise ContractViolation("ratio must be >= 2")
        if any(d < 1 for d in self.degrees):
            raise ContractViolation(f"degrees must be >= 1, got {self.degrees}")
        if self.stage1_widths and len(self.stage1_widths) != len(self.degrees) + 1:
            raise ContractViolation(
                f"stage1_widths needs {len(self.degrees) + 1} entries, "
                f"got {len(self.stage1_widths)}")
        if self.stage not in ("1", "2", "both"):
            raise ContractViolation(f"stage must be 1, 2 or both, got {self.stage!r}")
        if self.image_size % 16:
            raise ContractViolation("image_size must be divisible by 16")
        if self.emd_loss_subset < 2:
            raise ContractViolation("emd_loss_subset must be >= 2")
        return self


def _format_value(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text, ref):
    text = text.strip()
    if isinstance(ref, tuple):
        if not text:
            return ()
        return tuple(int(x.strip()) for x in text.split(","))
    if isinstance(ref, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(ref, int):
        return int(text)
    if isinstance(ref, float):
        return float(text)
    return text


def config_to_text(cfg: TrainConfig, comments=True):
    lines = []
    for f in fields(cfg):
        if comments and f.name in _FIELD_DOC:
            lines.append(f"# {_FIELD_DOC[f.name]}")
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
        if comments:
            lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def config_from_text(text):
    defaults = TrainConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(defaults)}
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ContractViolation(f"config line {ln}: unknown key {key!r}")
        try:
            values[key] = _parse_value(val, known[key])
        except ValueError:
            raise ContractViolation(
                f"config line {ln}: bad value for {key}: {val.strip()!r}") from None
    return TrainConfig(**values).validate()


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return config_from_text(f.read())


def config_digest(cfg: TrainConfig):
    """Stable digest of the semantic configuration (comments excluded)."""
    canon = config_to_text(cfg, comments=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()

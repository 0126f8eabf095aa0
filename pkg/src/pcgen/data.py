"""Synthetic closed-surface dataset: clouds plus 2D silhouette slices.

Each sample is an ellipsoid whose radius is modulated by low-order
spherical-harmonic perturbations.  Two parameter regimes (smooth vs
bumpy spectra) give a binary class structure.  The surface is sampled
uniformly by area via rejection on the area element, the dense cloud is
scaled to the unit sphere, the sparse ground truth is a
farthest-point-sampled subset, and the conditioning image is an
anti-aliased silhouette of the z=0 cross-section.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cloudio import Cloud, read_cloud, read_pgm, write_cloud, write_pgm
from .errors import ContractViolation

# real spherical-harmonic basis evaluated on unit directions (x, y, z)
_S3 = np.sqrt(3.0)


def _basis(d):
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    return np.stack([
        0.5 * (3 * z * z - 1),                       # degree 2
        _S3 * x * z,
        _S3 * y * z,
        0.5 * _S3 * (x * x - y * y),
        _S3 * x * y,
        0.5 * z * (5 * z * z - 3),                   # degree 3
        0.61 * x * (5 * z * z - 1),
        0.61 * y * (5 * z * z - 1),
        0.125 * (35 * z ** 4 - 30 * z * z + 3),      # degree 4
        0.37 * (x * x - y * y) * (7 * z * z - 1),
        0.73 * x * y * (7 * z * z - 1),
    ], axis=1)


N_BASIS = 11
_SMOOTH_BASIS = range(0, 5)   # degree-2 terms only
_BUMPY_BASIS = range(5, 11)   # degree-3/4 terms


@dataclass
class ShapeParams:
    axes: tuple           # ellipsoid semi-axes
    amps: tuple           # one amplitude per basis function
    label: int            # 0 = smooth regime, 1 = bumpy regime

    def __post_init__(self):
        self.axes = tuple(float(a) for a in self.axes)
        self.amps = tuple(float(a) for a in self.amps)
        if len(self.axes) != 3 or any(a <= 0 for a in self.axes):
            raise ContractViolation(f"degenerate axes {self.axes}")
        if len(self.amps) != N_BASIS:
            raise ContractViolation(f"need {N_BASIS} amplitudes, got {len(self.amps)}")


@dataclass
class SyntheticSample:
    image: np.ndarray      # (S, S) float32 in [0, 1]
    dense: np.ndarray      # (N_h, 3) float32, unit-sphere normalized
    sparse: np.ndarray     # (N_1, 3) float32, fps subset of dense
    params: ShapeParams
    label: int
    seed: int


def radius_function(dirs, params: ShapeParams):
    """Surface radius along unit directions: ellipsoid times (1 + bumps)."""
    d = np.asarray(dirs, dtype=np.float64)
    a = np.asarray(params.axes)
    ellip = 1.0 / np.sqrt((d ** 2 / a ** 2).sum(axis=1))
    bump = _basis(d) @ np.asarray(params.amps)
    return ellip * (1.0 + bump)


def _area_weight(dirs, params, delta=1e-4):
    """dA/dOmega for the radial surface: r^2 sqrt(1 + |grad_s ln r|^2)."""
    d = np.asarray(dirs, dtype=np.float64)
    helper = np.where(np.abs(d[:, 2:3]) < 0.9,
                      np.array([[0.0, 0.0, 1.0]]),
                      np.array([[1.0, 0.0, 0.0]]))
    u = np.cross(d, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(d, u)
    r = radius_function(d, params)
    g2 = np.zeros(len(d))
    for t in (u, v):
        dp = d + delta * t
        dp /= np.linalg.norm(dp, axis=1, keepdims=True)
        dm = d - delta * t
        dm /= np.linalg.norm(dm, axis=1, keepdims=True)
        g = (np.log(radius_function(dp, params)) -
             np.log(radius_function(dm, params))) / (2 * delta)
        g2 += g * g
    return r * r * np.sqrt(1.0 + g2)


def _uniform_directions(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_surface(rng, params, n):
    """Area-uniform surface points via rejection on the area element."""
    probe = _uniform_directions(np.random.default_rng(0), 2048)
    w_max = _area_weight(probe, params).max() * 1.1
    out = []
    have = 0
    while have < n:
        cand = _uniform_directions(rng, max(4 * (n - have), 1024))
        w = _area_weight(cand, params)
        accept = rng.uniform(size=len(cand)) * w_max < w
        picked = cand[accept]
        out.append(picked)
        have += len(picked)
    dirs = np.concatenate(out)[:n]
    return dirs * radius_function(dirs, params)[:, None]


def _draw_params(rng, label):
    axes = rng.uniform(0.72, 1.0, size=3)
    axes = tuple(axes / axes.max())
    amps = np.zeros(N_BASIS)
    if label == 0:
        idx = list(_SMOOTH_BASIS)
        amps[idx] = rng.uniform(-0.10, 0.10, size=len(idx))
    else:
        idx = list(_SMOOTH_BASIS)
        amps[idx] = rng.uniform(-0.05, 0.05, size=len(idx))
        idx = list(_BUMPY_BASIS)
        amps[idx] = rng.uniform(-0.16, 0.16, size=len(idx))
    # keep the radius safely positive
    total = np.abs(amps).sum()
    if total > 0.5:
        amps *= 0.5 / total
    return ShapeParams(axes=axes, amps=tuple(amps), label=int(label))


def render_slice(params: ShapeParams, scale, size=64, supersample=4, extent=1.1):
    """Anti-aliased filled silhouette of the z=0 cross-section.

    The boundary is the surface radius in the equatorial plane divided by
    the cloud's normalization scale, drawn in a fixed [-extent, extent]^2
    frame so images are comparable across samples.
    """
    s = size * supersample
    coords = (np.arange(s) + 0.5) / s * 2 * extent - extent
    xs = coords[None, :].repeat(s, axis=0)
    ys = (-coords)[:, None].repeat(s, axis=1)   # +y points up in the image
    rho = np.hypot(xs, ys)
    phi = np.arctan2(ys, xs)
    dirs = np.stack([np.cos(phi.ravel()), np.sin(phi.ravel()),
                     np.zeros(s * s)], axis=1)
    boundary = radius_function(dirs, params).reshape(s, s) / scale
    inside = (rho <= boundary).astype(np.float64)
    img = inside.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return img.astype(np.float32)


def synth_shape(seed, params=None, label=None, dense_n=1024, sparse_n=256,
                image_size=64):
    """Deterministically build one synthetic sample from an integer seed."""
    seed = int(seed)
    rng = np.random.default_rng(seed)
    if label is None:
        label = seed % 2
    if params is None:
        params = _draw_params(rng, label)
    pts = _sample_surface(rng, params, dense_n)
    scale = float(np.linalg.norm(pts, axis=1).max())
    dense = (pts / scale).astype(np.float32)
    sparse = fps(dense, sparse_n).astype(np.float32)
    image = render_slice(params, scale, size=image_size)
    return SyntheticSample(image=image, dense=dense, sparse=sparse,
                           params=params, label=int(params.label), seed=seed)


# -- cloud utilities --------------------------------------------------------------

def fps(pc, m):
    """Farthest-point sampling started at row 0; returns the chosen rows."""
    pc = np.asarray(pc, dtype=np.float64)
    n = len(pc)
    if not 1 <= m <= n:
        raise ContractViolation(f"fps: need 1 <= m <= {n}, got {m}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = 0
    d = ((pc - pc[0]) ** 2).sum(axis=1)
    for k in range(1, m):
        i = int(np.argmax(d))
        chosen[k] = i
        d = np.minimum(d, ((pc - pc[i]) ** 2).sum(axis=1))
    return pc[chosen]


@dataclass
class NormalizeTransform:
    center: np.ndarray
    scale: float

    def invert(self, pc):
        return np.asarray(pc) * self.scale + self.center


def normalize_unit_sphere(pc):
    """Shift the centroid to the origin and scale the max radius to 1."""
    pc = np.asarray(pc, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[1] != 3 or len(pc) < 1:
        raise ContractViolation(f"normalize: expects (N, 3), got {pc.shape}")
    center = pc.mean(axis=0)
    shifted = pc - center
    radius = float(np.linalg.norm(shifted, axis=1).max())
    scale = radius if radius > 0 else 1.0
    return shifted / scale, NormalizeTransform(center=center, scale=scale)


def random_subsample(pc, n, seed):
    """Fixed-seed random subset of n rows (without replacement)."""
    pc = np.asarray(pc)
    if not 1 <= n <= len(pc):
        raise ContractViolation(f"subsample: need 1 <= n <= {len(pc)}, got {n}")
    idx = np.random.default_rng(int(seed)).choice(len(pc), size=n, replace=False)
    return pc[idx]


# -- on-disk dataset ---------------------------------------------------------------

def make_dataset(out_dir, n_train, n_test, seed, dense_n=1024, sparse_n=256,
                 image_size=64):
    """Write samples/<id>/{slice.pgm, dense.ply, sparse.ply, meta.json}."""
    root = Path(out_dir)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(int(seed))
    sample_seeds = master.integers(0, 2 ** 62, size=n_train + n_test)
    ids = [f"train_{i:04d}" for i in range(n_train)] + \
          [f"test_{i:04d}" for i in range(n_test)]
    for i, sid in enumerate(ids):
        sample = synth_shape(sample_seeds[i], label=i % 2, dense_n=dense_n,
                             sparse_n=sparse_n, image_size=image_size)
        d = root / "samples" / sid
        d.mkdir(exist_ok=True)
        write_pgm(d / "slice.pgm", sample.image)
        write_cloud(d / "dense.ply", Cloud(points=sample.dense))
        write_cloud(d / "sparse.ply", Cloud(points=sample.sparse))
        meta = {
            "seed": int(sample.seed),
            "label": sample.label,
            "split": sid.split("_")[0],
            "shape": asdict(sample.params),
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=1))
    return root


def load_dataset(root, split=None):
    """Load all samples (optionally one split) into memory."""
    root = Path(root)
    records = []
    sample_dir = root / "samples"
    if not sample_dir.is_dir():
        raise ContractViolation(f"no samples/ directory under {root}")
    for d in sorted(sample_dir.iterdir()):
        if not d.is_dir():
            continue
        meta = json.loads((d / "meta.json").read_text())
        if split is not None and meta.get("split") != split:
            continue
        records.append({
            "id": d.name,
            "image": read_pgm(d / "slice.pgm"),
            "dense": read_cloud(d / "dense.ply").points,
            "sparse": read_cloud(d / "sparse.ply").points,
            "label": int(meta["label"]),
            "seed": int(meta["seed"]),
        })
    if not records:
        raise ContractViolation(f"dataset at {root} is empty")
    return records

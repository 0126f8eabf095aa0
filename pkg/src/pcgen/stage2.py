"""Stack-structured upsampling generator: N x 3 cloud -> rN x 3 cloud.

Three steps, all per point:

  1. feature extraction — shared point transforms with dense
     (concatenative) skip connections plus a global max-pooled context
     vector appended to every point;
  2. feature expansion — a per-point stack of graph-convolution style
     blocks (loop transform + a link back to the point's own input row)
     widening C features to r*C, then a shuffle that turns each point's
     r feature blocks into r rows;
  3. coordinate reconstruction — two per-point linear stages.

Nothing after the extractor mixes information across points, so the
output row ``n*r + s`` depends only on input point ``n`` (plus the global
context vector).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation


@dataclass
class UpsampleConfig:
    ratio: int = 4
    feature_width: int = 64
    block_widths: tuple = (24, 24, 24)   # dense extractor blocks
    expand_blocks: int = 2               # per-point stack depth before widening
    support: int = 10                    # loop-transform hidden width
    recon_hidden: int = 32

    def __post_init__(self):
        if self.ratio < 2:
            raise ContractViolation(f"upsample ratio must be >= 2, got {self.ratio}")
        if self.feature_width < 8:
            raise ContractViolation(
                f"feature width must be >= 8, got {self.feature_width}")


def shuffle(feats, ratio):
    """Rearrange (N, r*C) features into (r*N, C) rows.

    out[n*r + s, c] = feats[n, s*C + c]; with row-major storage this is a
    pure reshape, hence trivially bijective on elements.
    """
    cols = feats.shape[1]
    if cols % ratio != 0:
        raise ContractViolation(
            f"shuffle: {cols} columns not divisible by ratio {ratio}"
        )
    c = cols // ratio
    return T.reshape(feats, (feats.shape[0] * ratio, c))


def unshuffle(feats, ratio):
    """Inverse of ``shuffle``."""
    rows = feats.shape[0]
    if rows % ratio != 0:
        raise ContractViolation(
            f"unshuffle: {rows} rows not divisible by ratio {ratio}"
        )
    return T.reshape(feats, (rows // ratio, feats.shape[1] * ratio))


class Stage2Generator:
    """Upsamples clouds by an integer ratio with shared per-point weights."""

    def __init__(self, rng, config: UpsampleConfig, dtype=np.float32,
                 leaky_slope=0.2):
        self.config = config
        self.dtype = dtype
        self.leaky_slope = leaky_slope
        self.params = {}

        def par(name, shape, fan_in, terms=1):
            # variance split across the terms summed in a block
            std = np.sqrt(2.0 / (fan_in * terms))
            self.params[name] = T.as_parameter(
                rng.normal(0.0, std, size=shape), dtype=dtype)

        def bias(name, width):
            self.params[name] = T.as_parameter(np.zeros(width), dtype=dtype)

        width = 3
        for i, w in enumerate(config.block_widths):
            par(f"ext/block{i}/W", (width, w), width)
            bias(f"ext/block{i}/b", w)
            width += w  # dense concatenation grows the running width
        merged = 2 * width  # point features plus the pooled context
        par("ext/merge/W", (merged, config.feature_width), merged)
        bias("ext/merge/b", config.feature_width)

        C, K, r = config.feature_width, config.support, config.ratio
        for i in range(config.expand_blocks):
            par(f"up/block{i}/loop/Wa", (C, K), C)
            par(f"up/block{i}/loop/Wb", (K, C), K, terms=2)
            par(f"up/block{i}/U", (C, C), C, terms=2)
            bias(f"up/block{i}/b", C)
        par("up/widen/loop/Wa", (C, K), C)
        par("up/widen/loop/Wb", (K, r * C), K, terms=2)
        par("up/widen/U", (C, r * C), C, terms=2)
        bias("up/widen/b", r * C)

        par("recon/fc0/W", (C, config.recon_hidden), C)
        bias("recon/fc0/b", config.recon_hidden)
        par("recon/fc1/W", (config.recon_hidden, 3), config.recon_hidden)
        bias("recon/fc1/b", 3)

    # -- steps -----------------------------------------------------------------

    def extract_features(self, pc, batch=1):
        """(batch*N, 3) points -> (batch*N, C) features."""
        x = pc if isinstance(pc, T.Tensor) else T.Tensor(np.asarray(pc), dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ContractViolation(f"extract_features: expects (N, 3), got {x.shape}")
        rows = x.shape[0]
        if rows < batch or rows % batch != 0:
            raise ContractViolation(
                f"extract_features: {rows} rows not divisible by batch {batch}")
        n = rows // batch
        feats = x
        for i in range(len(self.config.block_widths)):
            h = T.leaky_relu(
                T.add(T.matmul(feats, self.params[f"ext/block{i}/W"]),
                      self.params[f"ext/block{i}/b"]),
                self.leaky_slope)
            feats = T.concat([feats, h], axis=1)
        # global context: per-sample max over points, broadcast back to rows
        per_sample = T.reshape(feats, (batch, n, feats.shape[1]))
        context = T.reduce_max(per_sample, axis=1)
        spread = T.gather_rows(context, np.repeat(np.arange(batch), n))
        merged = T.concat([feats, spread], axis=1)
        return T.leaky_relu(
            T.add(T.matmul(merged, self.params["ext/merge/W"]),
                  self.params["ext/merge/b"]),
            self.leaky_slope)

    def _stack_block(self, h, origin, name, activate=True):
        loop = T.matmul(T.matmul(h, self.params[f"{name}/loop/Wa"]),
                        self.params[f"{name}/loop/Wb"])
        link = T.matmul(origin, self.params[f"{name}/U"])
        out = T.add(T.add(loop, link), self.params[f"{name}/b"])
        return T.leaky_relu(out, self.leaky_slope) if activate else out

    def upsample_features(self, feats):
        """(N, C) -> (r*N, C) via widening to (N, r*C) and shuffling."""
        C = self.config.feature_width
        if feats.shape[1] != C:
            raise ContractViolation(
                f"upsample_features: expects width {C}, got {feats.shape[1]}")
        h = feats
        for i in range(self.config.expand_blocks):
            h = self._stack_block(h, feats, f"up/block{i}")
        wide = self._stack_block(h, feats, "up/widen", activate=False)
        return shuffle(wide, self.config.ratio)

    def reconstruct_coords(self, feats):
        """(M, C) -> (M, 3), two per-point linear stages."""
        h = T.leaky_relu(
            T.add(T.matmul(feats, self.params["recon/fc0/W"]),
                  self.params["recon/fc0/b"]),
            self.leaky_slope)
        return T.add(T.matmul(h, self.params["recon/fc1/W"]),
                     self.params["recon/fc1/b"])

    # -- entry points ------------------------------------------------------------

    def upsample(self, pc, batch=1):
        """(batch*N, 3) -> (batch*N*r, 3); N must be at least 8."""
        x = pc if isinstance(pc, T.Tensor) else T.Tensor(np.asarray(pc), dtype=self.dtype)
        if x.shape[0] // max(batch, 1) < 8:
            raise ContractViolation(
                f"upsample: needs >= 8 points per sample, got {x.shape[0]}"
                f" rows for batch {batch}")
        feats = self.extract_features(x, batch=batch)
        up = self.upsample_features(feats)
        return self.reconstruct_coords(up)

    def upsample_np(self, pc, batch=1):
        with T.no_grad():
            return self.upsample(pc, batch=batch).data.copy()

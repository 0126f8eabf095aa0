"""Residual convolutional image encoder producing a 96-d latent code.

Backbone: stride-2 stem, four residual stages of two 3x3 convolutions at
widths (16, 32, 64, 128), stride-2 transition convs between stages, global
average pooling, and two linear heads (mean and log-std).  The
parameter-free channel attention is applied after the residual blocks of
the two middle stages.

Convolutions run as gather + matmul over precomputed patch-index tables;
out-of-bounds taps point at a shared zero row, which doubles as the
padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import apply_attention
from .errors import ContractViolation

Z_DIM = 96  # latent dimensionality is fixed by the architecture contract


@dataclass
class LatentCode:
    """Encoder output for one image: mean, log-std and the drawn sample."""

    mu: np.ndarray        # (96,)
    log_std: np.ndarray   # (96,)
    z: np.ndarray         # (96,) = mu + exp(log_std) * eps
    eps: np.ndarray       # (96,) recorded noise draw


def _conv_tables(height, width, batch, stride):
    """Patch index table for a 3x3 conv with padding 1.

    Returns (idx, rev_plan, out_h, out_w): ``idx`` indexes rows of the
    flattened (batch*H*W + 1) input where the last row is the zero pad.
    """
    out_h = (height + 2 - 3) // stride + 1
    out_w = (width + 2 - 3) // stride + 1
    rows = batch * height * width
    oi = np.arange(out_h) * stride - 1
    oj = np.arange(out_w) * stride - 1
    src_i = oi[:, None] + np.arange(3)[None, :]          # (out_h, 3)
    src_j = oj[:, None] + np.arange(3)[None, :]          # (out_w, 3)
    valid_i = (src_i >= 0) & (src_i < height)
    valid_j = (src_j >= 0) & (src_j < width)
    # (out_h, out_w, 3, 3)
    flat = src_i[:, None, :, None] * width + src_j[None, :, None, :]
    valid = valid_i[:, None, :, None] & valid_j[None, :, None, :]
    flat = np.where(valid, flat, -1)
    per_image = flat.reshape(-1)
    idx = np.concatenate([
        np.where(per_image >= 0, per_image + b * height * width, rows)
        for b in range(batch)
    ])
    rev_plan = T.make_reverse_plan(idx, rows + 1, drop_rows=(rows,))
    return idx.astype(np.int64), rev_plan, out_h, out_w


class _TableCache(dict):
    def get_tables(self, key):
        if key not in self:
            self[key] = _conv_tables(*key)
        return self[key]


_TABLES = _TableCache()


def conv3x3(x_rows, table, weight, bias):
    """3x3 convolution over flattened pixels.

    ``x_rows``: (batch*H*W, C_in); ``table`` from ``_conv_tables``;
    ``weight``: (9*C_in, C_out); ``bias``: (C_out,).
    """
    idx, rev_plan, out_h, out_w = table
    cin = x_rows.shape[1]
    padded = T.concat([x_rows, T.Tensor(np.zeros((1, cin), dtype=x_rows.dtype))])
    patches = T.gather_rows(padded, idx, rev_plan=rev_plan)
    patches = T.reshape(patches, (idx.size // 9, 9 * cin))
    return T.add(T.matmul(patches, weight), bias)


class ImageEncoder:
    """Image -> (mu, log_std) over the 96-d latent space."""

    STAGE_WIDTHS = (16, 32, 64, 128)

    def __init__(self, rng, image_size=64, attn_lam=1e-4, dtype=np.float32):
        if image_size % 16 != 0:
            raise ContractViolation(
                f"image size {image_size} must be divisible by 16"
            )
        self.image_size = image_size
        self.attn_lam = float(attn_lam)
        self.dtype = dtype
        self.params = {}
        w = self.STAGE_WIDTHS

        def conv_param(name, cin, cout):
            std = np.sqrt(2.0 / (9 * cin))
            self.params[f"{name}/W"] = T.as_parameter(
                rng.normal(0.0, std, size=(9 * cin, cout)), dtype=dtype)
            self.params[f"{name}/b"] = T.as_parameter(
                np.zeros(cout), dtype=dtype)

        conv_param("stem", 1, w[0])
        for s in range(4):
            conv_param(f"stage{s}/conv0", w[s], w[s])
            conv_param(f"stage{s}/conv1", w[s], w[s])
            if s < 3:
                conv_param(f"down{s}", w[s], w[s + 1])
        for head in ("mu", "log_std"):
            # small head init keeps the initial latent close to N(0, I)
            self.params[f"head_{head}/W"] = T.as_parameter(
                rng.normal(0.0, 0.01, size=(w[-1], Z_DIM)), dtype=dtype)
            self.params[f"head_{head}/b"] = T.as_parameter(
                np.zeros(Z_DIM), dtype=dtype)

    def _conv(self, x, name, table):
        return conv3x3(x, table, self.params[f"{name}/W"], self.params[f"{name}/b"])

    def _res_block(self, x, stage, table):
        h = T.leaky_relu(self._conv(x, f"stage{stage}/conv0", table))
        h = self._conv(h, f"stage{stage}/conv1", table)
        return T.leaky_relu(T.add(x, h))

    def _attend(self, x, batch, hw):
        # channel statistics are per image, so split the batch rows
        parts = []
        for b in range(batch):
            fm = T.narrow(x, 0, b * hw, hw)
            parts.append(apply_attention(fm, self.attn_lam))
        return T.concat(parts, axis=0) if batch > 1 else parts[0]

    def forward(self, images):
        """Batched forward pass.

        ``images``: numpy (B, H, W, 1) with values in [0, 1], or an
        equivalent Tensor.  Returns (mu, log_std) Tensors of shape (B, 96).
        """
        arr = images.data if isinstance(images, T.Tensor) else np.asarray(images)
        if arr.ndim != 4 or arr.shape[3] != 1:
            raise ContractViolation(f"encoder expects (B, H, W, 1), got {arr.shape}")
        batch, h, w = arr.shape[0], arr.shape[1], arr.shape[2]
        if (h, w) != (self.image_size, self.image_size):
            raise ContractViolation(
                f"encoder configured for {self.image_size}x{self.image_size} "
                f"images, got {h}x{w}"
            )
        if isinstance(images, T.Tensor):
            x = T.reshape(images, (batch * h * w, 1))
        else:
            x = T.Tensor(arr.reshape(batch * h * w, 1), dtype=self.dtype)

        size = h
        table = _TABLES.get_tables((size, size, batch, 2))
        x = T.leaky_relu(conv3x3(x, table, self.params["stem/W"], self.params["stem/b"]))
        size //= 2

        for s in range(4):
            table = _TABLES.get_tables((size, size, batch, 1))
            x = self._res_block(x, s, table)
            if s in (1, 2):
                x = self._attend(x, batch, size * size)
            if s < 3:
                table = _TABLES.get_tables((size, size, batch, 2))
                x = T.leaky_relu(self._conv(x, f"down{s}", table))
                size //= 2

        pooled = T.reduce_mean(
            T.reshape(x, (batch, size * size, self.STAGE_WIDTHS[-1])), axis=1)
        mu = T.add(T.matmul(pooled, self.params["head_mu/W"]),
                   self.params["head_mu/b"])
        log_std = T.add(T.matmul(pooled, self.params["head_log_std/W"]),
                        self.params["head_log_std/b"])
        return mu, log_std

    def encode(self, image, rng):
        """Encode one (H, W, 1) image and draw z = mu + exp(log_std) * eps."""
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        with T.no_grad():
            mu, log_std = self.forward(arr[None])
        mu = mu.data[0].astype(np.float64)
        log_std = log_std.data[0].astype(np.float64)
        eps = rng.standard_normal(Z_DIM)
        z = mu + np.exp(log_std) * eps
        return LatentCode(mu=mu, log_std=log_std, z=z, eps=eps)

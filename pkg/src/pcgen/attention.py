"""Parameter-free channel attention from per-channel activation statistics.

Each element of a feature map gets a saliency score derived from the
minimum of a linear-separability energy; the score needs only the channel
mean and variance, so the whole mechanism is a fixed numerical transform
with no learned weights.  Feature maps are handled as ``(H*W, C)``
matrices: rows are spatial positions, columns are channels.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractViolation


def channel_stats(fm):
    """Per-channel mean and population variance over spatial positions.

    ``fm`` is a Tensor of shape (H*W, C); returns two Tensors of shape (C,).
    """
    if fm.ndim != 2 or fm.shape[0] < 1:
        raise ContractViolation(f"channel_stats: expects non-empty (HW, C), got {fm.shape}")
    mu = T.reduce_mean(fm, axis=0)
    centered = T.sub(fm, mu)
    var = T.reduce_mean(T.square(centered), axis=0)
    return mu, var


def attention_energy(t, w_t, b_t, others, lam):
    """Energy of one element under a candidate linear transform (w_t, b_t).

    The element should map near +1 while its channel peers map near -1:

        mean_i (-1 - (w_t * t_i + b_t))^2 + (1 - (w_t * t + b_t))^2 + lam * w_t^2

    ``others`` are the peer elements of the channel (everything but ``t``).
    """
    others = np.asarray(others, dtype=np.float64)
    if others.size == 0:
        raise ContractViolation("attention_energy: peer set must be non-empty")
    if lam <= 0:
        raise ContractViolation("attention_energy: lam must be positive")
    peer_term = float(np.mean((-1.0 - (w_t * others + b_t)) ** 2))
    self_term = (1.0 - (w_t * t + b_t)) ** 2
    return peer_term + self_term + lam * w_t * w_t


def attention_scores(fm, lam):
    """Saliency score per element: large when the element stands out.

    score = ((t - mu_C)^2 + 2 (var_C + lam)) / (4 (var_C + lam))

    Always >= 0.5, with equality exactly at the channel mean.
    """
    if lam <= 0:
        raise ContractViolation("attention_scores: lam must be positive")
    mu, var = channel_stats(fm)
    reg = T.add(var, float(lam))
    centered_sq = T.square(T.sub(fm, mu))
    numer = T.add(centered_sq, T.mul(reg, 2.0))
    denom = T.mul(reg, 4.0)
    return T.div(numer, denom)


def inverse_attention_scores(fm, lam):
    """Reciprocal form of the score (the minimized energy value itself).

    Kept for the algebraic identity attention * inverse_attention == 1,
    which tests rely on; the forward path uses ``attention_scores``.
    """
    if lam <= 0:
        raise ContractViolation("inverse_attention_scores: lam must be positive")
    mu, var = channel_stats(fm)
    reg = T.add(var, float(lam))
    centered_sq = T.square(T.sub(fm, mu))
    numer = T.mul(reg, 4.0)
    denom = T.add(centered_sq, T.mul(reg, 2.0))
    return T.div(numer, denom)


def apply_attention(fm, lam):
    """Reweight a (H*W, C) feature map by per-channel softmax of the scores.

    The softmax runs over each channel's spatial positions, so the weights
    of one channel sum to 1 and the output keeps the input shape.
    """
    scores = attention_scores(fm, lam)
    weights = T.softmax(scores, axis=0)
    return T.mul(weights, fm)

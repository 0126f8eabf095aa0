"""Training objectives: adversarial terms, KL, and differentiable CD/EMD.

The geometric losses freeze their matching (nearest neighbours for the
Chamfer loss, the auction bijection for the EMD loss) per evaluation and
differentiate through the matched pairs, which is the standard
envelope-style gradient for both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from . import tensor as T
from .errors import ContractViolation


@dataclass
class LossWeights:
    lam_gp: float = 10.0
    w_adv: float = 0.1        # adversarial term in the upsampler objective
    w_kl: float = 0.01
    w_cd: float = 100.0
    w_emd: float = 10.0
    stage1_cd: float = 100.0  # Chamfer weight in the sparse-stage objective

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not np.isfinite(v) or v < 0:
                raise ContractViolation(f"loss weight {name} must be >= 0, got {v}")


def loss_generator_adv(fake_scores):
    """Generator adversarial loss: negative mean critic score on fakes."""
    if fake_scores.size < 1:
        raise ContractViolation("loss_generator_adv: empty score batch")
    return T.neg(T.reduce_mean(fake_scores))


def loss_critic(fake_scores, real_scores, gp_term):
    """Critic loss: mean(fake) - mean(real) + gradient penalty."""
    if fake_scores.size < 1 or real_scores.size < 1:
        raise ContractViolation("loss_critic: empty score batch")
    wass = T.sub(T.reduce_mean(fake_scores), T.reduce_mean(real_scores))
    if gp_term is None:
        return wass
    gp = gp_term if isinstance(gp_term, T.Tensor) else T.Tensor(
        np.asarray(gp_term), dtype=wass.dtype)
    return T.add(wass, gp)


def loss_kl(mu, log_std):
    """KL divergence of N(mu, sigma^2) from N(0, I), summed over dimensions.

    For a (B, D) batch the per-sample divergences are averaged.
    """
    mu = mu if isinstance(mu, T.Tensor) else T.Tensor(np.asarray(mu))
    log_std = log_std if isinstance(log_std, T.Tensor) else T.Tensor(np.asarray(log_std))
    var = T.exp(T.mul(log_std, 2.0))
    per_dim = T.mul(T.sub(T.add(T.square(mu), var),
                          T.add(T.mul(log_std, 2.0), 1.0)), 0.5)
    if per_dim.ndim == 1:
        return T.reduce_sum(per_dim)
    return T.reduce_mean(T.reduce_sum(per_dim, axis=1))


def chamfer_loss(pred, target):
    """Differentiable sum-form Chamfer distance between two (N, 3) clouds.

    ``pred`` is a Tensor in the graph; ``target`` may be a constant array.
    Nearest-neighbour indices are found on the current values and treated
    as constant for the gradient.
    """
    target_np = target.data if isinstance(target, T.Tensor) else np.asarray(target)
    target_t = target if isinstance(target, T.Tensor) else T.Tensor(
        target_np, dtype=pred.dtype)
    idx_pt, _ = metrics.nearest_neighbors(pred.data, target_np)
    idx_tp, _ = metrics.nearest_neighbors(target_np, pred.data)
    fwd = T.reduce_sum(T.square(T.sub(pred, T.gather_rows(target_t, idx_pt))))
    bwd = T.reduce_sum(T.square(T.sub(T.gather_rows(pred, idx_tp), target_t)))
    return T.add(fwd, bwd)


def _nn_index_fast(query, ref):
    """Nearest-neighbour indices in float32 (plenty for a frozen matching)."""
    q = np.asarray(query, dtype=np.float32)
    r = np.asarray(ref, dtype=np.float32)
    d2 = (q ** 2).sum(axis=1)[:, None] + (r ** 2).sum(axis=1)[None, :] - 2.0 * (q @ r.T)
    return np.argmin(d2, axis=1)


def chamfer_loss_batch(pred, target, batch):
    """Mean sum-form Chamfer loss over a batch stored as stacked rows.

    ``pred``: Tensor (batch*N, 3); ``target``: array (batch*M, 3).  The
    matching never crosses sample boundaries.
    """
    target_np = np.asarray(target)
    n = pred.shape[0] // batch
    m = target_np.shape[0] // batch
    idx_pt = np.empty(pred.shape[0], dtype=np.int64)
    idx_tp = np.empty(target_np.shape[0], dtype=np.int64)
    for b in range(batch):
        pred_b = pred.data[b * n:(b + 1) * n]
        targ_b = target_np[b * m:(b + 1) * m]
        idx_pt[b * n:(b + 1) * n] = _nn_index_fast(pred_b, targ_b) + b * m
        idx_tp[b * m:(b + 1) * m] = _nn_index_fast(targ_b, pred_b) + b * n
    target_t = T.Tensor(target_np, dtype=pred.dtype)
    fwd = T.reduce_sum(T.square(T.sub(pred, T.gather_rows(target_t, idx_pt))))
    bwd = T.reduce_sum(T.square(T.sub(T.gather_rows(pred, idx_tp), target_t)))
    return T.mul(T.add(fwd, bwd), 1.0 / batch)


def emd_loss(pred, target, rel_accuracy=0.05):
    """Differentiable EMD between equal-size clouds via a frozen bijection.

    The matching comes from the auction solver on current values; the loss
    is the summed Euclidean length of the matched pairs.
    """
    target_np = target.data if isinstance(target, T.Tensor) else np.asarray(target)
    if pred.shape[0] != target_np.shape[0]:
        raise ContractViolation(
            f"emd_loss: sizes differ, {pred.shape[0]} vs {target_np.shape[0]}")
    cost = metrics.pairwise_distances(pred.data, target_np)
    perm = metrics.auction_assign(cost, rel_accuracy=rel_accuracy).permutation
    target_t = T.Tensor(target_np[perm], dtype=pred.dtype)
    return T.reduce_sum(T.l2_norm(T.sub(pred, target_t), axis=1))


def loss_stage1(adv, cd, weights: LossWeights):
    """Sparse-stage generator objective: adversarial plus weighted Chamfer."""
    return T.add(adv, T.mul(cd, weights.stage1_cd))


def loss_stage2(adv, kl, cd, emd, weights: LossWeights):
    """Upsampler objective: weighted sum of adversarial, KL, CD, EMD terms."""
    def term(x, w):
        t = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))
        return T.mul(t, float(w))

    return T.add(T.add(term(adv, weights.w_adv), term(kl, weights.w_kl)),
                 T.add(term(cd, weights.w_cd), term(emd, weights.w_emd)))

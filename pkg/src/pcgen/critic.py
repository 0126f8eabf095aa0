"""Permutation-invariant point-cloud critics with WGAN-GP penalty.

Shared per-point transform (3 -> 64 -> 128 -> 256, leaky), max-pool over
points, then a 256 -> 128 -> 1 head with a linear output.  The gradient
penalty differentiates the critic w.r.t. an interpolated cloud and pushes
the gradient norm toward 1; its graph stays differentiable so the penalty
trains the critic parameters.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractViolation

POINT_WIDTHS = (3, 64, 128, 256)
HEAD_WIDTHS = (256, 128, 1)


class Critic:
    """Scores clouds; higher means "more like the reference distribution"."""

    def __init__(self, rng, dtype=np.float32, leaky_slope=0.2):
        self.dtype = dtype
        self.leaky_slope = leaky_slope
        self.params = {}

        def par(name, shape, fan_in):
            std = np.sqrt(2.0 / fan_in)
            self.params[name] = T.as_parameter(
                rng.normal(0.0, std, size=shape), dtype=dtype)

        for i in range(len(POINT_WIDTHS) - 1):
            par(f"point{i}/W", (POINT_WIDTHS[i], POINT_WIDTHS[i + 1]), POINT_WIDTHS[i])
            self.params[f"point{i}/b"] = T.as_parameter(
                np.zeros(POINT_WIDTHS[i + 1]), dtype=dtype)
        for i in range(len(HEAD_WIDTHS) - 1):
            par(f"head{i}/W", (HEAD_WIDTHS[i], HEAD_WIDTHS[i + 1]), HEAD_WIDTHS[i])
            self.params[f"head{i}/b"] = T.as_parameter(
                np.zeros(HEAD_WIDTHS[i + 1]), dtype=dtype)

    def score_batch(self, pcs, batch=1):
        """(batch*N, 3) rows -> (batch,) scores."""
        x = pcs if isinstance(pcs, T.Tensor) else T.Tensor(np.asarray(pcs), dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ContractViolation(f"critic expects (N, 3) rows, got {x.shape}")
        rows = x.shape[0]
        if rows < batch or rows % batch != 0:
            raise ContractViolation(
                f"critic: {rows} rows not divisible by batch {batch}")
        n = rows // batch
        h = x
        for i in range(len(POINT_WIDTHS) - 1):
            h = T.leaky_relu(
                T.add(T.matmul(h, self.params[f"point{i}/W"]),
                      self.params[f"point{i}/b"]),
                self.leaky_slope)
        pooled = T.reduce_max(T.reshape(h, (batch, n, POINT_WIDTHS[-1])), axis=1)
        h = pooled
        for i in range(len(HEAD_WIDTHS) - 1):
            h = T.add(T.matmul(h, self.params[f"head{i}/W"]),
                      self.params[f"head{i}/b"])
            if i < len(HEAD_WIDTHS) - 2:
                h = T.leaky_relu(h, self.leaky_slope)
        return T.reshape(h, (batch,))

    def score(self, pc):
        """Single cloud (N, 3) -> scalar score Tensor of shape ()."""
        return T.reshape(self.score_batch(pc, batch=1), ())

    def score_np(self, pc):
        with T.no_grad():
            return self.score(pc).item()


def gradient_penalty(real, fake, critic, lam_gp, rng):
    """WGAN-GP term for one real/fake pair of equally sized clouds.

    Draws one uniform interpolation weight for the whole cloud, scores the
    interpolate, and returns lam_gp * (||grad||_2 - 1)^2 where the norm is
    taken jointly over all 3N coordinates.  ``critic`` is any callable
    mapping an (N, 3) Tensor to a scalar Tensor (a ``Critic.score`` bound
    method works).
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ContractViolation(
            f"gradient_penalty: shapes differ, {real.shape} vs {fake.shape}")
    if lam_gp < 0:
        raise ContractViolation("gradient_penalty: lam_gp must be >= 0")
    score_fn = critic.score if isinstance(critic, Critic) else critic
    dtype = critic.dtype if isinstance(critic, Critic) else np.float32

    e = float(rng.uniform())
    x_hat = T.Tensor((e * real + (1.0 - e) * fake).astype(dtype),
                     requires_grad=True)
    s = score_fn(x_hat)
    (g,) = T.grad_of(s, [x_hat], create_graph=True)
    norm = T.l2_norm(g)
    return T.mul(T.square(T.sub(norm, 1.0)), float(lam_gp))


def gradient_penalty_batch(real, fake, critic: Critic, lam_gp, rng, batch):
    """Mean penalty over a batch, one epsilon per cloud, single graph.

    ``real``/``fake``: numpy arrays of shape (batch*N, 3).
    """
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape != fake.shape:
        raise ContractViolation(
            f"gradient_penalty: shapes differ, {real.shape} vs {fake.shape}")
    n = real.shape[0] // batch
    e = rng.uniform(size=(batch, 1, 1))
    mix = e * real.reshape(batch, n, 3) + (1.0 - e) * fake.reshape(batch, n, 3)
    x_hat = T.Tensor(mix.reshape(batch * n, 3).astype(critic.dtype),
                     requires_grad=True)
    scores = critic.score_batch(x_hat, batch=batch)
    total = T.reduce_sum(scores)
    (g,) = T.grad_of(total, [x_hat], create_graph=True)
    norms = T.l2_norm(T.reshape(g, (batch, n * 3)), axis=1)
    return T.mul(T.reduce_mean(T.square(T.sub(norms, 1.0))), float(lam_gp))

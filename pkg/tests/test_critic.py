import itertools

import numpy as np
import pytest

from pcgen import tensor as T
from pcgen.critic import Critic, gradient_penalty, gradient_penalty_batch
from pcgen.errors import ContractViolation


def test_permutation_invariance_exhaustive(rng):
    critic = Critic(np.random.default_rng(0))
    pc = rng.normal(size=(4, 3)).astype(np.float32)
    base = critic.score_np(pc)
    for perm in itertools.permutations(range(4)):
        assert critic.score_np(pc[list(perm)]) == base


def test_permutation_invariance_random(rng):
    critic = Critic(np.random.default_rng(1))
    pc = rng.normal(size=(200, 3)).astype(np.float32)
    base = critic.score_np(pc)
    for _ in range(5):
        assert critic.score_np(pc[rng.permutation(200)]) == base


def test_zero_params_score_zero(rng):
    critic = Critic(np.random.default_rng(2))
    for p in critic.params.values():
        p.data[:] = 0.0
    assert critic.score_np(rng.normal(size=(30, 3)).astype(np.float32)) == 0.0


def test_duplicated_points_same_score(rng):
    critic = Critic(np.random.default_rng(3))
    pc = rng.normal(size=(25, 3)).astype(np.float32)
    assert critic.score_np(np.concatenate([pc, pc])) == critic.score_np(pc)


def test_unit_gradient_critic_zero_penalty(rng):
    n = 40

    def unit_critic(x):
        return T.mul(T.reduce_sum(x), 1.0 / np.sqrt(3 * n))

    pen = gradient_penalty(rng.normal(size=(n, 3)), rng.normal(size=(n, 3)),
                           unit_critic, 10.0, np.random.default_rng(0))
    assert abs(float(pen.data)) < 1e-6


def test_constant_critic_penalty_equals_lambda(rng):
    def const_critic(x):
        return T.mul(T.reduce_sum(x), 0.0)

    pen = gradient_penalty(rng.normal(size=(16, 3)), rng.normal(size=(16, 3)),
                           const_critic, 10.0, np.random.default_rng(0))
    assert float(pen.data) == pytest.approx(10.0, abs=1e-6)


def test_shape_mismatch_rejected(rng):
    critic = Critic(np.random.default_rng(4))
    with pytest.raises(ContractViolation):
        gradient_penalty(rng.normal(size=(8, 3)), rng.normal(size=(9, 3)),
                         critic, 10.0, np.random.default_rng(0))


def test_penalty_nonnegative_random(rng):
    critic = Critic(np.random.default_rng(5))
    for _ in range(5):
        pen = gradient_penalty(rng.normal(size=(12, 3)), rng.normal(size=(12, 3)),
                               critic, 10.0, np.random.default_rng(1))
        assert float(pen.data) >= 0.0


def test_interpolate_gradient_matches_finite_differences(rng):
    critic = Critic(np.random.default_rng(6), dtype=np.float64)
    x = rng.normal(size=(10, 3))
    xt = T.Tensor(x, requires_grad=True, dtype=np.float64)
    (g,) = T.grad_of(critic.score(xt), [xt])
    h = 1e-5
    fd = np.zeros_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up.reshape(-1)[i] += h
        dn.reshape(-1)[i] -= h
        with T.no_grad():
            hi = critic.score(T.Tensor(up, dtype=np.float64)).item()
            lo = critic.score(T.Tensor(dn, dtype=np.float64)).item()
        fd.reshape(-1)[i] = (hi - lo) / (2 * h)
    rel = np.abs(g.data - fd) / np.maximum(np.abs(fd), 1e-6)
    assert rel.max() < 1e-3
    # norm of the analytic gradient matches the norm of the numeric one
    assert np.linalg.norm(g.data) == pytest.approx(np.linalg.norm(fd), rel=1e-3)


def test_penalty_trains_critic_parameters(rng):
    critic = Critic(np.random.default_rng(7))
    pen = gradient_penalty_batch(rng.normal(size=(2 * 50, 3)),
                                 rng.normal(size=(2 * 50, 3)),
                                 critic, 10.0, np.random.default_rng(2), batch=2)
    pen.backward()
    # every weight matrix takes part in the interpolate gradient; biases
    # drop out of d(score)/d(input), so only the weights receive gradient
    for name, p in critic.params.items():
        if name.endswith("/W"):
            assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_batched_penalty_matches_per_pair(rng):
    critic = Critic(np.random.default_rng(8))
    real = rng.normal(size=(3 * 20, 3)).astype(np.float32)
    fake = rng.normal(size=(3 * 20, 3)).astype(np.float32)
    batched = gradient_penalty_batch(real, fake, critic, 10.0,
                                     np.random.default_rng(11), batch=3)
    rng_pairs = np.random.default_rng(11)
    per_pair = []
    for b in range(3):
        pen = gradient_penalty(real[b * 20:(b + 1) * 20],
                               fake[b * 20:(b + 1) * 20],
                               critic, 10.0, rng_pairs)
        per_pair.append(float(pen.data))
    assert float(batched.data) == pytest.approx(np.mean(per_pair), rel=1e-4)

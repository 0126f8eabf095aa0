import numpy as np
import pytest

from pcgen import tensor as T
from pcgen.attention import (apply_attention, attention_energy,
                             attention_scores, channel_stats,
                             inverse_attention_scores)
from pcgen.errors import ContractViolation

LAM = 1e-4


def fm(arr, dtype=np.float32):
    return T.Tensor(np.asarray(arr), dtype=dtype)


def minimize_energy(t_val, others, lam):
    """Independent numeric minimizer: coarse grid then gradient descent."""
    others = np.asarray(others, dtype=np.float64)

    def grad(w, b):
        # d/dw, d/db of the energy, derived numerically
        h = 1e-6
        e0m = attention_energy(t_val, w - h, b, others, lam)
        e0p = attention_energy(t_val, w + h, b, others, lam)
        e1m = attention_energy(t_val, w, b - h, others, lam)
        e1p = attention_energy(t_val, w, b + h, others, lam)
        return (e0p - e0m) / (2 * h), (e1p - e1m) / (2 * h)

    best = (np.inf, 0.0, 0.0)
    for w in np.linspace(-3, 3, 25):
        for b in np.linspace(-3, 3, 25):
            e = attention_energy(t_val, w, b, others, lam)
            if e < best[0]:
                best = (e, w, b)
    _, w, b = best
    lr = 0.05
    for _ in range(4000):
        gw, gb = grad(w, b)
        w -= lr * gw
        b -= lr * gb
    return attention_energy(t_val, w, b, others, lam)


class TestChannelStats:
    def test_constant_channel(self):
        mu, var = channel_stats(fm(np.full((6, 2), 3.5)))
        assert np.allclose(mu.data, 3.5)
        assert np.allclose(var.data, 0.0)

    def test_two_values(self):
        mu, var = channel_stats(fm([[0.0], [2.0]]))
        assert mu.data[0] == pytest.approx(1.0)
        assert var.data[0] == pytest.approx(1.0)  # population variance

    def test_matches_two_pass_oracle(self, rng):
        x = rng.normal(size=(256, 1))
        mu, var = channel_stats(fm(x, dtype=np.float64))
        m = x.sum() / x.size
        v = ((x - m) ** 2).sum() / x.size
        assert abs(mu.data[0] - m) < 1e-6
        assert abs(var.data[0] - v) < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            channel_stats(T.Tensor(np.zeros((0, 3), dtype=np.float32)))


class TestEnergy:
    def test_zero_transform(self, rng):
        e = attention_energy(0.7, 0.0, 0.0, rng.normal(size=5), LAM)
        assert e == pytest.approx(2.0)

    def test_unit_bias(self, rng):
        e = attention_energy(0.7, 0.0, 1.0, rng.normal(size=5), LAM)
        assert e == pytest.approx(4.0)

    def test_empty_peers_rejected(self):
        with pytest.raises(ContractViolation):
            attention_energy(0.5, 0.0, 0.0, [], LAM)

    def test_minimum_matches_closed_form(self, rng):
        for _ in range(5):
            others = rng.normal(size=12)
            t_val = float(rng.normal())
            lam = 0.05
            found = minimize_energy(t_val, others, lam)
            mu = others.mean()
            var = others.var()
            closed = 4 * (var + lam) / ((t_val - mu) ** 2 + 2 * (var + lam))
            assert found == pytest.approx(closed, rel=1e-4)


class TestScores:
    def test_score_at_mean_is_half(self):
        # symmetric channel: the zero element sits exactly at the mean
        col = np.array([-1.3, 0.0, 1.3, -0.4, 0.4])[:, None]
        a = attention_scores(fm(col, dtype=np.float64), LAM)
        assert a.data[1, 0] == pytest.approx(0.5, abs=1e-12)

    def test_constant_channel_all_half(self):
        a = attention_scores(fm(np.full((7, 3), 2.0)), LAM)
        assert np.allclose(a.data, 0.5, atol=1e-6)

    def test_plugin_value_one(self):
        # symmetric channel of n points [d, -d, 0...]: mean 0, var 2d^2/n;
        # choosing d^2 = 2 lam / (1 - 4/n) makes (d - mu)^2 = 2 (var + lam),
        # where the score is exactly 1
        lam, n = 0.01, 20
        d = np.sqrt(2 * lam / (1 - 4 / n))
        col = np.zeros((n, 1))
        col[0, 0], col[1, 0] = d, -d
        a = attention_scores(fm(col, dtype=np.float64), lam)
        assert a.data[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_lower_bound_half_iff_mean(self, rng):
        x = rng.normal(size=(50, 4))
        a = attention_scores(fm(x, dtype=np.float64), LAM).data
        assert np.all(a >= 0.5 - 1e-12)
        # excess over 1/2 is exactly the scaled squared distance to the mean
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        excess = (x - mu) ** 2 / (4 * (var + LAM))
        assert np.allclose(a - 0.5, excess, atol=1e-12)

    def test_reciprocity(self, rng):
        x = fm(rng.normal(size=(30, 5)), dtype=np.float64)
        prod = attention_scores(x, LAM).data * inverse_attention_scores(x, LAM).data
        assert np.allclose(prod, 1.0, atol=1e-6)

    def test_lam_must_be_positive(self, rng):
        with pytest.raises(ContractViolation):
            attention_scores(fm(rng.normal(size=(4, 2))), 0.0)


class TestApply:
    def test_constant_channel_uniform_weights(self):
        n, c_val = 8, 2.5
        out = apply_attention(fm(np.full((n, 1), c_val)), LAM)
        assert np.allclose(out.data, c_val / n, atol=1e-6)

    def test_single_element_channel_unchanged(self):
        out = apply_attention(fm([[4.2, -1.0]][:1]), LAM)
        assert np.allclose(out.data, [[4.2, -1.0]], atol=1e-6)

    def test_weights_sum_to_one(self, rng):
        x = rng.normal(size=(40, 6)).astype(np.float32)
        out = apply_attention(fm(x), LAM)
        weights = out.data / x
        assert np.allclose(weights.sum(axis=0), 1.0, atol=1e-6)

    def test_shift_invariant_weights(self, rng):
        x = rng.normal(size=(25, 3))
        shifted = x + np.array([0.0, 5.0, 0.0])
        w1 = apply_attention(fm(x, dtype=np.float64), LAM).data / x
        w2 = apply_attention(fm(shifted, dtype=np.float64), LAM).data / shifted
        assert np.allclose(w1, w2, atol=1e-6)

    def test_shape_preserved(self, rng):
        x = fm(rng.normal(size=(12, 7)))
        assert apply_attention(x, LAM).shape == (12, 7)

    def test_end_to_end_gradient(self, rng):
        x = rng.normal(size=(6, 3))

        def scalar(xv):
            with T.no_grad():
                out = apply_attention(T.Tensor(xv, dtype=np.float64), LAM)
                return float(T.reduce_sum(T.square(out)).data)

        xt = T.Tensor(x, requires_grad=True, dtype=np.float64)
        T.reduce_sum(T.square(apply_attention(xt, LAM))).backward()
        h = 1e-4
        fd = np.zeros_like(x)
        for i in range(x.size):
            up, dn = x.copy(), x.copy()
            up.reshape(-1)[i] += h
            dn.reshape(-1)[i] -= h
            fd.reshape(-1)[i] = (scalar(up) - scalar(dn)) / (2 * h)
        rel = np.abs(xt.grad - fd) / np.maximum(np.abs(fd), 1e-5)
        assert rel.max() < 1e-3

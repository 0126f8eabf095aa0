import numpy as np
import pytest

from pcgen import tensor as T
from pcgen.errors import ContractViolation


def t(data, grad=False, dtype=np.float32):
    return T.Tensor(np.asarray(data), requires_grad=grad, dtype=dtype)


class TestForwardOps:
    def test_matmul_identity(self, rng):
        a = t(rng.normal(size=(5, 4)))
        eye = t(np.eye(4))
        assert np.allclose(T.matmul(a, eye).data, a.data)

    def test_softmax_of_zeros_is_uniform(self):
        s = T.softmax(t(np.zeros((3, 1))), axis=0)
        assert np.allclose(s.data, 1.0 / 3.0)

    def test_reduce_mean_direct(self):
        assert T.reduce_mean(t([1.0, 2.0, 3.0])).item() == pytest.approx(2.0)

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ContractViolation) as e:
            T.add(t(np.zeros((2, 3))), t(np.zeros((3, 2))))
        assert "(2, 3)" in str(e.value) and "(3, 2)" in str(e.value)

    def test_matmul_inner_dim_check(self):
        with pytest.raises(ContractViolation):
            T.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))

    def test_bias_broadcast(self):
        out = T.add(t(np.zeros((4, 3))), t([1.0, 2.0, 3.0]))
        assert np.allclose(out.data, [[1, 2, 3]] * 4)

    def test_scalar_broadcast(self):
        out = T.mul(t([1.0, 2.0]), 3.0)
        assert np.allclose(out.data, [3.0, 6.0])

    def test_log_domain(self):
        with pytest.raises(ContractViolation):
            T.log(t([1.0, -1.0]))

    def test_sqrt_domain(self):
        with pytest.raises(ContractViolation):
            T.sqrt(t([-0.5]))

    def test_div_by_zero(self):
        with pytest.raises(ContractViolation):
            T.div(t([1.0]), t([0.0]))

    def test_reduce_max_first_tie_wins(self):
        x = t([[1.0, 5.0, 5.0]], grad=True)
        out = T.reduce_max(x, axis=1)
        out.backward()
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_gather_rows_out_of_range(self):
        with pytest.raises(ContractViolation):
            T.gather_rows(t(np.zeros((3, 2))), np.array([3]))

    def test_concat_narrow_roundtrip(self, rng):
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
        cat = T.concat([t(a), t(b)], axis=0)
        assert np.allclose(T.narrow(cat, 0, 3, 4).data, b)


class TestBackward:
    def test_elementwise_square_gradient(self):
        x = t([1.0, -2.0, 3.0], grad=True)
        T.reduce_sum(T.mul(x, x)).backward()
        assert np.allclose(x.grad, [2.0, -4.0, 6.0])

    def test_constant_output_no_gradients(self):
        c = t([1.0, 2.0])
        out = T.reduce_sum(c)
        assert T.backprop(out) == []
        out.backward()  # no-op, no error

    def test_non_scalar_backward_rejected(self):
        x = t([1.0, 2.0], grad=True)
        with pytest.raises(ContractViolation):
            T.mul(x, 2.0).backward()

    def test_reuse_doubles_gradient(self):
        x = t([1.0, 2.0], grad=True)
        T.reduce_sum(T.add(x, x)).backward()
        once = t([1.0, 2.0], grad=True)
        T.reduce_sum(once).backward()
        assert np.array_equal(x.grad, 2.0 * once.grad)

    def test_grad_accumulates_across_calls(self):
        x = t([3.0], grad=True)
        loss = T.reduce_sum(T.mul(x, 2.0))
        loss.backward()
        loss.backward()
        assert np.allclose(x.grad, [4.0])

    def test_composite_finite_difference(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 3))

        def scalar(av, bv):
            with T.no_grad():
                ta, tb = t(av, dtype=np.float64), t(bv, dtype=np.float64)
                out = T.reduce_sum(T.softmax(T.leaky_relu(T.matmul(ta, tb)), axis=1))
            return float(out.data)

        ta = t(a, grad=True, dtype=np.float64)
        tb = t(b, grad=True, dtype=np.float64)
        T.reduce_sum(T.softmax(T.leaky_relu(T.matmul(ta, tb)), axis=1)).backward()

        h = 1e-3
        for which, (arr, tt) in enumerate(((a, ta), (b, tb))):
            fd = np.zeros_like(arr)
            for i in range(arr.size):
                up, dn = arr.copy(), arr.copy()
                up.reshape(-1)[i] += h
                dn.reshape(-1)[i] -= h
                hi = scalar(up, b) if which == 0 else scalar(a, up)
                lo = scalar(dn, b) if which == 0 else scalar(a, dn)
                fd.reshape(-1)[i] = (hi - lo) / (2 * h)
            rel = np.abs(tt.grad - fd) / np.maximum(np.abs(fd), 1e-6)
            assert rel.max() < 1e-4

    def test_every_node_visited_once(self, rng):
        x = t(rng.normal(size=(3, 3)), grad=True)
        h = T.leaky_relu(T.matmul(x, x))
        out = T.reduce_sum(h)
        visited = [node for node, _ in T.backprop(out)]
        assert len(visited) == len({id(n) for n in visited})


class TestDeterminism:
    def test_bit_identical_repeat(self):
        def run():
            r = np.random.default_rng(99)
            a = t(r.normal(size=(8, 8)), grad=True)
            b = t(r.normal(size=(8, 8)))
            out = T.reduce_sum(T.softmax(T.matmul(a, b), axis=1))
            out.backward()
            return out.data.copy(), a.grad.copy()

        (o1, g1), (o2, g2) = run(), run()
        assert np.array_equal(o1, o2) and np.array_equal(g1, g2)


class TestDoubleBackward:
    def test_grad_of_grad_matches_analytic(self):
        # f(x) = sum(x^3): df/dx = 3x^2, and d(sum df/dx)/dx = 6x
        x = t([1.0, 2.0, -3.0], grad=True, dtype=np.float64)
        f = T.reduce_sum(T.mul(T.square(x), x))
        (g,) = T.grad_of(f, [x], create_graph=True)
        T.reduce_sum(g).backward()
        assert np.allclose(x.grad, 6.0 * x.data)

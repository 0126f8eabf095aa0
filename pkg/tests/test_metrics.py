import itertools

import numpy as np
import pytest

from pcgen import metrics as M
from pcgen.errors import ContractViolation


def brute_chamfer(x, y):
    s1 = sum(min(((xi - yj) ** 2).sum() for yj in y) for xi in x)
    s2 = sum(min(((yj - xi) ** 2).sum() for xi in x) for yj in y)
    return s1 + s2


def brute_hausdorff(x, y):
    d1 = max(min(np.linalg.norm(xi - yj) for yj in y) for xi in x)
    d2 = max(min(np.linalg.norm(xi - yj) for xi in x) for yj in y)
    return max(d1, d2)


class TestChamfer:
    def test_identical_clouds_zero(self, rng):
        x = rng.normal(size=(20, 3))
        assert M.chamfer(x, x) == (0.0, 0.0)

    def test_singleton_pair(self):
        x = np.array([[0.0, 0.0, 0.0]])
        y = np.array([[1.0, 0.0, 0.0]])
        assert M.chamfer(x, y) == (pytest.approx(2.0), pytest.approx(2.0))

    def test_matches_brute_force(self, rng):
        for _ in range(30):
            x = rng.normal(size=(rng.integers(1, 17), 3))
            y = rng.normal(size=(rng.integers(1, 17), 3))
            cs, cm = M.chamfer(x, y)
            assert cs == pytest.approx(brute_chamfer(x, y), abs=1e-12)

    def test_symmetry(self, rng):
        x, y = rng.normal(size=(9, 3)), rng.normal(size=(13, 3))
        assert M.chamfer(x, y) == M.chamfer(y, x)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            M.chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


class TestHausdorff:
    def test_identity_zero(self, rng):
        x = rng.normal(size=(7, 3))
        assert M.hausdorff(x, x) == 0.0

    def test_three_four_five(self):
        assert M.hausdorff(np.array([[0.0, 0, 0]]),
                           np.array([[0.0, 3, 4]])) == pytest.approx(5.0)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            x = rng.normal(size=(rng.integers(1, 17), 3))
            y = rng.normal(size=(rng.integers(1, 17), 3))
            assert M.hausdorff(x, y) == pytest.approx(brute_hausdorff(x, y), abs=1e-12)


class TestPc2Pc:
    def test_identity_zero(self, rng):
        x = rng.normal(size=(11, 3))
        assert np.array_equal(M.pc2pc_error(x, x), np.zeros(11))

    def test_distance_squared(self):
        pred = np.array([[0.0, 0, 0], [2.0, 0, 0]])
        gt = np.array([[0.0, 0, 0], [0.0, 1, 0]])
        assert np.allclose(M.pc2pc_error(pred, gt), [0.0, 4.0])

    def test_sum_equals_directed_chamfer_term(self, rng):
        pred, gt = rng.normal(size=(14, 3)), rng.normal(size=(9, 3))
        directed = sum(min(((p - g) ** 2).sum() for g in gt) for p in pred)
        assert M.pc2pc_error(pred, gt).sum() == pytest.approx(directed)


class TestHungarian:
    def test_zero_diagonal_identity(self):
        cost = np.full((4, 4), 9.0)
        np.fill_diagonal(cost, 0.0)
        res = M.hungarian_assign(cost)
        assert np.array_equal(res.permutation, np.arange(4))
        assert res.total_cost == 0.0

    def test_two_by_two_swap(self):
        res = M.hungarian_assign(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.array_equal(res.permutation, [1, 0])
        assert res.total_cost == 0.0

    def test_matches_enumeration_six(self, rng):
        for _ in range(20):
            cost = rng.normal(size=(6, 6))
            res = M.hungarian_assign(cost)
            assert res.check(6)
            best = min(sum(cost[i, p[i]] for i in range(6))
                       for p in itertools.permutations(range(6)))
            assert res.total_cost == pytest.approx(best, abs=1e-12)

    def test_non_square_rejected(self):
        with pytest.raises(ContractViolation):
            M.hungarian_assign(np.zeros((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ContractViolation):
            M.hungarian_assign(np.array([[np.inf, 1.0], [1.0, 0.0]]))


class TestEmd:
    def test_identity_zero(self, rng):
        x = rng.normal(size=(10, 3))
        assert M.emd(x, x, mode="exact") == pytest.approx(0.0, abs=1e-12)

    def test_row_permutation_zero(self):
        x = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        assert M.emd(x, x[::-1], mode="exact") == pytest.approx(0.0, abs=1e-12)

    def test_matches_factorial_enumeration(self, rng):
        for _ in range(15):
            n = int(rng.integers(2, 8))
            x, y = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            best = min(sum(np.linalg.norm(x[i] - y[p[i]]) for i in range(n))
                       for p in itertools.permutations(range(n)))
            assert M.emd(x, y, mode="exact") == pytest.approx(best, abs=1e-10)

    def test_unequal_sizes_rejected(self, rng):
        with pytest.raises(ContractViolation):
            M.emd(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))

    def test_exact_cap_directs_to_approx(self, rng):
        big = rng.normal(size=(M.EXACT_EMD_CAP + 1, 3))
        with pytest.raises(ContractViolation, match="approx"):
            M.emd(big, big, mode="exact")
        assert M.emd(big, big, mode="approx") >= 0.0

    def test_approx_upper_bounds_exact(self, rng):
        for _ in range(10):
            x, y = rng.random((48, 3)), rng.random((48, 3))
            exact = M.emd(x, y, mode="exact")
            approx = M.emd(x, y, mode="approx")
            assert approx >= exact - 1e-9
            assert approx <= exact * 1.01

    def test_symmetry(self, rng):
        x, y = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
        assert M.emd(x, y) == pytest.approx(M.emd(y, x), abs=1e-10)


class TestInvariances:
    def rigid(self, rng, pc):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        t = rng.normal(size=3)
        return pc @ q.T + t, q, t

    def test_rigid_motion_invariance(self, rng):
        x, y = rng.normal(size=(24, 3)), rng.normal(size=(24, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        t = rng.normal(size=3)
        xr, yr = x @ q.T + t, y @ q.T + t
        assert M.chamfer(xr, yr)[0] == pytest.approx(M.chamfer(x, y)[0], abs=1e-5)
        assert M.hausdorff(xr, yr) == pytest.approx(M.hausdorff(x, y), abs=1e-5)
        assert M.emd(xr, yr) == pytest.approx(M.emd(x, y), abs=1e-5)

    def test_row_order_invariance(self, rng):
        x, y = rng.normal(size=(18, 3)), rng.normal(size=(11, 3))
        xp, yp = x[rng.permutation(18)], y[rng.permutation(11)]
        assert M.chamfer(xp, yp) == M.chamfer(x, y)
        assert M.hausdorff(xp, yp) == M.hausdorff(x, y)

    def test_nonnegative_zero_iff_equal(self, rng):
        x = rng.normal(size=(10, 3))
        y = x + 1e-3
        assert M.chamfer(x, y)[0] > 0
        assert M.hausdorff(x, y) > 0
        assert M.emd(x, y) > 0


class TestGridNearestNeighbor:
    def test_grid_matches_brute_above_threshold(self, rng):
        q = rng.normal(size=(M.BRUTE_FORCE_LIMIT + 100, 3))
        r = rng.normal(size=(4200, 3))
        gi, gd = M._nn_grid(q, r)
        bi, bd = M._nn_brute(q, r)
        assert np.array_equal(gi, bi)
        assert np.allclose(gd, bd)

    def test_dispatch_uses_grid_path(self, rng):
        # identical answers through the public entry point
        q = rng.normal(size=(M.BRUTE_FORCE_LIMIT + 10, 3))
        r = rng.normal(size=(300, 3))
        i1, d1 = M.nearest_neighbors(q, r)
        i2, d2 = M._nn_brute(q, r)
        assert np.array_equal(i1, i2)

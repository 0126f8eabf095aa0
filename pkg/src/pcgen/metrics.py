"""Point-cloud geometry metrics and the assignment solvers behind them.

All functions are pure and operate on numpy arrays in float64; clouds are
(N, 3) row matrices.  Chamfer / Hausdorff / per-point error rest on exact
nearest-neighbour search (brute force for small clouds, an exact
grid-bucket search above 4096 points).  The earth mover's distance uses
an optimal assignment: a shortest-augmenting-path solver in exact mode
and an epsilon-scaling auction in approximate mode (always an upper
bound, since it prices a feasible bijection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

try:
    from numba import njit as _njit
except ImportError:  # pure-numpy fallback keeps everything working
    _njit = None

BRUTE_FORCE_LIMIT = 4096
EXACT_EMD_CAP = 512


def _check_cloud(pc, name):
    pc = np.asarray(pc, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[1] != 3 or pc.shape[0] < 1:
        raise ContractViolation(f"{name}: expects a non-empty (N, 3) cloud, got {pc.shape}")
    if not np.all(np.isfinite(pc)):
        raise ContractViolation(f"{name}: cloud contains non-finite coordinates")
    return pc


# -- nearest neighbours --------------------------------------------------------

def _nn_brute(query, ref):
    """Index and squared distance of each query point's nearest ref point."""
    q2 = (query ** 2).sum(axis=1)[:, None]
    r2 = (ref ** 2).sum(axis=1)[None, :]
    d2 = q2 + r2 - 2.0 * (query @ ref.T)
    idx = np.argmin(d2, axis=1)
    best = d2[np.arange(len(query)), idx]
    return idx, np.maximum(best, 0.0)


def _nn_grid(query, ref):
    """Exact grid-bucket nearest neighbour for large clouds.

    Buckets the reference cloud in a uniform grid and expands Chebyshev
    rings around each query cell until no farther ring can contain a
    closer point.  Results equal the brute-force answer.
    """
    lo = np.minimum(query.min(axis=0), ref.min(axis=0))
    hi = np.maximum(query.max(axis=0), ref.max(axis=0))
    extent = float((hi - lo).max())
    if extent == 0.0:
        d0 = ((query[0] - ref) ** 2).sum(axis=1)
        j = int(np.argmin(d0))
        return (np.full(len(query), j, dtype=np.int64),
                ((query - ref[j]) ** 2).sum(axis=1))
    cells_per_axis = max(1, int(np.ceil(len(ref) ** (1.0 / 3.0))))
    h = extent / cells_per_axis

    def cell_of(pts):
        return np.floor((pts - lo) / h).astype(np.int64)

    ref_cells = cell_of(ref)
    buckets = {}
    for i, c in enumerate(map(tuple, ref_cells)):
        buckets.setdefault(c, []).append(i)
    buckets = {c: np.array(v, dtype=np.int64) for c, v in buckets.items()}

    idx_out = np.empty(len(query), dtype=np.int64)
    d2_out = np.empty(len(query))
    q_cells = cell_of(query)

    # group queries sharing a cell so each ring scan serves the whole group
    order = np.lexsort(q_cells.T)
    grouped = q_cells[order]
    starts = np.flatnonzero(np.r_[True, np.any(np.diff(grouped, axis=0) != 0, axis=1)])
    bounds = np.r_[starts, len(order)]

    for gi in range(len(starts)):
        members = order[bounds[gi]:bounds[gi + 1]]
        cq = grouped[bounds[gi]]
        qpts = query[members]
        best = np.full(len(members), np.inf)
        best_idx = np.full(len(members), -1, dtype=np.int64)
        ring = 0
        while True:
            cand = []
            for dx in range(-ring, ring + 1):
                for dy in range(-ring, ring + 1):
                    for dz in range(-ring, ring + 1):
                        if max(abs(dx), abs(dy), abs(dz)) != ring:
                            continue
                        b = buckets.get((cq[0] + dx, cq[1] + dy, cq[2] + dz))
                        if b is not None:
                            cand.append(b)
            if cand:
                cand = np.concatenate(cand)
                d2 = ((qpts[:, None, :] - ref[cand][None, :, :]) ** 2).sum(axis=2)
                j = np.argmin(d2, axis=1)
                d = d2[np.arange(len(members)), j]
                upd = d < best
                best[upd] = d[upd]
                best_idx[upd] = cand[j[upd]]
            # any point in an unscanned ring k' >= ring+1 lies at least
            # ring*h from every point of the query cell, so the current
            # winners are certified once they beat that bound
            if np.all(best_idx >= 0) and best.max() <= (ring * h) ** 2:
                break
            ring += 1
            if ring > cells_per_axis + 2:  # every occupied cell scanned
                break
        idx_out[members] = best_idx
        d2_out[members] = best
    return idx_out, np.maximum(d2_out, 0.0)


def nearest_neighbors(query, ref):
    """(index, squared distance) of the nearest ref point per query point."""
    query = _check_cloud(query, "nearest_neighbors")
    ref = _check_cloud(ref, "nearest_neighbors")
    if max(len(query), len(ref)) <= BRUTE_FORCE_LIMIT:
        return _nn_brute(query, ref)
    return _nn_grid(query, ref)


# -- metric suite ---------------------------------------------------------------

def chamfer(x, y):
    """Chamfer distance in both reporting conventions.

    Returns (sum_form, mean_form): the sum form adds the two directed sums
    of squared nearest-neighbour distances; the mean form averages each
    directed sum by its cloud size before adding.
    """
    x = _check_cloud(x, "chamfer")
    y = _check_cloud(y, "chamfer")
    _, dxy = nearest_neighbors(x, y)
    _, dyx = nearest_neighbors(y, x)
    sum_form = float(dxy.sum() + dyx.sum())
    mean_form = float(dxy.mean() + dyx.mean())
    return sum_form, mean_form


def hausdorff(x, y):
    """Symmetric Hausdorff distance with the Euclidean norm."""
    x = _check_cloud(x, "hausdorff")
    y = _check_cloud(y, "hausdorff")
    _, dxy = nearest_neighbors(x, y)
    _, dyx = nearest_neighbors(y, x)
    return float(np.sqrt(max(dxy.max(), dyx.max())))


def pc2pc_error(pred, gt):
    """Squared nearest-neighbour distance per generated point (heatmap data)."""
    pred = _check_cloud(pred, "pc2pc_error")
    gt = _check_cloud(gt, "pc2pc_error")
    _, d2 = nearest_neighbors(pred, gt)
    return d2


# -- assignment ------------------------------------------------------------------

@dataclass
class AssignmentResult:
    """Bijection source -> target and its total cost."""

    permutation: np.ndarray   # permutation[i] = matched target of source i
    total_cost: float

    def check(self, n):
        p = np.sort(self.permutation)
        return bool(np.array_equal(p, np.arange(n)))


def _check_cost(cost, name):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractViolation(f"{name}: cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractViolation(f"{name}: cost matrix contains non-finite entries")
    return cost


def hungarian_assign(cost):
    """Minimum-cost bijection by shortest augmenting paths with potentials."""
    cost = _check_cost(cost, "hungarian_assign")
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)   # column -> row (1-based, 0 free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            free = ~used[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    total = float(cost[np.arange(n), perm].sum())
    return AssignmentResult(permutation=perm, total_cost=total)


def auction_assign(cost, rel_accuracy=0.005, scale_factor=5.0):
    """Approximate minimum-cost bijection via epsilon-scaling auction.

    The final epsilon is sized so the assignment's cost exceeds the
    optimum by at most ``rel_accuracy`` times the cost spread; the
    returned total is the true cost of the found bijection, hence always
    an upper bound on the exact optimum.
    """
    cost = _check_cost(cost, "auction_assign")
    n = cost.shape[0]
    benefit = -cost
    spread = float(cost.max() - cost.min())
    if spread == 0.0:
        perm = np.arange(n)
        return AssignmentResult(perm, float(cost[np.arange(n), perm].sum()))
    eps_min = max(rel_accuracy * spread / n, 1e-12)
    eps = max(spread / 4.0, eps_min)
    price = np.zeros(n)
    while True:
        owner = _auction_round(benefit, price, eps)
        if eps <= eps_min:
            break
        eps = max(eps / scale_factor, eps_min)
    perm = np.empty(n, dtype=np.int64)
    perm[owner] = np.arange(n)   # owner[j] = bidder owning object j
    total = float(cost[np.arange(n), perm].sum())
    return AssignmentResult(permutation=perm, total_cost=total)


def _auction_round_gs(benefit, price, eps):
    """Gauss-Seidel forward auction: one bidder at a time, prices shared."""
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    owned = np.full(n, -1, dtype=np.int64)
    stack = np.arange(n - 1, -1, -1, dtype=np.int64)
    top = n
    while top > 0:
        top -= 1
        i = stack[top]
        best = -np.inf
        second = -np.inf
        bj = 0
        for j in range(n):
            v = benefit[i, j] - price[j]
            if v > best:
                second = best
                best = v
                bj = j
            elif v > second:
                second = v
        if n == 1:
            second = best - eps
        price[bj] = price[bj] + (best - second) + eps
        prev = owner[bj]
        owner[bj] = i
        owned[i] = bj
        if prev >= 0:
            owned[prev] = -1
            stack[top] = prev
            top += 1
    return owner


if _njit is not None:
    _auction_round_gs = _njit(cache=True)(_auction_round_gs)


def _auction_round(benefit, price, eps):
    if _njit is not None:
        return _auction_round_gs(benefit, price, eps)
    return _auction_round_jacobi(benefit, price, eps)


def _auction_round_jacobi(benefit, price, eps):
    """Jacobi forward auction until every bidder owns an object."""
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    owned = np.full(n, -1, dtype=np.int64)
    while True:
        bidders = np.flatnonzero(owned < 0)
        if bidders.size == 0:
            return owner
        values = benefit[bidders] - price[None, :]
        if n >= 2:
            top2 = np.argpartition(-values, 1, axis=1)[:, :2]
            v0 = values[np.arange(bidders.size), top2[:, 0]]
            v1 = values[np.arange(bidders.size), top2[:, 1]]
            first = np.where(v0 >= v1, top2[:, 0], top2[:, 1])
            best = np.maximum(v0, v1)
            rows = np.arange(bidders.size)
            masked = values.copy()
            masked[rows, first] = -np.inf
            second = masked.max(axis=1)
        else:
            first = np.zeros(bidders.size, dtype=np.int64)
            best = values[:, 0]
            second = best - eps
        bids = price[first] + (best - second) + eps
        # highest bid per object wins this sweep
        order = np.lexsort((bids, first))
        first_sorted = first[order]
        last_of_group = np.r_[first_sorted[1:] != first_sorted[:-1], True]
        win_pos = order[last_of_group]
        win_obj = first[win_pos]
        win_bidder = bidders[win_pos]
        displaced = owner[win_obj]
        for d in displaced[displaced >= 0]:
            owned[d] = -1
        price[win_obj] = bids[win_pos]
        owner[win_obj] = win_bidder
        owned[win_bidder] = win_obj


def pairwise_distances(x, y):
    """Euclidean (non-squared) distance matrix between two clouds."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = (x ** 2).sum(axis=1)[:, None] + (y ** 2).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.sqrt(np.maximum(d2, 0.0))


def emd(x, y, mode="exact", rel_accuracy=0.005):
    """Earth mover's distance: min over bijections of the summed distances.

    Requires equal sizes.  Exact mode solves the assignment optimally and
    is capped at 512 points; approximate mode returns an upper bound
    within ``rel_accuracy`` of the optimum.
    """
    x = _check_cloud(x, "emd")
    y = _check_cloud(y, "emd")
    if len(x) != len(y):
        raise ContractViolation(
            f"emd: clouds must match in size, got {len(x)} vs {len(y)}")
    if mode not in ("exact", "approx"):
        raise ContractViolation(f"emd: unknown mode {mode!r}")
    if mode == "exact" and len(x) > EXACT_EMD_CAP:
        raise ContractViolation(
            f"emd: exact mode capped at {EXACT_EMD_CAP} points "
            f"({len(x)} given); use mode='approx'")
    cost = pairwise_distances(x, y)
    if mode == "exact":
        return hungarian_assign(cost).total_cost
    return auction_assign(cost, rel_accuracy=rel_accuracy).total_cost

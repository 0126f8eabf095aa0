"""Finite-difference gradient checking for every registered op kernel.

The oracle runs in float64: central differences with step ``h`` on each
input element, compared element-wise against the analytic gradient from
the reverse pass.  Checks cover the public op suite plus the internal
adjoint kernels (narrow / scatter_rows / expand_axis).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def fd_gradient(f, inputs, which, h=1e-3):
    """Central-difference gradient of scalar ``f(*inputs)`` w.r.t. one input."""
    base = [x.copy() for x in inputs]
    g = np.zeros_like(base[which])
    flat = g.reshape(-1)
    xw = base[which].reshape(-1)
    for i in range(xw.size):
        orig = xw[i]
        xw[i] = orig + h
        fp = f(*base)
        xw[i] = orig - h
        fm = f(*base)
        xw[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, fd, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom)) if analytic.size else 0.0


def check_op(build, rng, h=1e-3):
    """Check one op case.

    ``build(rng)`` returns (forward, inputs): ``forward`` maps Tensor inputs
    to a Tensor (any shape; a scalar probe is applied on top so the check
    exercises the full Jacobian against a random co-vector).
    """
    forward, inputs = build(rng)
    tensors = [T.Tensor(x, requires_grad=True, dtype=np.float64) for x in inputs]
    out = forward(*tensors)
    w = rng.standard_normal(out.shape)

    def scalar_from(*arrays):
        ts = [T.Tensor(a, dtype=np.float64) for a in arrays]
        with T.no_grad():
            o = forward(*ts)
        return float((o.data * w).sum())

    loss = T.reduce_sum(T.mul(out, T.Tensor(w, dtype=np.float64)))
    grads = T.grad_of(loss, tensors)

    worst = 0.0
    for i in range(len(inputs)):
        fd = fd_gradient(scalar_from, [np.asarray(x, dtype=np.float64) for x in inputs], i, h=h)
        worst = max(worst, max_rel_error(grads[i].data, fd))
    return worst


# -- registered op cases ------------------------------------------------------

def _rand(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _rand_pos(rng, *shape):
    return rng.uniform(0.2, 2.0, size=shape)


def _case_add(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 6)
    return (lambda a, b: T.add(a, b)), [_rand(rng, n, c), _rand(rng, n, c)]


def _case_add_bias(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 6)
    return (lambda a, b: T.add(a, b)), [_rand(rng, n, c), _rand(rng, c)]


def _case_sub(rng):
    n = rng.integers(2, 8)
    return (lambda a, b: T.sub(a, b)), [_rand(rng, n), _rand(rng, n)]


def _case_mul(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 6)
    return (lambda a, b: T.mul(a, b)), [_rand(rng, n, c), _rand(rng, c)]


def _case_mul_scalar(rng):
    n = rng.integers(2, 8)
    return (lambda a, b: T.mul(a, b)), [_rand(rng, n), _rand(rng)]


def _case_div(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 6)
    return (lambda a, b: T.div(a, b)), [_rand(rng, n, c), _rand_pos(rng, c)]


def _case_neg(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.neg(a)), [_rand(rng, n)]


def _case_matmul(rng):
    n, k, m = rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a, b: T.matmul(a, b)), [_rand(rng, n, k), _rand(rng, k, m)]


def _case_transpose(rng):
    n, m = rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a: T.transpose(a)), [_rand(rng, n, m)]


def _case_reshape(rng):
    n, m = rng.integers(2, 5), 4
    return (lambda a: T.reshape(a, (n * 2, m // 2))), [_rand(rng, n, m)]


def _case_concat(rng):
    n, c = rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a, b: T.concat([a, b], axis=0)), [_rand(rng, n, c), _rand(rng, n + 1, c)]


def _case_narrow(rng):
    n, c = rng.integers(4, 8), rng.integers(2, 5)
    return (lambda a: T.narrow(a, 0, 1, n - 2)), [_rand(rng, n, c)]


def _case_gather_rows(rng):
    n, c = rng.integers(3, 7), rng.integers(2, 5)
    idx = rng.integers(0, n, size=2 * n)
    return (lambda a: T.gather_rows(a, idx)), [_rand(rng, n, c)]


def _case_gather_rows_revplan(rng):
    n, c = rng.integers(3, 7), rng.integers(2, 5)
    idx = rng.integers(0, n, size=2 * n)
    plan = T.make_reverse_plan(idx, n)
    return (lambda a: T.gather_rows(a, idx, rev_plan=plan)), [_rand(rng, n, c)]


def _case_scatter_rows(rng):
    m, c, rows = rng.integers(3, 7), rng.integers(2, 5), 9
    idx = rng.integers(0, rows, size=m)
    return (lambda a: T.scatter_rows(a, idx, rows)), [_rand(rng, m, c)]


def _case_expand_axis(rng):
    n, c = rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a: T.expand_axis(a, 1, 3)), [_rand(rng, n, c)]


def _case_reduce_sum(rng):
    b, n, c = 2, rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a: T.reduce_sum(a, axis=1)), [_rand(rng, b, n, c)]


def _case_reduce_sum_all(rng):
    n, c = rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a: T.reduce_sum(a)), [_rand(rng, n, c)]


def _case_reduce_mean(rng):
    b, n, c = 2, rng.integers(2, 5), rng.integers(2, 5)
    return (lambda a: T.reduce_mean(a, axis=1)), [_rand(rng, b, n, c)]


def _case_reduce_mean_all(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.reduce_mean(a)), [_rand(rng, n)]


def _case_reduce_max(rng):
    b, n, c = 2, rng.integers(3, 6), rng.integers(2, 5)
    return (lambda a: T.reduce_max(a, axis=1)), [_rand(rng, b, n, c)]


def _case_reduce_max_all(rng):
    n, c = rng.integers(3, 6), rng.integers(2, 5)
    return (lambda a: T.reduce_max(a)), [_rand(rng, n, c)]


def _case_softmax0(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    return (lambda a: T.softmax(a, axis=0)), [_rand(rng, n, c)]


def _case_softmax1(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    return (lambda a: T.softmax(a, axis=1)), [_rand(rng, n, c)]


def _case_leaky_relu(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    x = _rand(rng, n, c)
    x[np.abs(x) < 0.05] += 0.1  # keep away from the kink
    return (lambda a: T.leaky_relu(a)), [x]


def _case_sigmoid(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.sigmoid(a)), [_rand(rng, n)]


def _case_exp(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.exp(a)), [_rand(rng, n)]


def _case_log(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.log(a)), [_rand_pos(rng, n)]


def _case_square(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    return (lambda a: T.square(a)), [_rand(rng, n, c)]


def _case_sqrt(rng):
    n = rng.integers(2, 8)
    return (lambda a: T.sqrt(a)), [_rand_pos(rng, n)]


def _case_l2_norm(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    x = _rand(rng, n, c) + 2.0  # bounded away from zero norm
    return (lambda a: T.l2_norm(a)), [x]


def _case_l2_norm_rows(rng):
    n, c = rng.integers(2, 6), rng.integers(2, 5)
    x = _rand(rng, n, c) + 2.0
    return (lambda a: T.l2_norm(a, axis=1)), [x]


def _case_composite(rng):
    # matmul -> leaky_relu -> softmax -> sum, the standard smoke chain
    n, k, m = 3, 4, 3

    def forward(a, b):
        h = T.leaky_relu(T.matmul(a, b))
        return T.reduce_sum(T.softmax(h, axis=1))

    return forward, [_rand(rng, n, k), _rand(rng, k, m)]


OP_CASES = {
    "add": _case_add,
    "add_bias": _case_add_bias,
    "sub": _case_sub,
    "mul": _case_mul,
    "mul_scalar": _case_mul_scalar,
    "div": _case_div,
    "neg": _case_neg,
    "matmul": _case_matmul,
    "transpose": _case_transpose,
    "reshape": _case_reshape,
    "concat": _case_concat,
    "narrow": _case_narrow,
    "gather_rows": _case_gather_rows,
    "gather_rows_revplan": _case_gather_rows_revplan,
    "scatter_rows": _case_scatter_rows,
    "expand_axis": _case_expand_axis,
    "reduce_sum": _case_reduce_sum,
    "reduce_sum_all": _case_reduce_sum_all,
    "reduce_mean": _case_reduce_mean,
    "reduce_mean_all": _case_reduce_mean_all,
    "reduce_max": _case_reduce_max,
    "reduce_max_all": _case_reduce_max_all,
    "softmax_axis0": _case_softmax0,
    "softmax_axis1": _case_softmax1,
    "leaky_relu": _case_leaky_relu,
    "sigmoid": _case_sigmoid,
    "exp": _case_exp,
    "log": _case_log,
    "square": _case_square,
    "sqrt": _case_sqrt,
    "l2_norm": _case_l2_norm,
    "l2_norm_rows": _case_l2_norm_rows,
    "composite_chain": _case_composite,
}


def run_all(seeds=20, rtol=1e-4, h=1e-3, report=None):
    """Run every registered case over ``seeds`` random draws.

    Returns {name: worst relative error}; ``report`` (callable) receives a
    line per op when given.
    """
    results = {}
    for name, build in OP_CASES.items():
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng(1000 * s + hash(name) % 997)
            worst = max(worst, check_op(build, rng, h=h))
        results[name] = worst
        if report is not None:
            status = "PASS" if worst < rtol else "FAIL"
            report(f"{status} {name:24s} max rel err {worst:.3e}")
    return results

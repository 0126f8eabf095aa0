"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap row-major numpy arrays (float32 by default, float64 available
for high-precision gradient checks).  Every differentiable operation records
a node linking the output to its inputs together with a vector-Jacobian
product; ``backward`` walks that graph once in reverse topological order.

Backward rules are themselves written in terms of these operations, so
gradients can be re-differentiated (``create_graph=True``), which the
WGAN-GP gradient penalty relies on.

Broadcasting is deliberately narrow: a binary op accepts equal shapes, a
scalar (0-d) operand, or a trailing per-row bias vector ``(C,)`` against
``(..., C)``.  Anything else is a contract violation.  Internal adjoint
ops (``expand_axis``, ``scatter_rows``, ``narrow``) cover the shapes the
backward formulas need without widening that rule.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractViolation

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense n-dimensional float array, optionally tracked by autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"

    # -- properties ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    # -- autodiff -----------------------------------------------------------

    def backward(self, create_graph=False):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every grad leaf.

        ``self`` must hold a single element.  Gradients add across calls.
        """
        grads = backprop(self, create_graph=create_graph)
        for node, g in grads:
            if node._vjp is None and node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g.data.astype(node.data.dtype, copy=False)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, op, parents, vjp):
    """Wrap an op result, recording the graph node when tracking is on."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _topo_order(root):
    """Post-order DFS over the recorded graph: parents before consumers."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order  # parents before children


def backprop(output, create_graph=False):
    """Run one reverse pass from ``output``; return [(node, grad Tensor)].

    Every reached node appears exactly once.  When ``create_graph`` is set
    the returned gradients stay connected to the graph and can be
    differentiated again.
    """
    if output.size != 1:
        raise ContractViolation(
            f"backward needs a single-element output, got shape {output.shape}"
        )
    if not output.requires_grad:
        return []
    order = _topo_order(output)
    seed = Tensor(np.ones(output.shape, dtype=output.dtype))
    grads = {id(output): seed}
    result = []
    ctx = _keep_graph() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            result.append((node, g))
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else add(held, pg)
    return result


@contextmanager
def _keep_graph():
    yield


def grad_of(output, wrt, create_graph=False):
    """Gradients of a scalar ``output`` w.r.t. the given tensors.

    Returns one Tensor per entry of ``wrt`` (zeros when unreached); does
    not touch ``.grad``.
    """
    table = {id(node): g for node, g in backprop(output, create_graph)}
    out = []
    for t in wrt:
        g = table.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        out.append(g)
    return out


# -- broadcasting helpers ----------------------------------------------------

def _broadcast_ok(sa, sb):
    if sa == sb:
        return True
    if sb == () or sa == ():
        return True
    if len(sa) >= 1 and sb == (sa[-1],):
        return True
    if len(sb) >= 1 and sa == (sb[-1],):
        return True
    return False


def _check_binary(a, b, op):
    if a.dtype != b.dtype:
        raise ContractViolation(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    if not _broadcast_ok(a.shape, b.shape):
        raise ContractViolation(
            f"{op}: shapes {a.shape} and {b.shape} do not conform "
            "(equal, scalar, or trailing bias vector only)"
        )


def _unbroadcast(g, target_shape):
    """Sum a broadcast gradient back to the operand's shape."""
    if g.shape == target_shape:
        return g
    out = g
    while out.ndim > len(target_shape):
        out = reduce_sum(out, axis=0)
    if out.shape != target_shape:  # (C,) target reached via full reduce of ()
        out = reshape(out, target_shape)
    return out


# -- arithmetic ops ----------------------------------------------------------

def add(a, b):
    a = _as_tensor(a, getattr(b, "dtype", DEFAULT_DTYPE))
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b, "add")
    return _node(
        a.data + b.data, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a = _as_tensor(a, getattr(b, "dtype", DEFAULT_DTYPE))
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b, "sub")
    return _node(
        a.data - b.data, "sub", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
    )


def mul(a, b):
    a = _as_tensor(a, getattr(b, "dtype", DEFAULT_DTYPE))
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b, "mul")
    return _node(
        a.data * b.data, "mul", (a, b),
        lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
    )


def div(a, b):
    a = _as_tensor(a, getattr(b, "dtype", DEFAULT_DTYPE))
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b, "div")
    if np.any(b.data == 0):
        raise ContractViolation("div: zero denominator")
    return _node(
        a.data / b.data, "div", (a, b),
        lambda g: (
            _unbroadcast(div(g, b), a.shape),
            _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape),
        ),
    )


def neg(a):
    return _node(-a.data, "neg", (a,), lambda g: (neg(g),))


# -- structure ops -----------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(
            f"matmul: expects 2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul: inner dimensions differ, {a.shape} vs {b.shape}"
        )
    if a.dtype != b.dtype:
        raise ContractViolation(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    return _node(
        a.data @ b.data, "matmul", (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a):
    if a.ndim != 2:
        raise ContractViolation(f"transpose: expects 2-d, got {a.shape}")
    return _node(a.data.T, "transpose", (a,), lambda g: (transpose(g),))


def reshape(a, shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(
            f"reshape: cannot view {a.shape} as {shape}"
        ) from None
    if not data.flags.c_contiguous:
        data = np.ascontiguousarray(data)
    return _node(data, "reshape", (a,), lambda g: (reshape(g, a.shape),))


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractViolation("concat: empty input list")
    dt = tensors[0].dtype
    for t in tensors:
        if t.dtype != dt:
            raise ContractViolation("concat: mixed dtypes")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(sizes))
        )

    return _node(data, "concat", tuple(tensors), vjp)


def narrow(a, axis, start, length):
    """Contiguous slice of ``length`` entries along ``axis``."""
    n = a.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise ContractViolation(
            f"narrow: slice [{start}:{start + length}) out of range for axis "
            f"size {n}"
        )
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    data = np.ascontiguousarray(a.data[tuple(idx)])

    def vjp(g):
        before_shape = list(a.shape)
        before_shape[axis] = start
        after_shape = list(a.shape)
        after_shape[axis] = n - start - length
        parts = []
        if start > 0:
            parts.append(Tensor(np.zeros(before_shape, dtype=a.dtype)))
        parts.append(g)
        if after_shape[axis] > 0:
            parts.append(Tensor(np.zeros(after_shape, dtype=a.dtype)))
        return (concat(parts, axis=axis),)

    return _node(data, "narrow", (a,), vjp)


def gather_rows(a, idx, rev_plan=None):
    """Select rows of a 2-d tensor: out[k] = a[idx[k]].

    ``rev_plan`` optionally supplies a precomputed reverse index table
    ``(rev_idx, slots)`` so the backward scatter becomes a vectorized
    gather+sum (used by the convolution plumbing, where ``np.add.at``
    would dominate the profile).
    """
    if a.ndim != 2:
        raise ContractViolation(f"gather_rows: expects 2-d input, got {a.shape}")
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractViolation("gather_rows: index must be a 1-d integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractViolation(
            f"gather_rows: index out of range for {a.shape[0]} rows"
        )
    rows = a.shape[0]

    def vjp(g):
        if rev_plan is not None:
            rev_idx, slots = rev_plan
            g_ext = concat([g, Tensor(np.zeros((1, g.shape[1]), dtype=g.dtype))])
            picked = gather_rows(g_ext, rev_idx)
            picked = reshape(picked, (rows, slots, g.shape[1]))
            return (reduce_sum(picked, axis=1),)
        return (scatter_rows(g, idx, rows),)

    return _node(a.data[idx], "gather_rows", (a,), vjp)


def make_reverse_plan(idx, num_rows, drop_rows=()):
    """Build the (rev_idx, slots) table for ``gather_rows``.

    rev_idx lists, for every input row, the positions in ``idx`` that
    reference it, padded with ``len(idx)`` (a dummy zero row).  Rows in
    ``drop_rows`` get no entries — their gradient comes out zero, which is
    what the shared padding row of the conv plumbing wants.
    """
    idx = np.asarray(idx)
    positions = np.arange(idx.size)
    if len(drop_rows):
        keep = ~np.isin(idx, np.asarray(list(drop_rows)))
        positions = positions[keep]
    rows = idx[positions]
    order = np.argsort(rows, kind="stable")
    rows = rows[order]
    positions = positions[order]
    if rows.size:
        starts = np.flatnonzero(np.r_[True, np.diff(rows) != 0])
        run_lengths = np.diff(np.r_[starts, rows.size])
        rank = np.arange(rows.size) - np.repeat(starts, run_lengths)
        slots = int(rank.max()) + 1
    else:
        slots = 1
    rev = np.full((num_rows, slots), idx.size, dtype=np.int64)
    if rows.size:
        rev[rows, rank] = positions
    return rev.reshape(-1), slots


def scatter_rows(values, idx, num_rows):
    """Adjoint of gather_rows: out[idx[k]] += values[k]."""
    if values.ndim != 2:
        raise ContractViolation(f"scatter_rows: expects 2-d values, got {values.shape}")
    idx = np.asarray(idx)
    if idx.shape != (values.shape[0],):
        raise ContractViolation(
            f"scatter_rows: index shape {idx.shape} does not match "
            f"{values.shape[0]} rows"
        )
    out = np.zeros((num_rows, values.shape[1]), dtype=values.dtype)
    np.add.at(out, idx, values.data)
    return _node(out, "scatter_rows", (values,),
                 lambda g: (gather_rows(g, idx),))


def expand_axis(a, axis, n):
    """Insert an axis of length ``n`` by repetition (adjoint of reduce_sum)."""
    data = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return _node(data, "expand_axis", (a,),
                 lambda g: (reduce_sum(g, axis=axis),))


# -- reductions --------------------------------------------------------------

def reduce_sum(a, axis=None):
    if axis is None:
        return _node(
            np.asarray(a.data.sum(), dtype=a.dtype), "reduce_sum", (a,),
            lambda g: (mul(Tensor(np.ones_like(a.data)), g),),
        )
    n = a.shape[axis]
    return _node(a.data.sum(axis=axis), "reduce_sum", (a,),
                 lambda g: (expand_axis(g, axis, n),))


def reduce_mean(a, axis=None):
    if axis is None:
        inv = 1.0 / a.size
        return _node(
            np.asarray(a.data.mean(), dtype=a.dtype), "reduce_mean", (a,),
            lambda g: (mul(Tensor(np.full_like(a.data, inv)), g),),
        )
    n = a.shape[axis]
    return _node(a.data.mean(axis=axis), "reduce_mean", (a,),
                 lambda g: (mul(expand_axis(g, axis, n), 1.0 / n),))


def reduce_max(a, axis=None):
    """Max reduction; gradient flows to the first maximal element."""
    if axis is None:
        flat_idx = np.array([int(np.argmax(a.data))])
        data = np.asarray(a.data.reshape(-1)[flat_idx[0]], dtype=a.dtype)

        def vjp(g):
            v = reshape(g, (1, 1))
            scattered = scatter_rows(v, flat_idx, a.size)
            return (reshape(scattered, a.shape),)

        return _node(data, "reduce_max", (a,), vjp)

    arg = np.argmax(a.data, axis=axis)  # first max along axis
    data = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis)
    data = np.squeeze(data, axis=axis)
    # flat positions of the winners inside a
    grid = np.indices(arg.shape)
    full_index = list(grid[:axis]) + [arg] + list(grid[axis:])
    flat_idx = np.ravel_multi_index(tuple(full_index), a.shape).reshape(-1)

    def vjp(g):
        v = reshape(g, (int(np.prod(g.shape)) if g.size else 0, 1))
        scattered = scatter_rows(v, flat_idx, a.size)
        return (reshape(scattered, a.shape),)

    return _node(data, "reduce_max", (a,), vjp)


# -- elementwise nonlinearities ----------------------------------------------

def softmax(a, axis):
    """Numerically stable softmax along one axis of a 2-d tensor."""
    if a.ndim != 2 or axis not in (0, 1):
        raise ContractViolation(
            f"softmax: expects a 2-d tensor and axis 0 or 1, got {a.shape}"
        )
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    n = a.shape[axis]

    def vjp(g, out_holder=[]):
        s = out_holder[0]
        sg = mul(s, g)
        total = expand_axis(reduce_sum(sg, axis=axis), axis, n)
        return (sub(sg, mul(s, total)),)

    out = _node(data, "softmax", (a,), None)
    if out.requires_grad:
        holder = [out]
        out._vjp = lambda g: vjp(g, holder)
    return out


def leaky_relu(a, slope=0.2):
    scale = np.where(a.data < 0, a.dtype.type(slope), a.dtype.type(1.0))
    return _node(a.data * scale, "leaky_relu", (a,),
                 lambda g: (mul(g, Tensor(scale)),))


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))
    out = _node(data, "sigmoid", (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def exp(a):
    out = _node(np.exp(a.data), "exp", (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, out),)
    return out


def log(a):
    if np.any(a.data <= 0):
        raise ContractViolation("log: domain requires strictly positive input")
    return _node(np.log(a.data), "log", (a,), lambda g: (div(g, a),))


def square(a):
    return _node(a.data * a.data, "square", (a,), lambda g: (mul(g, mul(a, 2.0)),))


def sqrt(a):
    if np.any(a.data < 0):
        raise ContractViolation("sqrt: domain requires non-negative input")
    out = _node(np.sqrt(a.data), "sqrt", (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (div(mul(g, 0.5), out),)
    return out


def l2_norm(a, axis=None):
    """Euclidean norm of the whole tensor (axis=None) or of each row (axis=1)
    / column (axis=0) of a 2-d tensor.  Gradient is zero at exactly zero."""
    if axis is None:
        n = float(np.sqrt((a.data.astype(np.float64) ** 2).sum()))
        data = np.asarray(n, dtype=a.dtype)

        def vjp(g):
            safe = n if n > 0 else 1.0
            return (mul(a, mul(g, 1.0 / safe)),)

        return _node(data, "l2_norm", (a,), vjp)

    if a.ndim != 2 or axis not in (0, 1):
        raise ContractViolation(
            f"l2_norm: axis form expects 2-d tensor and axis 0/1, got {a.shape}"
        )
    norms = np.sqrt((a.data.astype(np.float64) ** 2).sum(axis=axis)).astype(a.dtype)
    k = a.shape[axis]
    safe = np.where(norms > 0, norms, 1.0).astype(a.dtype)

    def vjp(g):
        scale = expand_axis(div(g, Tensor(safe)), axis, k)
        return (mul(a, scale),)

    return _node(norms, "l2_norm", (a,), vjp)


# -- convenience -------------------------------------------------------------

def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def as_parameter(data, dtype=DEFAULT_DTYPE):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)

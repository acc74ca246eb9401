"""Reverse-mode automatic differentiation over numpy arrays.

Every operation is recorded on an explicit :class:`Tape`. Backward passes are
themselves expressed in terms of recorded operations, so the gradients returned
by :func:`grad` with ``create_graph=True`` can be differentiated again. That
double-backward capability is what lets a gradient-norm penalty contribute to
parameter gradients.

Scope is deliberately small: dense-layer building blocks, the usual
nonlinearities, and batch reductions. Broadcasting is restricted to
scalar-with-tensor; anything fancier raises.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Shape mismatch, non-finite result, or misuse of the tape."""


class _Node:
    __slots__ = ("op", "inputs", "vjps")

    def __init__(self, op: str, inputs: tuple[int, ...], vjps: tuple):
        self.op = op
        self.inputs = inputs
        self.vjps = vjps


class Tape:
    """Append-only record of operations; node inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, op: str, data, inputs: Sequence["Value"], vjps: Sequence[Callable]) -> "Value":
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise AutodiffError(f"non-finite result from op '{op}'")
        node_id = len(self.nodes)
        self.nodes.append(_Node(op, tuple(v.node_id for v in inputs), tuple(vjps)))
        return Value(self, node_id, data)

    def leaf(self, data, op: str = "leaf") -> "Value":
        return self.record(op, data, (), ())


class Value:
    """A tensor plus the tape node that produced it."""

    __slots__ = ("tape", "node_id", "data")

    # ndarray <op> Value must fall through to our reflected operators instead
    # of numpy broadcasting over the Value object
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int, data: np.ndarray):
        self.tape = tape
        self.node_id = node_id
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Value":
        """A leaf copy on the same tape; gradients do not flow through it."""
        return self.tape.leaf(self.data.copy(), op="detach")

    def __repr__(self):
        return f"Value(shape={self.data.shape}, op={self.tape.nodes[self.node_id].op})"

    # arithmetic; scalars and ndarrays are lifted to leaves
    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return mul(_lift(self.tape, other), self)

    def __truediv__(self, other):
        return div(self, _lift(self.tape, other))

    def __rtruediv__(self, other):
        return div(_lift(self.tape, other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(self.tape, other))

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _lift(tape: Tape, x) -> Value:
    if isinstance(x, Value):
        if x.tape is not tape:
            raise AutodiffError("values from different tapes cannot be mixed")
        return x
    return tape.leaf(np.asarray(x, dtype=np.float64), op="const")


def lift(tape: Tape, x) -> Value:
    """x as a Value on tape: passthrough for Values, constant leaf otherwise."""
    return _lift(tape, x)


def _is_scalar(v: Value) -> bool:
    return v.data.ndim == 0


def _check_same_shape(a: Value, b: Value, op: str):
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _sum_to(v: Value, shape) -> Value:
    """Reduce v to `shape`: identity, or full sum when the target is scalar."""
    if v.data.shape == tuple(shape):
        return v
    if tuple(shape) == ():
        return sum_all(v)
    raise AutodiffError(f"cannot reduce {v.data.shape} to {shape}")


def _binary_shapes(a: Value, b: Value, op: str):
    # equal shapes, or one operand scalar
    if a.data.shape == b.data.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise AutodiffError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# primitives


def add(a: Value, b: Value) -> Value:
    _binary_shapes(a, b, "add")
    return a.tape.record(
        "add",
        a.data + b.data,
        (a, b),
        (lambda g: _sum_to(g, a.shape), lambda g: _sum_to(g, b.shape)),
    )


def sub(a: Value, b: Value) -> Value:
    _binary_shapes(a, b, "sub")
    return a.tape.record(
        "sub",
        a.data - b.data,
        (a, b),
        (lambda g: _sum_to(g, a.shape), lambda g: _sum_to(neg(g), b.shape)),
    )


def neg(a: Value) -> Value:
    return a.tape.record("neg", -a.data, (a,), (lambda g: neg(g),))


def mul(a: Value, b: Value) -> Value:
    _binary_shapes(a, b, "mul")
    return a.tape.record(
        "mul",
        a.data * b.data,
        (a, b),
        (lambda g: _sum_to(mul(g, b), a.shape), lambda g: _sum_to(mul(g, a), b.shape)),
    )


def div(a: Value, b: Value) -> Value:
    _binary_shapes(a, b, "div")
    out = a.tape.record(
        "div",
        a.data / b.data,
        (a, b),
        (
            lambda g: _sum_to(div(g, b), a.shape),
            lambda g: _sum_to(neg(div(mul(g, out), b)), b.shape),
        ),
    )
    return out


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    return a.tape.record(
        "matmul",
        a.data @ b.data,
        (a, b),
        (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
    )


def transpose(a: Value) -> Value:
    if a.data.ndim != 2:
        raise AutodiffError("transpose expects a matrix")
    return a.tape.record("transpose", a.data.T.copy(), (a,), (lambda g: transpose(g),))


def reshape(a: Value, shape) -> Value:
    old = a.data.shape
    return a.tape.record(
        "reshape", a.data.reshape(shape).copy(), (a,), (lambda g: reshape(g, old),)
    )


def power(a: Value, p) -> Value:
    p = float(p)
    return a.tape.record(
        "pow", a.data**p, (a,), (lambda g: mul(g, mul(_lift(a.tape, p), power(a, p - 1.0))),)
    )


def relu(a: Value) -> Value:
    mask = (a.data > 0).astype(np.float64)  # subgradient at 0 is 0
    return a.tape.record(
        "relu", a.data * mask, (a,), (lambda g: mul(g, _lift(a.tape, mask)),)
    )


def leaky_relu(a: Value, slope: float = 0.2) -> Value:
    mask = np.where(a.data > 0, 1.0, slope)
    return a.tape.record(
        "leaky_relu", a.data * mask, (a,), (lambda g: mul(g, _lift(a.tape, mask)),)
    )


def tanh(a: Value) -> Value:
    out = a.tape.record("tanh", np.tanh(a.data), (a,), ())
    node = a.tape.nodes[out.node_id]
    node.vjps = (lambda g: mul(g, sub(_lift(a.tape, 1.0), mul(out, out))),)
    return out


def sigmoid(a: Value) -> Value:
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)), np.exp(a.data) / (1.0 + np.exp(a.data)))
    out = a.tape.record("sigmoid", s, (a,), ())
    node = a.tape.nodes[out.node_id]
    node.vjps = (lambda g: mul(g, mul(out, sub(_lift(a.tape, 1.0), out))),)
    return out


def exp(a: Value) -> Value:
    out = a.tape.record("exp", np.exp(a.data), (a,), ())
    node = a.tape.nodes[out.node_id]
    node.vjps = (lambda g: mul(g, out),)
    return out


def log(a: Value) -> Value:
    return a.tape.record("log", np.log(a.data), (a,), (lambda g: div(g, a),))


def sqrt(a: Value) -> Value:
    out = a.tape.record("sqrt", np.sqrt(a.data), (a,), ())
    node = a.tape.nodes[out.node_id]
    node.vjps = (lambda g: div(g, mul(_lift(a.tape, 2.0), out)),)
    return out


def absolute(a: Value) -> Value:
    sign = np.sign(a.data)
    return a.tape.record(
        "abs", np.abs(a.data), (a,), (lambda g: mul(g, _lift(a.tape, sign)),)
    )


def clamp(a: Value, lo: float, hi: float) -> Value:
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return a.tape.record(
        "clamp",
        np.clip(a.data, lo, hi),
        (a,),
        (lambda g: mul(g, _lift(a.tape, mask)),),
    )


def sum_all(a: Value) -> Value:
    ones = np.ones_like(a.data)
    return a.tape.record(
        "sum", a.data.sum(), (a,), (lambda g: mul(g, _lift(a.tape, ones)),)
    )


def mean_all(a: Value) -> Value:
    w = np.full(a.data.shape, 1.0 / a.data.size)
    return a.tape.record(
        "mean", a.data.mean(), (a,), (lambda g: mul(g, _lift(a.tape, w)),)
    )


def row_sum(a: Value) -> Value:
    """(N, D) -> (N,) sums within each row."""
    if a.data.ndim != 2:
        raise AutodiffError("row_sum expects a matrix")
    d = a.data.shape[1]
    return a.tape.record(
        "row_sum", a.data.sum(axis=1), (a,), (lambda g: expand_cols(g, d),)
    )


def expand_cols(v: Value, n_cols: int) -> Value:
    """(N,) -> (N, n_cols) replicating each entry across its row."""
    if v.data.ndim != 1:
        raise AutodiffError("expand_cols expects a vector")
    return v.tape.record(
        "expand_cols",
        np.repeat(v.data[:, None], n_cols, axis=1),
        (v,),
        (lambda g: row_sum(g),),
    )


def col_sum(a: Value) -> Value:
    """(N, D) -> (D,) sums within each column."""
    if a.data.ndim != 2:
        raise AutodiffError("col_sum expects a matrix")
    n = a.data.shape[0]
    return a.tape.record(
        "col_sum", a.data.sum(axis=0), (a,), (lambda g: tile_rows(g, n),)
    )


def tile_rows(v: Value, n_rows: int) -> Value:
    """(D,) -> (n_rows, D) stacking copies of the vector."""
    if v.data.ndim != 1:
        raise AutodiffError("tile_rows expects a vector")
    return v.tape.record(
        "tile_rows",
        np.repeat(v.data[None, :], n_rows, axis=0),
        (v,),
        (lambda g: col_sum(g),),
    )


def concat_cols(parts: Sequence[Value]) -> Value:
    parts = list(parts)
    if not parts or any(p.data.ndim != 2 for p in parts):
        raise AutodiffError("concat_cols expects matrices")
    n = parts[0].data.shape[0]
    if any(p.data.shape[0] != n for p in parts):
        raise AutodiffError("concat_cols: row counts differ")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    vjps = tuple(
        (lambda lo, hi: (lambda g: slice_cols(g, lo, hi)))(offsets[i], offsets[i + 1])
        for i in range(len(parts))
    )
    return parts[0].tape.record(
        "concat_cols", np.concatenate([p.data for p in parts], axis=1), parts, vjps
    )


def slice_cols(a: Value, start: int, stop: int) -> Value:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.data.shape[1]):
        raise AutodiffError("slice_cols: bad bounds")
    total = a.data.shape[1]
    return a.tape.record(
        "slice_cols",
        a.data[:, start:stop].copy(),
        (a,),
        (lambda g: pad_cols(g, start, total - stop),),
    )


def pad_cols(a: Value, before: int, after: int) -> Value:
    if a.data.ndim != 2:
        raise AutodiffError("pad_cols expects a matrix")
    w = a.data.shape[1]
    return a.tape.record(
        "pad_cols",
        np.pad(a.data, ((0, 0), (before, after))),
        (a,),
        (lambda g: slice_cols(g, before, before + w),),
    )


# ---------------------------------------------------------------------------
# composites


def affine(x: Value, w: Value, b: Value) -> Value:
    """Dense layer x @ w + b with the bias broadcast across rows."""
    return add(matmul(x, w), tile_rows(b, x.data.shape[0]))


def l2_norm_rows(a: Value) -> Value:
    """(N, D) -> (N,) Euclidean norm of each row."""
    return sqrt(row_sum(mul(a, a)))


# ---------------------------------------------------------------------------
# gradients


def grad(output: Value, inputs: Sequence[Value], create_graph: bool = False) -> list[Value]:
    """d(output)/d(input) for each input, accumulated in reverse tape order.

    With ``create_graph=True`` the returned values stay connected to the tape,
    so they can be fed back into ``grad``. Inputs that are not ancestors of the
    output get a zero gradient and a warning.
    """
    if output.data.ndim != 0:
        raise AutodiffError("grad expects a scalar output")
    tape = output.tape
    for v in inputs:
        if v.tape is not tape:
            raise AutodiffError("grad: inputs live on a different tape")

    # consumers always have higher ids than producers, so by the time a node is
    # visited (descending ids) its adjoint is complete
    adjoints: dict[int, Value] = {output.node_id: tape.leaf(1.0, op="seed")}
    for nid in range(output.node_id, -1, -1):
        g = adjoints.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        for parent_id, vjp in zip(node.inputs, node.vjps):
            contrib = vjp(g)
            prev = adjoints.get(parent_id)
            adjoints[parent_id] = contrib if prev is None else add(prev, contrib)

    results = []
    for v in inputs:
        g = adjoints.get(v.node_id)
        if g is None:
            warnings.warn("grad: input is not an ancestor of the output; returning zeros")
            g = tape.leaf(np.zeros_like(v.data), op="zero-grad")
        elif g.data.shape != v.data.shape:
            # scalar adjoint against scalar-shaped input handled by _sum_to already;
            # anything else is a bug in a vjp
            raise AutodiffError("internal: adjoint shape mismatch")
        results.append(g if create_graph else g.detach())
    return results


def finite_diff_check(f, x, eps: float = 1e-4) -> float:
    """Max relative error between grad() and central finite differences.

    ``f`` maps a Value to a scalar Value; ``x`` is an ndarray (or Value, whose
    data is used). Each coordinate is perturbed by +/- eps on a fresh tape.
    """
    x0 = np.asarray(x.data if isinstance(x, Value) else x, dtype=np.float64)

    tape = Tape()
    vx = tape.leaf(x0.copy())
    analytic = grad(f(vx), [vx])[0].data

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        for s, sign in ((eps, 1.0), (-eps, -1.0)):
            xp = flat.copy()
            xp[i] += s
            t = Tape()
            numeric.reshape(-1)[i] += sign * float(f(t.leaf(xp.reshape(x0.shape))).data)
    numeric /= 2 * eps

    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))

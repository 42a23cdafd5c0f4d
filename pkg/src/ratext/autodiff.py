"""Reverse-mode automatic differentiation over dense numpy arrays.

The graph is built eagerly: each primitive returns a :class:`Tensor` that
remembers its differentiable parents and a closure that pushes gradients
to them.  :func:`backward` then walks the graph once in reverse
topological order.  Results that depend on no differentiable input carry
no graph at all, so the same code doubles as a plain numpy forward pass
when parameters are detached.

The primitive set is deliberately small: matmul, add, mul, concat, basic
slicing, column gather, embedding lookup, sigmoid, tanh, softplus, exp,
log, softmax, sum, mean, clamp, and reshape.  Everything else in the
package is composed from these.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractViolation, NumericFault

DEFAULT_DTYPE = np.float64

# When enabled, every primitive checks its output for NaN/Inf and backward
# checks each propagated gradient, raising NumericFault with the op name.
# Off by default; it costs real time on small-tensor workloads.
CHECK_NUMERICS = False


def set_default_dtype(dtype) -> None:
    """Set the dtype used for freshly created constants (float32/float64)."""
    global DEFAULT_DTYPE
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ContractViolation(f"unsupported default dtype: {dtype!r}")
    DEFAULT_DTYPE = dt


def set_check_numerics(flag: bool) -> None:
    global CHECK_NUMERICS
    CHECK_NUMERICS = bool(flag)


class Tensor:
    """A dense array plus the bookkeeping reverse-mode AD needs.

    ``data`` is always a numpy array.  ``grad`` is filled by
    :func:`backward` for every node visited on the path to the loss and
    is ``None`` otherwise.  Tensors are value-immutable by convention:
    nothing in the package mutates ``data`` after construction except the
    optimizer, which only touches leaf parameters between graphs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_op")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._bw = None
        self._op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(
                f"item() needs a single-element tensor, got shape {self.data.shape}"
            )
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(op={self._op}, shape={self.data.shape}, rg={self.requires_grad})"

    # -- graph control ---------------------------------------------------

    def detach(self) -> "Tensor":
        """A view of the same values that gradients will not flow through."""
        return Tensor(self.data)

    # -- numpy-flavoured sugar -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_np(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


# ---------------------------------------------------------------------------
# helpers


def _np(x) -> np.ndarray:
    return np.asarray(x, dtype=DEFAULT_DTYPE)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_np(x))


def _make(data: np.ndarray, parents: Sequence[Tensor], bw, op: str) -> Tensor:
    out = Tensor(data)
    rg = [p for p in parents if p.requires_grad]
    if rg:
        out.requires_grad = True
        out._parents = tuple(rg)
        out._bw = bw
        out._op = op
    if CHECK_NUMERICS and not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite output of op '{op}'")
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Never accumulate in place: the first contribution may alias an
    # upstream gradient buffer shared with a sibling node.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only; stable at both tails.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ b.data.T)
        if b.requires_grad:
            _acc(b, a.data.T @ g)

    return _make(data, (a, b), bw, "matmul")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractViolation("concat of an empty sequence")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def bw(g):
        offset = 0
        for t, size in zip(ts, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                _acc(t, g[tuple(sl)])
            offset += size

    return _make(data, ts, bw, "concat")


def tslice(x, key) -> Tensor:
    """Basic indexing (ints and slices); gradients scatter back in place."""
    x = as_tensor(x)
    data = x.data[key]

    def bw(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[key] += g
            _acc(x, gx)

    return _make(data, (x,), bw, "slice")


def gather_cols(x, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2-D tensor and an integer vector."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise ContractViolation(
            f"gather_cols expects (B,K) and (B,), got {x.data.shape} and {idx.shape}"
        )
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= x.data.shape[1]:
        raise ContractViolation("gather_cols index out of range")
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, idx]

    def bw(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[rows, idx] += g
            _acc(x, gx)

    return _make(data, (x,), bw, "gather_cols")


def embedding(table, ids) -> Tensor:
    """Row lookup into an embedding table; backward scatter-adds."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ContractViolation(f"embedding table must be 2-D, got {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractViolation(
            f"token id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()} max={ids.max()}"
        )
    data = table.data[ids]

    def bw(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            _acc(table, gt)

    return _make(data, (table,), bw, "embedding")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    data = _sigmoid_np(x.data)

    def bw(g):
        if x.requires_grad:
            _acc(x, g * data * (1.0 - data))

    return _make(data, (x,), bw, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def bw(g):
        if x.requires_grad:
            _acc(x, g * (1.0 - data * data))

    return _make(data, (x,), bw, "tanh")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    data = np.logaddexp(0.0, x.data)

    def bw(g):
        if x.requires_grad:
            _acc(x, g * _sigmoid_np(x.data))

    return _make(data, (x,), bw, "softplus")


def exp(x) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def bw(g):
        if x.requires_grad:
            _acc(x, g * data)

    return _make(data, (x,), bw, "exp")


def log(x) -> Tensor:
    """Natural log; the caller is responsible for strictly positive input."""
    x = as_tensor(x)
    data = np.log(x.data)

    def bw(g):
        if x.requires_grad:
            _acc(x, g / x.data)

    return _make(data, (x,), bw, "log")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            _acc(x, data * (g - dot))

    return _make(data, (x,), bw, "softmax")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if x.requires_grad:
            if axis is None:
                _acc(x, np.broadcast_to(g, x.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                _acc(x, np.broadcast_to(ge, x.data.shape).copy())

    return _make(np.asarray(data), (x,), bw, "sum")


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where no clipping bit."""
    x = as_tensor(x)
    data = np.clip(x.data, lo, hi)

    def bw(g):
        if x.requires_grad:
            inside = (x.data >= lo) & (x.data <= hi)
            _acc(x, g * inside)

    return _make(data, (x,), bw, "clamp")


def reshape(x, shape: tuple) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def bw(g):
        if x.requires_grad:
            _acc(x, g.reshape(x.data.shape))

    return _make(data, (x,), bw, "reshape")


def log_prob(p, eps: float = 1e-7) -> Tensor:
    """log of a probability, clamped to [eps, 1-eps] before the log."""
    return log(clamp(p, eps, 1.0 - eps))


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Fill ``grad`` on every differentiable node reachable from ``loss``.

    Gradients from a previous call do not accumulate: each call recomputes
    the reachable subgraph from scratch.  Parameters that do not appear in
    the graph keep ``grad`` untouched; :func:`collect_grads` maps those to
    zeros.
    """
    if not isinstance(loss, Tensor):
        raise ContractViolation("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward expects a scalar loss, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        # Mark at expansion, not at push: a node reachable along several
        # paths must be emitted after every consumer discovered later.
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for n in topo:
        n.grad = None
    loss.grad = np.ones_like(loss.data)

    for n in reversed(topo):
        if n._bw is not None and n.grad is not None:
            n._bw(n.grad)
            if CHECK_NUMERICS:
                for p in n._parents:
                    if p.grad is not None and not np.all(np.isfinite(p.grad)):
                        raise NumericFault(
                            f"non-finite gradient produced by op '{n._op}'"
                        )


def collect_grads(params: dict) -> dict:
    """Gradient map for named parameters after a backward pass.

    Unreachable parameters get zeros.  A non-finite gradient raises
    NumericFault naming the parameter.
    """
    out = {}
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NumericFault(f"non-finite gradient for parameter '{name}'")
        out[name] = g
    return out


def backward_map(loss: Tensor, params: dict) -> dict:
    """Convenience wrapper: run backward, then collect named gradients."""
    for p in params.values():
        p.grad = None
    backward(loss)
    return collect_grads(params)

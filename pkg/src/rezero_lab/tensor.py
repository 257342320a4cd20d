"""Dense float64 tensors with a recorded computation graph for reverse-mode
gradients.

The graph is a define-by-run tape. While a ``Graph`` is active (entered as a
context manager on the current thread), every operation appends its output to
the tape, so append order is a topological order and ``backward`` replays the
tape exactly once in reverse. Without an active graph, operations evaluate
eagerly and record nothing, which is what forward-only evaluation wants.

Tensors are immutable after creation. Only equal-shape binaries and
scalar-with-tensor combinations are supported; layers that need row/column
broadcasts use the dedicated ``*_rowvec`` / ``*_colvec`` operations below.
"""

from __future__ import annotations

import threading
import zlib

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_K = 0.044715


class SeededRng:
    """Deterministic random stream: identical seed, identical draws, bit for bit.

    ``counter`` tracks how many draw calls were made, which makes divergence
    between two supposedly identical runs easy to localize.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, mean: float, stddev: float, shape=()) -> np.ndarray:
        if stddev < 0:
            raise DomainError(f"stddev must be >= 0, got {stddev}")
        self.counter += 1
        return self._gen.normal(mean, stddev, size=shape)

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(lo, hi, size=shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        self.counter += 1
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def child(self, tag: str) -> "SeededRng":
        """Derive an independent stream; stable across runs for the same tag."""
        salt = zlib.crc32(tag.encode("utf8"))
        return SeededRng((self.seed * 0x9E3779B97F4A7C15 + salt + 1) & 0xFFFFFFFFFFFFFFFF)


def _check_shape(shape) -> tuple:
    shape = tuple(int(d) for d in shape)
    for d in shape:
        if d < 1:
            raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


class Tensor:
    """Dense row-major float64 array, optionally recorded on the active graph."""

    __slots__ = ("data", "node_id", "graph")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.node_id = None
        self.graph = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, data={self.data!r})"

    # reductions
    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return reduce_mean(self, axis)

    def var(self, axis=None) -> "Tensor":
        return reduce_var(self, axis)

    # operator sugar; python numbers are treated as constants
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -other)

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; use div_colvec")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Parameter:
    """Trainable tensor with a gradient slot and an optimizer group tag."""

    def __init__(self, value, group: str = "standard", name: str = ""):
        if group not in ("standard", "residual-weight"):
            raise ContractError(f"unknown parameter group {group!r}")
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.grad = Tensor(np.zeros_like(self.value.data))
        self.name = name
        self._group = group

    @property
    def group(self) -> str:
        # immutable after construction
        return self._group

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={list(self.value.shape)}, group={self.group!r})"


class _Node:
    __slots__ = ("tensor", "parent_ids", "vjp")

    def __init__(self, tensor, parent_ids, vjp):
        self.tensor = tensor
        self.parent_ids = parent_ids
        self.vjp = vjp


_ACTIVE = threading.local()


def _graph_stack():
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_graph():
    """The graph currently recording on this thread, or None."""
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Append-only tape of operations; append order is topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.grads: dict[int, Tensor] = {}
        self._index: dict[int, int] = {}

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _node_id_for(self, t: Tensor) -> int:
        nid = self._index.get(id(t))
        if nid is None:
            # first time this graph sees the tensor: register it as a leaf
            nid = len(self.nodes)
            self.nodes.append(_Node(t, (), None))
            self._index[id(t)] = nid
        return nid

    def _record(self, out: Tensor, parents, vjp) -> Tensor:
        parent_ids = tuple(self._node_id_for(p) for p in parents)
        nid = len(self.nodes)
        self.nodes.append(_Node(out, parent_ids, vjp))
        self._index[id(out)] = nid
        out.node_id = nid
        out.graph = self
        return out

    def _pullback(self, output: Tensor, seed: np.ndarray) -> list:
        oid = self._index.get(id(output))
        if oid is None:
            raise ContractError("output tensor was not recorded on this graph")
        grads = [None] * len(self.nodes)
        grads[oid] = np.asarray(seed, dtype=np.float64)
        for nid in range(oid, -1, -1):
            node = self.nodes[nid]
            g = grads[nid]
            if g is None or node.vjp is None:
                continue
            for pid, pg in zip(node.parent_ids, node.vjp(g)):
                if pg is None:
                    continue
                # rebinding (never in-place) so aliased seeds stay intact
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        return grads

    def backward(self, loss: Tensor, params=()) -> dict:
        """Fill ``p.grad`` for every parameter; unreached parameters get zeros.

        Returns the gradient store mapping node id to gradient tensor.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {list(loss.shape)}")
        grads = self._pullback(loss, np.ones_like(loss.data))
        self.grads = {nid: Tensor(g) for nid, g in enumerate(grads) if g is not None}
        for p in params:
            nid = self._index.get(id(p.value))
            g = grads[nid] if nid is not None else None
            if g is None:
                p.grad = Tensor(np.zeros_like(p.value.data))
            else:
                p.grad = Tensor(np.array(g, dtype=np.float64))
        return self.grads

    def grad_wrt(self, t: Tensor):
        """Gradient tensor for ``t`` after backward, or None if unreached."""
        nid = self._index.get(id(t))
        return self.grads.get(nid) if nid is not None else None


def _emit(data, parents, vjp_builder) -> Tensor:
    out = Tensor(data)
    g = active_graph()
    if g is None:
        return out
    return g._record(out, parents, vjp_builder())


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# creation


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)))


def ones(shape) -> Tensor:
    return Tensor(np.ones(_check_shape(shape)))


def constant(shape, c: float) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(c)))


def normal(shape, mean: float, stddev: float, rng: SeededRng) -> Tensor:
    return Tensor(rng.normal(mean, stddev, _check_shape(shape)))


def uniform(shape, lo: float, hi: float, rng: SeededRng) -> Tensor:
    return Tensor(rng.uniform(lo, hi, _check_shape(shape)))


# ---------------------------------------------------------------------------
# binary elementwise (equal shapes or scalar second operand)


def _binary_check(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} need to match "
                     "(or second operand must be scalar)")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "add")
    scalar_b = b.size == 1 and a.shape != b.shape
    b_shape = b.data.shape

    def build():
        if scalar_b:
            return lambda g: (g, g.sum().reshape(b_shape))
        return lambda g: (g, g)

    return _emit(a.data + b.data, (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "sub")
    scalar_b = b.size == 1 and a.shape != b.shape
    b_shape = b.data.shape

    def build():
        if scalar_b:
            return lambda g: (g, -g.sum().reshape(b_shape))
        return lambda g: (g, -g)

    return _emit(a.data - b.data, (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "mul")
    scalar_b = b.size == 1 and a.shape != b.shape
    ad, bd = a.data, b.data
    b_shape = bd.shape

    def build():
        if scalar_b:
            return lambda g: (g * bd, (g * ad).sum().reshape(b_shape))
        return lambda g: (g * bd, g * ad)

    return _emit(ad * bd, (a, b), build)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda: lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.data + float(c), (a,), lambda: lambda g: (g,))


# ---------------------------------------------------------------------------
# unary elementwise


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    # subgradient at exactly 0 is defined as 0
    return _emit(np.maximum(ad, 0.0), (a,), lambda: lambda g: (g * (ad > 0.0),))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))

    def build():
        def vjp(g):
            du = _GELU_C * (1.0 + 3.0 * _GELU_K * x ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du),)
        return vjp

    return _emit(0.5 * x * (1.0 + t), (a,), build)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda: lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    ad = a.data
    return _emit(np.log(ad), (a,), lambda: lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires nonnegative inputs")
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda: lambda g: (g * (0.5 / out),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda: lambda g: (g * (1.0 - out ** 2),))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit(out, (a,), lambda: lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# matrix ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} x {list(b.shape)}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda: lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {list(a.shape)}")
    return _emit(a.data.T.copy(), (a,), lambda: lambda g: (g.T,))


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2 or not (0 <= lo < hi <= a.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{lo}, {hi}) for shape {list(a.shape)}")
    shape = a.data.shape

    def build():
        def vjp(g):
            full = np.zeros(shape)
            full[:, lo:hi] = g
            return (full,)
        return vjp

    return _emit(a.data[:, lo:hi].copy(), (a,), build)


def concat_cols(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts or any(p.ndim != 2 for p in parts):
        raise ShapeError("concat_cols expects a nonempty list of matrices")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    widths = [p.shape[1] for p in parts]

    def build():
        def vjp(g):
            out, start = [], 0
            for w in widths:
                out.append(g[:, start:start + w])
                start += w
            return tuple(out)
        return vjp

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), build)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding gather); gradient scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    if table.ndim != 2 or idx.ndim != 1:
        raise ShapeError("take_rows expects a matrix and a 1-d index list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {table.shape[0]} rows")
    shape = table.data.shape

    def build():
        def vjp(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)
        return vjp

    return _emit(table.data[idx].copy(), (table,), build)


def gather_cols(a: Tensor, indices) -> Tensor:
    """Per-row column pick: out[i] = a[i, indices[i]]."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError("gather_cols expects a matrix and one index per row")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(f"gather_cols: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    shape = a.data.shape

    def build():
        def vjp(g):
            full = np.zeros(shape)
            full[rows, idx] = g
            return (full,)
        return vjp

    return _emit(a.data[rows, idx].copy(), (a,), build)


# ---------------------------------------------------------------------------
# row/column broadcast helpers (the only broadcasting beyond scalars)


def _rowvec_check(x: Tensor, v: Tensor, op: str):
    if x.ndim != 2 or v.shape != (x.shape[1],):
        raise ShapeError(f"{op}: need [n,d] and [d], got {list(x.shape)} and {list(v.shape)}")


def _colvec_check(x: Tensor, v: Tensor, op: str):
    if x.ndim != 2 or v.shape != (x.shape[0],):
        raise ShapeError(f"{op}: need [n,d] and [n], got {list(x.shape)} and {list(v.shape)}")


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    x, v = _as_tensor(x), _as_tensor(v)
    _rowvec_check(x, v, "add_rowvec")
    return _emit(x.data + v.data, (x, v), lambda: lambda g: (g, g.sum(axis=0)))


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    x, v = _as_tensor(x), _as_tensor(v)
    _rowvec_check(x, v, "mul_rowvec")
    xd, vd = x.data, v.data
    return _emit(xd * vd, (x, v), lambda: lambda g: (g * vd, (g * xd).sum(axis=0)))


def sub_colvec(x: Tensor, v: Tensor) -> Tensor:
    x, v = _as_tensor(x), _as_tensor(v)
    _colvec_check(x, v, "sub_colvec")
    return _emit(x.data - v.data[:, None], (x, v), lambda: lambda g: (g, -g.sum(axis=1)))


def div_colvec(x: Tensor, v: Tensor) -> Tensor:
    x, v = _as_tensor(x), _as_tensor(v)
    _colvec_check(x, v, "div_colvec")
    xd, vd = x.data, v.data

    def build():
        def vjp(g):
            return (g / vd[:, None], -(g * xd).sum(axis=1) / vd ** 2)
        return vjp

    return _emit(xd / vd[:, None], (x, v), build)


# ---------------------------------------------------------------------------
# softmax and reductions


def _axis_check(a: Tensor, axis: int, op: str) -> int:
    if not (-a.ndim <= axis < a.ndim):
        raise ShapeError(f"{op}: axis {axis} invalid for shape {list(a.shape)}")
    return axis % a.ndim


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _axis_check(a, axis, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def build():
        def vjp(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
        return vjp

    return _emit(out, (a,), build)


def _spread(g: np.ndarray, shape, axis) -> np.ndarray:
    # broadcast a reduced gradient back over the reduced axis (or all axes)
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _axis_check(a, axis, "sum")
    shape = a.data.shape
    return _emit(a.data.sum(axis=axis), (a,), lambda: lambda g: (_spread(g, shape, axis),))


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _axis_check(a, axis, "mean")
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]
    return _emit(a.data.mean(axis=axis), (a,), lambda: lambda g: (_spread(g, shape, axis) / n,))


def reduce_var(a: Tensor, axis=None) -> Tensor:
    """Population variance (divide by the count, not count-1)."""
    a = _as_tensor(a)
    if axis is not None:
        axis = _axis_check(a, axis, "var")
    ad = a.data
    shape = ad.shape
    n = ad.size if axis is None else shape[axis]
    centered = ad - ad.mean(axis=axis, keepdims=True)

    def build():
        def vjp(g):
            return (_spread(g, shape, axis) * (2.0 / n) * centered,)
        return vjp

    return _emit(ad.var(axis=axis), (a,), build)


# ---------------------------------------------------------------------------
# differentiation entry points


def backward(loss: Tensor, params=()) -> dict:
    """Reverse pass from a scalar loss recorded on some graph."""
    if loss.graph is None:
        raise ContractError("loss was not recorded on a graph; run the forward "
                            "pass inside `with Graph() as g:`")
    return loss.graph.backward(loss, params)


def vjp(f, x: Tensor, u: Tensor) -> Tensor:
    """Vector-Jacobian product u^T (df/dx), reshaped like x."""
    x = _as_tensor(x)
    with Graph() as g:
        y = f(x)
    u = _as_tensor(u)
    if u.shape != y.shape:
        raise ShapeError(f"vjp: cotangent shape {list(u.shape)} != output shape {list(y.shape)}")
    grads = g._pullback(y, u.data)
    nid = g._index.get(id(x))
    gx = grads[nid] if nid is not None else None
    if gx is None:
        gx = np.zeros_like(x.data)
    return Tensor(np.asarray(gx, dtype=np.float64).reshape(x.data.shape))


def grad_check(f, x: Tensor, h: float = 1e-6) -> float:
    """Max relative error between backward gradients and central differences.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    x = _as_tensor(x)
    with Graph() as g:
        y = f(x)
    if y.size != 1:
        raise ContractError("grad_check needs a scalar-valued f")
    grads = g._pullback(y, np.ones_like(y.data))
    nid = g._index.get(id(x))
    analytic = grads[nid] if nid is not None else None
    if analytic is None:
        analytic = np.zeros_like(x.data)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)

    base = x.data.reshape(-1)
    numeric = np.empty_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += h
        lo[i] -= h
        fp = f(Tensor(hi.reshape(x.data.shape))).item()
        fm = f(Tensor(lo.reshape(x.data.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))

"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

The engine is define-by-run: every primitive call appends a node to the
implicit tape (the parent links of the produced Tensor), and ``backward``
on a scalar output walks the tape in reverse topological order.  Only the
primitives the ridership model needs are provided.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UnsupportedOpError

LEAKY_RELU_ALPHA = 0.01


class Tensor:
    """A float64 array with optional gradient tracking.

    Attributes:
        data: the underlying numpy array (always float64).
        requires_grad: whether gradients should flow to this tensor.
        grad: accumulated gradient, same shape as ``data`` (populated by
            ``backward``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from here.

        The output must be scalar (one element).
        """
        if self.data.size != 1:
            raise DimensionError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self._parents and self._backward is None and not self.requires_grad:
            raise UnsupportedOpError("backward: tensor is not part of any computation")

        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(t: Tensor) -> None:
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    stack.append((p, False))

        visit(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None:
                        continue
                    acc = grads.get(id(parent))
                    if acc is None:
                        # Copy: closures may hand back views of the incoming grad.
                        grads[id(parent)] = np.array(pg, dtype=np.float64)
                    else:
                        acc += pg

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar used throughout the layers.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _elementwise_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes("add", a, b)
    out = Tensor(a.data + b.data, _parents=(a, b), op="add",
                 _backward=lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes("sub", a, b)
    return Tensor(a.data - b.data, _parents=(a, b), op="sub",
                  _backward=lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes("mul", a, b)
    return Tensor(a.data * b.data, _parents=(a, b), op="mul",
                  _backward=lambda g: ((a, _unbroadcast(g * b.data, a.shape)),
                                       (b, _unbroadcast(g * a.data, b.shape))))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul: only 1-D/2-D operands supported, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _bw(g):
        ga = gb = None
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            ga, gb = g @ bd.T, ad.T @ g
        elif ad.ndim == 2 and bd.ndim == 1:
            ga, gb = np.outer(g, bd), ad.T @ g
        elif ad.ndim == 1 and bd.ndim == 2:
            ga, gb = g @ bd.T, np.outer(ad, g)
        else:  # vector dot vector -> scalar
            ga, gb = g * bd, g * ad
        return ((a, ga), (b, gb))

    return Tensor(out_data, _parents=(a, b), op="matmul", _backward=_bw)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # tanh form is stable in both tails and needs a single transcendental.
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return Tensor(s, _parents=(x,), op="sigmoid",
                  _backward=lambda g: ((x, g * s * (1.0 - s)),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return Tensor(t, _parents=(x,), op="tanh",
                  _backward=lambda g: ((x, g * (1.0 - t * t)),))


def leaky_relu(x, alpha: float = LEAKY_RELU_ALPHA) -> Tensor:
    x = _as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha)
    return Tensor(x.data * slope, _parents=(x,), op="leaky_relu",
                  _backward=lambda g: ((x, g * slope),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, pieces))

    return Tensor(out_data, _parents=tuple(tensors), op="concat", _backward=_bw)


def slice_cols(x, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"slice_cols: expected 2-D tensor, got {x.shape}")
    out_data = x.data[:, start:stop]

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return ((x, gx),)

    return Tensor(out_data, _parents=(x,), op="slice", _backward=_bw)


def gather_rows(x, idx: np.ndarray) -> Tensor:
    """Select rows by index (duplicates allowed); backward scatter-adds."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = x.data[idx]

    def _bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return Tensor(out_data, _parents=(x,), op="gather", _backward=_bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return Tensor(out_data, _parents=(x,), op="reshape",
                  _backward=lambda g: ((x, g.reshape(x.shape)),))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return Tensor(np.asarray(x.data.sum()), _parents=(x,), op="sum",
                  _backward=lambda g: ((x, np.broadcast_to(g, x.shape).astype(np.float64)),))


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    return Tensor(np.asarray(x.data.mean()), _parents=(x,), op="mean",
                  _backward=lambda g: ((x, np.broadcast_to(g / n, x.shape).astype(np.float64)),))


def segment_softmax(x, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax within groups of a 1-D tensor.

    ``segments[e]`` names the group of entry ``e``; every group present must
    be non-empty for the result to be meaningful.  Entries of each group sum
    to one.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise DimensionError(f"segment_softmax: expected 1-D tensor, got {x.shape}")
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape != x.shape:
        raise DimensionError("segment_softmax: segment ids must align with values")
    # Per-group max subtraction for stability; constant w.r.t. the gradient.
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, x.data)
    e = np.exp(x.data - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, e)
    p = e / denom[segments]

    def _bw(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, p * g)
        return ((x, p * (g - dot[segments])),)

    return Tensor(p, _parents=(x,), op="segment_softmax", _backward=_bw)


def segment_sum(x, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of a 1-D or 2-D tensor into ``num_segments`` buckets."""
    x = _as_tensor(x)
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape[0] != x.data.shape[0]:
        raise DimensionError("segment_sum: segment ids must align with leading axis")
    out_shape = (num_segments,) + x.data.shape[1:]
    out_data = np.zeros(out_shape)
    np.add.at(out_data, segments, x.data)
    return Tensor(out_data, _parents=(x,), op="segment_sum",
                  _backward=lambda g: ((x, g[segments]),))


def _pool_matrix(length: int, kernel: int) -> np.ndarray:
    """Linear operator of 1-D average pooling with replicate edge padding."""
    half = kernel // 2
    mat = np.zeros((length, length))
    for j in range(length):
        for off in range(-half, half + 1):
            mat[j, min(max(j + off, 0), length - 1)] += 1.0 / kernel
    return mat


_POOL_CACHE: dict[tuple[int, int], np.ndarray] = {}


def avg_pool1d(x, kernel: int) -> Tensor:
    """Moving average along the last axis of a 2-D tensor, edge padded.

    Output length equals input length; a constant row is returned unchanged.
    """
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"avg_pool1d: expected 2-D tensor, got {x.shape}")
    if kernel < 1 or kernel % 2 == 0:
        raise DimensionError(f"avg_pool1d: kernel must be odd and positive, got {kernel}")
    key = (x.data.shape[1], kernel)
    mat = _POOL_CACHE.get(key)
    if mat is None:
        mat = _pool_matrix(*key)
        _POOL_CACHE[key] = mat
    out_data = x.data @ mat.T
    return Tensor(out_data, _parents=(x,), op="avg_pool1d",
                  _backward=lambda g: ((x, g @ mat),))


PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "concat": concat,
    "segment_softmax": segment_softmax,
    "segment_sum": segment_sum,
    "avg_pool1d": avg_pool1d,
    "slice_cols": slice_cols,
    "gather_rows": gather_rows,
    "reshape": reshape,
    "sum": sum_all,
    "mean": mean_all,
}


def apply_primitive(name: str, *args, **kwargs) -> Tensor:
    """Dispatch a primitive by name; unknown names are rejected."""
    fn = PRIMITIVES.get(name)
    if fn is None:
        raise UnsupportedOpError(f"unknown primitive '{name}'")
    return fn(*args, **kwargs)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be a zero-argument callable returning a scalar Tensor and be
    re-evaluable (the parameter tensors are perturbed in place and restored).
    Returns the max over all parameter entries of
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f().data)
            flat[j] = orig - eps
            lo = float(f().data)
            flat[j] = orig
            num = (hi - lo) / (2.0 * eps)
            ana = analytic[pi].reshape(-1)[j]
            if not (np.isfinite(num) and np.isfinite(ana)):
                raise NumericError(f"grad_check: non-finite value at parameter {pi}, entry {j}")
            err = abs(ana - num) / max(1e-12, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst

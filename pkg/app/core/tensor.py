"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a new ``Tensor`` holding its parents and a closure that maps
the output gradient onto the parents' gradients. ``backward`` walks the graph
in reverse topological order. Broadcasting is limited to two rules: a 0-d
tensor broadcasts against anything, and a ``[B, C, 1, 1]`` tensor broadcasts
over the spatial axes of a ``[B, C, H, W]`` tensor.
"""

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from app.exceptions.custom_exceptions import ConfigError, InputError, ShapeError, UsageError

logger = logging.getLogger(__name__)

# Ops whose backward rule is deliberately corrupted (negative control for grad_check)
_GRADIENT_FAULTS = set()

# Names every op records on its output; inject_gradient_fault accepts any of them
OPS = (
    "add", "sub", "hadamard", "div", "scale", "exp", "log", "sigmoid", "softplus", "tanh", "relu", "gelu",
    "sum", "reshape", "permute", "concat", "narrow", "matmul", "linear", "softmax", "pad", "resize",
    "conv2d", "channel_affine",
)

ArrayLike = Union[np.ndarray, float, Sequence]


class Tensor:
    """n-dimensional float64 value array with an optional gradient buffer"""

    def __init__(self, values: ArrayLike, requires_grad: bool = False, _parents=(), _op: str = ""):
        if _op:
            self.values = np.asarray(values, dtype=np.float64)
        else:
            self.values = np.array(values, dtype=np.float64)
            if not np.all(np.isfinite(self.values)):
                raise InputError("tensor values must be finite (NaN/Inf rejected)")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = _op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def backward(self) -> None:
        backward(self)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return hadamard(self, _as_tensor(other))

    def __rmul__(self, other):
        return hadamard(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op or 'leaf'})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(values: ArrayLike, requires_grad: bool = False) -> Tensor:
    """Create a leaf tensor (values are copied)"""
    return Tensor(values, requires_grad=requires_grad)


def _make(values: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=requires_grad, _parents=parents, _op=op)
    if requires_grad:
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class Parameter:
    """Named trainable (or frozen) tensor; frozen parameters never carry a gradient"""

    name: str
    tensor: Tensor
    frozen: bool = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape


class ParameterSet:
    """Ordered registry of uniquely named parameters shared by a model's components.

    ``scope`` returns a view writing into the same store under a dotted prefix,
    so names follow ``module.op.index`` paths. All random initialisation draws
    from one seeded generator in creation order.
    """

    def __init__(self, seed: int = 0, prefix: str = "", _store=None, _rng=None):
        self._store: Dict[str, Parameter] = {} if _store is None else _store
        self._rng = np.random.default_rng(seed) if _rng is None else _rng
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def scope(self, name: str, seed: Optional[int] = None) -> "ParameterSet":
        """Sub-registry under ``name``; a seed gives it its own generator"""
        rng = self._rng if seed is None else np.random.default_rng(seed)
        return ParameterSet(prefix=self._full(name), _store=self._store, _rng=rng)

    def add(self, name: str, values: ArrayLike, frozen: bool = False) -> Tensor:
        full = self._full(name)
        if full in self._store:
            raise ConfigError(f"duplicate parameter name: {full}")
        param = Parameter(full, Tensor(values, requires_grad=not frozen), frozen)
        self._store[full] = param
        logger.debug(f"[ParameterSet.add] - {full} shape={param.shape} frozen={frozen}")
        return param.tensor

    def normal(self, name: str, shape: Sequence[int], std: float, frozen: bool = False) -> Tensor:
        return self.add(name, self._rng.normal(0.0, std, size=tuple(shape)), frozen)

    def zeros(self, name: str, shape: Sequence[int], frozen: bool = False) -> Tensor:
        return self.add(name, np.zeros(tuple(shape)), frozen)

    def ones(self, name: str, shape: Sequence[int], frozen: bool = False) -> Tensor:
        return self.add(name, np.ones(tuple(shape)), frozen)

    def conv(self, name: str, c_out: int, c_in: int, k: int, zero: bool = False, frozen: bool = False):
        """He-initialised conv weight [c_out, c_in, k, k] and zero bias"""
        scope = self.scope(name)
        shape = (c_out, c_in, k, k)
        if zero:
            weight = scope.zeros("weight", shape, frozen)
        else:
            weight = scope.normal("weight", shape, math.sqrt(2.0 / (c_in * k * k)), frozen)
        bias = scope.zeros("bias", (c_out,), frozen)
        return weight, bias

    def linear(self, name: str, d_out: int, d_in: int, zero: bool = False, frozen: bool = False):
        """Linear weight [d_out, d_in] (std 1/sqrt(d_in)) and zero bias"""
        scope = self.scope(name)
        if zero:
            weight = scope.zeros("weight", (d_out, d_in), frozen)
        else:
            weight = scope.normal("weight", (d_out, d_in), 1.0 / math.sqrt(d_in), frozen)
        bias = scope.zeros("bias", (d_out,), frozen)
        return weight, bias

    def get(self, name: str) -> Parameter:
        return self._store[self._full(name)]

    def __getitem__(self, name: str) -> Parameter:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __iter__(self) -> Iterator[Parameter]:
        prefix = f"{self.prefix}." if self.prefix else ""
        return (p for n, p in self._store.items() if n.startswith(prefix))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def names(self) -> List[str]:
        return [p.name for p in self]

    def trainable(self) -> List[Parameter]:
        return [p for p in self if not p.frozen]

    def frozen(self) -> List[Parameter]:
        return [p for p in self if p.frozen]

    def zero_grad(self) -> None:
        for param in self.trainable():
            param.tensor.zero_grad()

    def count(self) -> int:
        return int(sum(p.tensor.size for p in self))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(scalar_loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Leaf gradients accumulate across calls; interior gradients are reset.
    """
    if scalar_loss.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {scalar_loss.shape}")
    if not np.isfinite(scalar_loss.values):
        raise InputError("backward on a non-finite loss")
    if not scalar_loss.requires_grad:
        logger.warning("[backward] - loss does not depend on any tensor requiring grad")
        return

    order = _topological_order(scalar_loss)
    for node in order:
        if node._parents:
            node.grad = np.zeros_like(node.values)
    scalar_loss.grad = np.ones_like(scalar_loss.values)

    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad
        if node._op in _GRADIENT_FAULTS:
            g = g * 1.5
        node._backward(g)
    logger.debug(f"[backward] - propagated through {len(order)} nodes")


@contextmanager
def inject_gradient_fault(*ops: str):
    """Corrupt the backward rule of the named ops inside the block"""
    unknown = [op for op in ops if op not in OPS]
    if unknown:
        raise UsageError(f"inject_gradient_fault: unknown ops {unknown}")
    added = [op for op in ops if op not in _GRADIENT_FAULTS]
    _GRADIENT_FAULTS.update(added)
    if ops:
        logger.warning(f"[inject_gradient_fault] - corrupting backward of {sorted(ops)}")
    try:
        yield
    finally:
        _GRADIENT_FAULTS.difference_update(added)


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 4 and b.ndim == 4 and a.shape[:2] == b.shape[:2]:
        if b.shape[2:] == (1, 1) or a.shape[2:] == (1, 1):
            return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def _backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(g, b.shape))

    return _make(a.values + b.values, (a, b), "add", _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def _backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(-g, b.shape))

    return _make(a.values - b.values, (a, b), "sub", _backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "hadamard")

    def _backward(g):
        a._accumulate(_reduce_to(g * b.values, a.shape))
        b._accumulate(_reduce_to(g * a.values, b.shape))

    return _make(a.values * b.values, (a, b), "hadamard", _backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")

    def _backward(g):
        a._accumulate(_reduce_to(g / b.values, a.shape))
        b._accumulate(_reduce_to(-g * a.values / (b.values * b.values), b.shape))

    return _make(a.values / b.values, (a, b), "div", _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def _backward(g):
        x._accumulate(g * factor)

    return _make(x.values * factor, (x,), "scale", _backward)


def exp(x: Tensor) -> Tensor:
    out_values = np.exp(x.values)

    def _backward(g):
        x._accumulate(g * out_values)

    return _make(out_values, (x,), "exp", _backward)


def log(x: Tensor) -> Tensor:
    def _backward(g):
        x._accumulate(g / x.values)

    return _make(np.log(x.values), (x,), "log", _backward)


def sigmoid(x: Tensor) -> Tensor:
    out_values = expit(x.values)

    def _backward(g):
        x._accumulate(g * out_values * (1.0 - out_values))

    return _make(out_values, (x,), "sigmoid", _backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflow"""

    def _backward(g):
        x._accumulate(g * expit(x.values))

    return _make(np.logaddexp(0.0, x.values), (x,), "softplus", _backward)


def tanh(x: Tensor) -> Tensor:
    out_values = np.tanh(x.values)

    def _backward(g):
        x._accumulate(g * (1.0 - out_values * out_values))

    return _make(out_values, (x,), "tanh", _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def _backward(g):
        x._accumulate(g * mask)

    return _make(np.where(mask, x.values, 0.0), (x,), "relu", _backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth everywhere)"""
    v = x.values
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)

    def _backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner))

    return _make(0.5 * v * (1.0 + t), (x,), "gelu", _backward)


def activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return relu(x)
    if name == "gelu":
        return gelu(x)
    if name == "tanh":
        return tanh(x)
    if name == "identity":
        return x
    raise ConfigError(f"unknown activation: {name}")


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_values = x.values.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(out_values, (x,), "sum", _backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def _backward(g):
        x._accumulate(g.reshape(x.shape))

    try:
        out_values = x.values.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from e
    return _make(out_values, (x,), "reshape", _backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        x._accumulate(g.transpose(inverse))

    return _make(x.values.transpose(axes), (x,), "permute", _backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise UsageError("concat of an empty list")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:axis] + t.shape[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t._accumulate(g[tuple(index)])

    return _make(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), "concat", _backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start + length)`` along one axis"""
    axis = axis % x.ndim
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of range for axis extent {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def _backward(g):
        full = np.zeros_like(x.values)
        full[index] = g
        x._accumulate(full)

    return _make(x.values[index].copy(), (x,), "narrow", _backward)


def split(x: Tensor, axis: int, parts: int) -> List[Tensor]:
    extent = x.shape[axis]
    if parts < 1 or extent % parts != 0:
        raise ShapeError(f"split: extent {extent} not divisible into {parts} parts")
    size = extent // parts
    return [narrow(x, axis, i * size, size) for i in range(parts)]


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading axes must match exactly"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def _backward(g):
        a._accumulate(np.matmul(g, np.swapaxes(b.values, -1, -2)))
        b._accumulate(np.matmul(np.swapaxes(a.values, -1, -2), g))

    return _make(np.matmul(a.values, b.values), (a, b), "matmul", _backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x @ weight.T + bias"""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: input last extent {x.shape[-1]} != weight D_in {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({d_out},)")
    out_values = np.matmul(x.values, weight.values.T)
    if bias is not None:
        out_values = out_values + bias.values
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g):
        g2 = g.reshape(-1, d_out)
        x._accumulate(np.matmul(g, weight.values))
        weight._accumulate(g2.T @ x.values.reshape(-1, d_in))
        if bias is not None:
            bias._accumulate(g2.sum(axis=0))

    return _make(out_values, parents, "linear", _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        x._accumulate(out_values * (g - (g * out_values).sum(axis=axis, keepdims=True)))

    return _make(out_values, (x,), "softmax", _backward)


# ---------------------------------------------------------------------------
# Spatial ops
# ---------------------------------------------------------------------------


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str) -> Tensor:
    """out[b, c] = rows @ x[b, c] @ cols.T (pad and resize are both separable linear maps)"""
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a [B,C,H,W] tensor, got {x.shape}")
    out_values = np.matmul(np.matmul(rows, x.values), cols.T)

    def _backward(g):
        x._accumulate(np.matmul(np.matmul(rows.T, g), cols))

    return _make(out_values, (x,), op, _backward)


def _pad_matrix(n: int, p: int, mode: str) -> np.ndarray:
    m = np.zeros((n + 2 * p, n))
    for i in range(n + 2 * p):
        src = i - p
        if 0 <= src < n:
            m[i, src] = 1.0
        elif mode == "replicate":
            m[i, min(max(src, 0), n - 1)] = 1.0
        elif mode != "zeros":
            raise ConfigError(f"unknown padding mode: {mode}")
    return m


def pad(x: Tensor, p: int, mode: str = "zeros") -> Tensor:
    if p == 0:
        return x
    return _separable(x, _pad_matrix(x.shape[2], p, mode), _pad_matrix(x.shape[3], p, mode), "pad")


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel bilinear interpolation weights (identity when sizes match)"""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    if height < 1 or width < 1:
        raise ShapeError(f"bilinear_resize: target size must be positive, got {height}x{width}")
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize: expected [B,C,H,W], got {x.shape}")
    if x.shape[2:] == (height, width):
        return x
    return _separable(x, _resize_matrix(height, x.shape[2]), _resize_matrix(width, x.shape[3]), "resize")


def _conv_valid(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int) -> Tensor:
    batch, c_in, h, w = x.shape
    c_out, c_w, k, k2 = weight.shape
    if c_in != c_w:
        raise ShapeError(f"conv: input has {c_in} channels, weight expects {c_w}")
    if k != k2:
        raise ShapeError(f"conv: non-square kernel {weight.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv: bias shape {bias.shape} != ({c_out},)")
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv: input {h}x{w} too small for kernel {k}")

    # [B, C, H_out, W_out, k, k]
    windows = sliding_window_view(x.values, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    out_values = np.empty((batch, c_out, h_out, w_out))
    # per-sample products keep results independent of batch composition
    for n in range(batch):
        out_values[n] = np.tensordot(weight.values, windows[n], axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out_values += bias.values[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g):
        if weight.requires_grad:
            gw = np.zeros_like(weight.values)
            for n in range(batch):
                gw += np.tensordot(g[n], windows[n], axes=([1, 2], [1, 2]))
            weight._accumulate(gw)
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = np.zeros_like(x.values)
            for n in range(batch):
                cols = np.tensordot(weight.values, g[n], axes=([0], [0]))  # [C, k, k, H_out, W_out]
                for i in range(k):
                    for j in range(k):
                        gx[n, :, i:i + stride * (h_out - 1) + 1:stride, j:j + stride * (w_out - 1) + 1:stride] += cols[:, i, j]
            x._accumulate(gx)

    return _make(out_values, parents, "conv2d", _backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    padding_mode: str = "zeros",
) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    return _conv_valid(pad(x, padding, padding_mode), weight, bias, stride)


def conv3x3(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Shape-preserving 3x3 convolution (padding 1, stride 1)"""
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: weight must be [C_out, C_in, 3, 3], got {weight.shape}")
    return conv2d(x, weight, bias, stride=1, padding=1)


def conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    return conv2d(x, weight, bias)


def channel_affine(x: Tensor, gain: Tensor, shift: Tensor) -> Tensor:
    """Per-channel scale and shift of a [B,C,H,W] tensor (batch-free normalisation)"""
    channels = x.shape[1]
    if gain.shape != (channels,) or shift.shape != (channels,):
        raise ShapeError(f"channel_affine: expected ({channels},) gain/shift, got {gain.shape}/{shift.shape}")
    gv = gain.values[None, :, None, None]

    def _backward(g):
        x._accumulate(g * gv)
        gain._accumulate((g * x.values).sum(axis=(0, 2, 3)))
        shift._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(x.values * gv + shift.values[None, :, None, None], (x, gain, shift), "channel_affine", _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    return reduce_mean(x, axis=(2, 3), keepdims=True)


def flatten_tokens(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, H*W, C]"""
    b, c, h, w = x.shape
    return permute(reshape(x, (b, c, h * w)), (0, 2, 1))


def unflatten_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    """[B, H*W, C] -> [B, C, H, W]"""
    b, n, c = tokens.shape
    if n != height * width:
        raise ShapeError(f"unflatten_tokens: {n} tokens cannot fill a {height}x{width} grid")
    return reshape(permute(tokens, (0, 2, 1)), (b, c, height, width))


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """[B, C*r*r, H, W] -> [B, C, H*r, W*r]; channel ``c*r*r + i*r + j`` lands on offset (i, j)"""
    b, c, h, w = x.shape
    if factor < 1 or c % (factor * factor) != 0:
        raise ShapeError(f"pixel_shuffle: {c} channels do not split into factor {factor} squared")
    if factor == 1:
        return x
    out_c = c // (factor * factor)
    blocks = reshape(x, (b, out_c, factor, factor, h, w))
    return reshape(permute(blocks, (0, 1, 4, 2, 5, 3)), (b, out_c, h * factor, w * factor))

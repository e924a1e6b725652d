"""Minimal float64 tensor runtime with reverse-mode differentiation.

Only the operations needed by the projected set-abstraction / feature
propagation networks are provided: broadcasting matmul and elementwise
product, addition, relu, max pooling along an axis, reshapes, concatenation,
row gathers, sparse linear maps and a masked softmax cross-entropy.

Every op records its parents and a backward closure on the produced tensor.
:func:`backward` walks the recorded graph in reverse topological order.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_DEBUG = os.environ.get("PPSEG_DEBUG", "") not in ("", "0")


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class UsageError(ValueError):
    """Raised for invalid calls (non-scalar loss, bad arguments)."""


class TrainingError(RuntimeError):
    """Raised when an update would introduce non-finite values."""


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return ewise_mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward)


def ewise_mul(a, b) -> Tensor:
    """Broadcasting elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "ewise_mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out_data = np.where(pos, x.data, 0.0)

    def backward(g):
        _accumulate(x, g * pos)

    return _result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# contractions and reductions
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., p, q] @ b[..., q, r]`` with broadcasting
    over the leading batch extents."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not contract")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _result(out_data, (a, b), backward)


def max_pool_axis(x, axis: int) -> tuple[Tensor, np.ndarray]:
    """Maximum over ``axis``; returns the pooled tensor and the argmax.

    Ties go to the lowest index, and only the maximizer receives gradient.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"max_pool_axis: axis {axis} invalid for shape {x.shape}")
    axis %= x.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"max_pool_axis: empty axis {axis} in shape {x.shape}")
    idx = np.argmax(x.data, axis=axis)  # first occurrence on ties
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(x, gx)

    return _result(out_data, (x,), backward), idx


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), (x,), backward)


def sum_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    axis %= x.ndim

    def backward(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _result(x.data.sum(axis=axis), (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and gathers
# ---------------------------------------------------------------------------


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out_data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(out_data, (x,), backward)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), backward)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out_data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[x.shape for x in xs]}: {exc}") from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accumulate(x, part)

    return _result(out_data, xs, backward)


def gather_rows(x, index: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """``out[...] = x[index[...]]`` along the first axis of ``x``.

    Entries where ``valid`` is false are zero and receive no gradient.
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out_data = x.data[index]
    if valid is not None:
        out_data = out_data * valid[(...,) + (None,) * (x.ndim - 1)]

    def backward(g):
        if valid is not None:
            g = g * valid[(...,) + (None,) * (x.ndim - 1)]
        flat_idx = index.reshape(-1)
        flat_g = g.reshape(flat_idx.size, -1)
        scatter = sp.csr_matrix(
            (np.ones(flat_idx.size), (flat_idx, np.arange(flat_idx.size))),
            shape=(x.shape[0], flat_idx.size),
        )
        _accumulate(x, np.asarray(scatter @ flat_g).reshape(x.shape))

    return _result(out_data, (x,), backward)


def sparse_linear(matrix: sp.spmatrix, x) -> Tensor:
    """Apply a constant sparse matrix to the first axis: ``matrix @ x``."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"sparse_linear: matrix {matrix.shape} vs input {x.shape}")
    flat = x.data.reshape(x.shape[0], -1)
    out_data = np.asarray(matrix @ flat).reshape((matrix.shape[0],) + x.shape[1:])

    def backward(g):
        gflat = g.reshape(g.shape[0], -1)
        _accumulate(x, np.asarray(matrix.T @ gflat).reshape(x.shape))

    return _result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, target: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-softmax over positions whose target is not ignored.

    ``logits`` has shape ``(..., C)`` and ``target`` the leading shape. When
    every position is ignored the loss is 0 with zero gradient.
    """
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    if logits.shape[:-1] != target.shape:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs target {target.shape}")
    n_cls = logits.shape[-1]
    keep = target != ignore_index
    if np.any((target[keep] < 0) | (target[keep] >= n_cls)):
        raise UsageError("softmax_cross_entropy: target outside [0, C) and not ignored")
    count = int(keep.sum())
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsumexp
    safe_t = np.where(keep, target, 0)
    picked = np.take_along_axis(logp, safe_t[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count if count else 0.0

    def backward(g):
        if not count:
            _accumulate(logits, np.zeros_like(logits.data))
            return
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe_t[..., None], 1.0, axis=-1)
        _accumulate(logits, g * (p - onehot) * keep[..., None] / count)

    return _result(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> dict[int, np.ndarray]:
    """Fill ``grad`` of every tensor reachable from ``loss``.

    Parameters listed in ``params`` that the loss does not depend on get an
    all-zero gradient. Intermediate gradients are released afterwards.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return {id(p): p.grad for p in params}
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None
    return {id(p): p.grad for p in params}


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class MlpSpec:
    """Pointwise MLP: ``widths[0]`` inputs, one affine layer per following width."""

    widths: tuple[int, ...]
    activations: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise UsageError("MlpSpec needs an input width and at least one layer")
        if any(w <= 0 for w in widths):
            raise UsageError(f"MlpSpec widths must be positive, got {widths}")
        acts = tuple(self.activations) or ("relu",) * (len(widths) - 1)
        if len(acts) != len(widths) - 1 or any(a not in ACTIVATIONS for a in acts):
            raise UsageError(f"MlpSpec activations {acts} invalid for widths {widths}")
        object.__setattr__(self, "activations", acts)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def c_in(self) -> int:
        return self.widths[0]

    @property
    def c_out(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), tuple(d["activations"]), int(d["seed"]))


def init_mlp(spec: MlpSpec) -> dict[str, Tensor]:
    """Glorot-uniform weights and zero biases, seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"w{i}"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        params[f"b{i}"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return params


def mlp_forward(spec: MlpSpec, params: dict[str, Tensor], x) -> Tensor:
    """Shared affine + activation stack applied to the trailing axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != spec.c_in:
        raise DimensionError(f"mlp_forward: input width {x.shape[-1]} != spec width {spec.c_in}")
    lead = x.shape[:-1]
    h = reshape(x, (-1, spec.c_in)) if x.ndim != 2 else x
    for i, act in enumerate(spec.activations):
        h = add(matmul(h, params[f"w{i}"]), params[f"b{i}"])
        if act == "relu":
            h = relu(h)
    return reshape(h, lead + (spec.c_out,)) if x.ndim != 2 else h


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class SGD:
    """Classical momentum SGD: ``v = mu*v + g; p -= lr*v``."""

    params: dict[str, Tensor]
    lr: float
    momentum: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise UsageError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise UsageError("momentum must lie in [0, 1)")

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        sgd_step(self.params, grads, self.lr, self.momentum, self.velocity)


def sgd_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, Tensor]:
    """In-place momentum update of ``params``; returns them for chaining."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    velocity = {} if velocity is None else velocity
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"sgd_step: grad {g.shape} vs param {p.shape} for {name!r}")
        if momentum:
            v = velocity.get(name)
            v = g.copy() if v is None else momentum * v + g
            velocity[name] = v
        else:
            v = g
        p.data -= lr * v
    return params

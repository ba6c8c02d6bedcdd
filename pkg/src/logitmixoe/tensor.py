"""Dense float64 tensors with tape-based reverse-mode autodiff.

Only the handful of operations needed to train small MLPs and
differentiate the OE-family losses are supported. Every operation goes
through :func:`op_forward`, which records a :class:`TapeNode` whenever
any input requires a gradient. :func:`backward` walks the recorded graph
in reverse topological order and then discards it.
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class OpKind(enum.Enum):
    MATMUL = "matmul"
    ADD = "add"
    ADD_BIAS_BROADCAST = "add_bias_broadcast"
    SCALAR_MUL = "scalar_mul"
    MUL = "mul"
    RELU = "relu"
    LOG_SOFTMAX = "log_softmax"
    SUM = "sum"
    MEAN = "mean"
    L2_NORM = "l2_norm"
    SUBTRACT = "subtract"


_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (evaluation only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass
class TapeNode:
    op_kind: OpKind
    inputs: tuple["Tensor", ...]
    saved_context: dict[str, Any] = field(default_factory=dict)


class Tensor:
    """A float64 array with an optional gradient slot.

    ``data`` is never mutated in place by any operation; the optimizer
    rebinds it. ``grad`` is written only by :func:`backward` and
    accumulates across calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return op_forward(OpKind.ADD, [self, as_tensor(other)])

    def __sub__(self, other: "Tensor") -> "Tensor":
        return op_forward(OpKind.SUBTRACT, [self, as_tensor(other)])

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float, np.floating)):
            return op_forward(OpKind.SCALAR_MUL, [self], scalar=float(other))
        return op_forward(OpKind.MUL, [self, as_tensor(other)])

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return op_forward(OpKind.SCALAR_MUL, [self], scalar=-1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return op_forward(OpKind.MATMUL, [self, as_tensor(other)])

    def relu(self) -> "Tensor":
        return op_forward(OpKind.RELU, [self])

    def log_softmax(self) -> "Tensor":
        return op_forward(OpKind.LOG_SOFTMAX, [self])

    def sum(self, axis: int | None = None) -> "Tensor":
        return op_forward(OpKind.SUM, [self], axis=axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return op_forward(OpKind.MEAN, [self], axis=axis)

    def l2_norm(self, axis: int | None = None) -> "Tensor":
        return op_forward(OpKind.L2_NORM, [self], axis=axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# Each op is a (forward, backward) pair. forward(arrays, ctx, **attrs) -> array
# and may stash values in ctx; backward(grad_out, arrays, ctx) -> one gradient
# per input (None for inputs that never need one).

def _check_same(kind: OpKind, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind.value}: shape mismatch {a.shape} vs {b.shape}")


def _matmul_fwd(arrays, ctx, trans_b: bool = False):
    a, b = arrays
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} vs {b.shape}")
    bm = b.T if (trans_b and b.ndim == 2) else b
    if a.shape[1] != bm.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}"
                         + (" (transposed)" if trans_b else ""))
    ctx["trans_b"] = trans_b
    return a @ bm


def _matmul_bwd(g, arrays, ctx):
    a, b = arrays
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if ctx["trans_b"]:
        # out = a @ b.T
        return g @ b, g.T @ a
    return g @ b.T, a.T @ g


def _add_fwd(arrays, ctx):
    a, b = arrays
    _check_same(OpKind.ADD, a, b)
    return a + b


def _add_bwd(g, arrays, ctx):
    return g, g


def _sub_fwd(arrays, ctx):
    a, b = arrays
    _check_same(OpKind.SUBTRACT, a, b)
    return a - b


def _sub_bwd(g, arrays, ctx):
    return g, -g


def _bias_fwd(arrays, ctx):
    x, b = arrays
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias_broadcast: shape mismatch {x.shape} vs {b.shape}")
    return x + b


def _bias_bwd(g, arrays, ctx):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0)


def _scalar_mul_fwd(arrays, ctx, scalar: float):
    ctx["scalar"] = scalar
    return arrays[0] * scalar


def _scalar_mul_bwd(g, arrays, ctx):
    return (g * ctx["scalar"],)


def _mul_fwd(arrays, ctx):
    a, b = arrays
    _check_same(OpKind.MUL, a, b)
    return a * b


def _mul_bwd(g, arrays, ctx):
    a, b = arrays
    return g * b, g * a


def _relu_fwd(arrays, ctx):
    return np.maximum(arrays[0], 0.0)


def _relu_bwd(g, arrays, ctx):
    # subgradient 0 at exactly 0
    return (g * (arrays[0] > 0.0),)


def _log_softmax_fwd(arrays, ctx):
    x = arrays[0]
    if x.ndim == 0:
        raise ShapeError(f"log_softmax: needs a class axis, got shape {x.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ctx["out"] = out
    return out


def _log_softmax_bwd(g, arrays, ctx):
    p = np.exp(ctx["out"])
    return (g - p * g.sum(axis=-1, keepdims=True),)


def _sum_fwd(arrays, ctx, axis=None):
    ctx["axis"] = axis
    return np.asarray(arrays[0].sum(axis=axis))


def _sum_bwd(g, arrays, ctx):
    x = arrays[0]
    axis = ctx["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean_fwd(arrays, ctx, axis=None):
    x = arrays[0]
    ctx["axis"] = axis
    ctx["count"] = x.size if axis is None else x.shape[axis]
    return np.asarray(x.mean(axis=axis))


def _mean_bwd(g, arrays, ctx):
    (gs,) = _sum_bwd(g, arrays, ctx)
    return (gs / ctx["count"],)


def _l2_fwd(arrays, ctx, axis=None):
    x = arrays[0]
    out = np.sqrt((x * x).sum(axis=axis))
    ctx["axis"] = axis
    ctx["out"] = out
    return np.asarray(out)


def _l2_bwd(g, arrays, ctx):
    x = arrays[0]
    axis = ctx["axis"]
    norm = np.asarray(ctx["out"])
    if axis is not None:
        g = np.expand_dims(g, axis)
        norm = np.expand_dims(norm, axis)
    # subgradient 0 where the norm vanishes
    safe = np.where(norm > 0.0, norm, 1.0)
    scale = np.where(norm > 0.0, g / safe, 0.0)
    return (x * scale,)


_OPS: dict[OpKind, tuple[Callable, Callable]] = {
    OpKind.MATMUL: (_matmul_fwd, _matmul_bwd),
    OpKind.ADD: (_add_fwd, _add_bwd),
    OpKind.ADD_BIAS_BROADCAST: (_bias_fwd, _bias_bwd),
    OpKind.SCALAR_MUL: (_scalar_mul_fwd, _scalar_mul_bwd),
    OpKind.MUL: (_mul_fwd, _mul_bwd),
    OpKind.RELU: (_relu_fwd, _relu_bwd),
    OpKind.LOG_SOFTMAX: (_log_softmax_fwd, _log_softmax_bwd),
    OpKind.SUM: (_sum_fwd, _sum_bwd),
    OpKind.MEAN: (_mean_fwd, _mean_bwd),
    OpKind.L2_NORM: (_l2_fwd, _l2_bwd),
    OpKind.SUBTRACT: (_sub_fwd, _sub_bwd),
}


def op_forward(kind: OpKind | str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply operation ``kind`` to ``inputs`` and record it on the tape.

    Raises:
        ShapeError: operand shapes do not conform for ``kind``.
    """
    kind = OpKind(kind)
    inputs = tuple(as_tensor(t) for t in inputs)
    fwd, _ = _OPS[kind]
    ctx: dict[str, Any] = {}
    out = Tensor(fwd([t.data for t in inputs], ctx, **attrs))
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(kind, inputs, ctx)
    return out


def matmul(a, b, trans_b: bool = False) -> Tensor:
    return op_forward(OpKind.MATMUL, [a, b], trans_b=trans_b)


def add_bias(x, b) -> Tensor:
    return op_forward(OpKind.ADD_BIAS_BROADCAST, [x, b])


def relu(x) -> Tensor:
    return op_forward(OpKind.RELU, [x])


def log_softmax(x) -> Tensor:
    return op_forward(OpKind.LOG_SOFTMAX, [x])


def l2_norm(x, axis: int | None = None) -> Tensor:
    return op_forward(OpKind.L2_NORM, [x], axis=axis)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(output: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``output`` into every leaf that requires grad.

    Gradients are added to each leaf's ``grad`` (reset them before the next
    step). The recorded graph is released afterwards. Returns a map from
    leaf tensor to the gradient contributed by this call.
    """
    if output.data.size != 1 or output.ndim > 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ValueError("backward called on a tensor that does not require grad")

    order = _topo_order(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None:
            leaves[t] = g
            continue
        _, bwd = _OPS[node.op_kind]
        in_grads = bwd(g, [p.data for p in node.inputs], node.saved_context)
        for parent, pg in zip(node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    for leaf, g in leaves.items():
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    for t in order:
        t._node = None
    return leaves


def grad_check(f: Callable[..., Tensor], inputs: Sequence, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps the input tensors to a scalar tensor. The error for each
    coordinate is ``|autodiff - fd| / max(1, |fd|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = [np.array(as_tensor(x).data, dtype=np.float64) for x in inputs]

    leaves = [Tensor(a, requires_grad=True) for a in base]
    out = f(*leaves)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
    backward(out)
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def value(arrays) -> float:
        with no_grad():
            return float(f(*[Tensor(a) for a in arrays]).data)

    worst = 0.0
    for k, a in enumerate(base):
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[k][idx] += step
            minus[k][idx] -= step
            fd = (value(plus) - value(minus)) / (2.0 * step)
            err = abs(analytic[k][idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst

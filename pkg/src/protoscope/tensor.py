"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` that remembers its operands and a
closure mapping the output gradient to operand gradients. The graph is
built fresh on every forward pass; :func:`backward` walks it in reverse
topological order. Gradients flow to inputs as well as parameters, which is
what prototype synthesis needs.

Only the handful of ops used by the network and the tests are provided.
Most accept a single vector or a leading batch axis.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError, UsageError

LOG_CLAMP = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An immutable float64 array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        _parents: tuple[Tensor, ...] = (),
        _backward: BackwardFn | None = None,
        op: str = "leaf",
    ):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value produced by '{op}'")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar, mostly for tests and small graphs
    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> Tensor:
        return add(as_tensor(other), neg(self))

    def __neg__(self) -> Tensor:
        return neg(self)

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def sum(self) -> Tensor:
        return tsum(self)

    def mean(self) -> Tensor:
        return tmean(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple[Tensor, ...], fn: BackwardFn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=needs,
        _parents=parents if needs else (),
        _backward=fn if needs else None,
        op=op,
    )


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), fn, "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), fn, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")

    def fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), fn, "matmul")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def tmean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _result(
        a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean"
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def affine(x, W, b) -> Tensor:
    """``x @ W.T + b`` for a vector ``x`` of length q or a batch of shape (n, q)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.ndim != 1 or x.ndim not in (1, 2):
        raise DimensionError(f"affine: bad ranks x{x.shape} W{W.shape} b{b.shape}")
    k, q = W.shape
    if x.shape[-1] != q or b.shape[0] != k:
        raise DimensionError(f"affine: x{x.shape} incompatible with W{W.shape}, b{b.shape}")
    out = x.data @ W.data.T + b.data

    def fn(g):
        gx = g @ W.data
        if x.ndim == 1:
            gW = np.outer(g, x.data)
            gb = g
        else:
            gW = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gW, gb

    return _result(out, (x, W, b), fn, "affine")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    # subgradient at exactly 0 is 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(z) -> Tensor:
    """Softmax over the last axis, with max-subtraction for stability."""
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[-1] < 2:
        raise DimensionError("softmax needs at least two classes")
    p = _softmax(z.data)

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (z,), fn, "softmax")


def _targets(target, rows: int | None, k: int) -> np.ndarray:
    t = np.asarray(target, dtype=np.int64)
    expect = () if rows is None else (rows,)
    if t.shape != expect:
        raise DimensionError(f"target shape {t.shape} does not match {expect}")
    if np.any((t < 0) | (t >= k)):
        raise DimensionError(f"target outside [0, {k})")
    return t


def cross_entropy(p, target) -> Tensor:
    """``-log p[target]`` with p clamped below at 1e-12; batches are averaged."""
    p = as_tensor(p)
    if p.ndim == 1:
        t = _targets(target, None, p.shape[0])
        pt = p.data[t]
        loss = -np.log(max(pt, LOG_CLAMP))

        def fn(g):
            gp = np.zeros_like(p.data)
            if pt > LOG_CLAMP:
                gp[t] = -g / pt
            return (gp,)

        return _result(loss, (p,), fn, "cross_entropy")

    if p.ndim != 2:
        raise DimensionError("cross_entropy expects a vector or a batch of vectors")
    n, k = p.shape
    t = _targets(target, n, k)
    rows = np.arange(n)
    pt = p.data[rows, t]
    loss = -np.log(np.maximum(pt, LOG_CLAMP)).mean()

    def fn(g):
        gp = np.zeros_like(p.data)
        gp[rows, t] = np.where(pt > LOG_CLAMP, -g / (n * np.maximum(pt, LOG_CLAMP)), 0.0)
        return (gp,)

    return _result(loss, (p,), fn, "cross_entropy")


def softmax_cross_entropy(z, target) -> Tensor:
    """Fused ``cross_entropy(softmax(z), target)`` computed from logits.

    Uses log-sum-exp, so the loss stays exact (no clamp) and the logit
    gradient ``p - y`` never vanishes on saturated outputs.
    """
    z = as_tensor(z)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise DimensionError(f"softmax_cross_entropy: bad logits shape {z.shape}")
    k = z.shape[-1]
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    p = np.exp(shifted - lse[..., None])
    if z.ndim == 1:
        t = _targets(target, None, k)
        loss = lse - shifted[t]

        def fn(g):
            d = p.copy()
            d[t] -= 1.0
            return (g * d,)

        return _result(loss, (z,), fn, "softmax_cross_entropy")

    n = z.shape[0]
    t = _targets(target, n, k)
    rows = np.arange(n)
    loss = (lse - shifted[rows, t]).mean()

    def fn(g):
        d = p.copy()
        d[rows, t] -= 1.0
        return (g * d / n,)

    return _result(loss, (z,), fn, "softmax_cross_entropy")


def conv_gather_index(
    in_shape: tuple[int, int, int], kernel: int, stride: int
) -> tuple[np.ndarray, tuple[int, int]]:
    """Flat input indices for every (output position, C*K*K patch element)."""
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {kernel} larger than input {h}x{w}")
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(kernel), np.arange(kernel), indexing="ij")
    patch = (ci * h * w + ki * w + kj).reshape(-1)
    oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    origin = (oi * stride * w + oj * stride).reshape(-1)
    return origin[:, None] + patch[None, :], (oh, ow)


def conv2d(x, weight, bias, in_shape: tuple[int, int, int], stride: int = 1) -> Tensor:
    """Valid-padding 2-D convolution on flattened (C*H*W) inputs.

    ``weight`` has shape (F, C*K*K), ``bias`` shape (F,). Output is flattened
    channel-major to (F*OH*OW,) or (n, F*OH*OW).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    c, h, w = in_shape
    if x.shape[-1] != c * h * w:
        raise DimensionError(f"conv2d: input length {x.shape[-1]} != {c}*{h}*{w}")
    f, patch = weight.shape
    kernel = int(round(np.sqrt(patch / c)))
    if c * kernel * kernel != patch or bias.shape != (f,):
        raise DimensionError(f"conv2d: weight {weight.shape} / bias {bias.shape} mismatch")
    idx, _ = conv_gather_index(in_shape, kernel, stride)
    batched = x.ndim == 2
    xb = x.data if batched else x.data[None, :]
    n, positions = xb.shape[0], idx.shape[0]
    cols = xb[:, idx]  # (n, L, CKK)
    out = cols @ weight.data.T + bias.data  # (n, L, F)
    flat = out.transpose(0, 2, 1).reshape(n, f * positions)

    def fn(g):
        g3 = g.reshape(n, f, positions).transpose(0, 2, 1)  # (n, L, F)
        gw = np.einsum("nlf,nlc->fc", g3, cols)
        gb = g3.sum(axis=(0, 1))
        gcols = g3 @ weight.data
        gx = np.zeros_like(xb)
        for i in range(n):
            np.add.at(gx[i], idx, gcols[i])
        return (gx if batched else gx[0]), gw, gb

    return _result(flat if batched else flat[0], (x, weight, bias), fn, "conv2d")


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``root``.

    Gradients accumulate into existing ``.grad`` values, so call
    :meth:`Tensor.zero_grad` between independent passes.
    """
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise UsageError("root does not depend on any tensor with requires_grad")
    order = _topological(root)
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg

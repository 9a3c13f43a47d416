"""Minimal dense tensor engine with reverse-mode differentiation.

Arrays are numpy ndarrays; every op records its parents and a closure that
maps the output gradient to parent gradients.  Ops preserve the floating
dtype of their inputs (float32 for models, float64 is used by gradient
checks).  Layer ops accept an unbatched ``[C, H, W]`` input or a batched
``[N, C, H, W]`` one.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .rng import make_rng

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording the backward graph."""
    global _GRAD_ENABLED
    previous, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into the ``grad`` of every leaf that requires it."""
        if self.data.size != 1:
            _raise_not_scalar(self.shape)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.astype(node.data.dtype, copy=False) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


class Parameter(Tensor):
    """Trainable leaf tensor carrying Adam moments."""

    __slots__ = ("m", "v", "step_count", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step_count = 0
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _raise_not_scalar(shape):
    raise ValueError(f"backward requires a scalar loss, got shape {shape}")


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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _lift(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the tensor operand's dtype
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    out = a.data / b.data
    return Tensor._result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    return Tensor._result(
        a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a: Tensor) -> Tensor:
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant mask."""
    a, b = _lift(a, b)
    cond = np.asarray(cond, dtype=bool)
    return Tensor._result(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0), a.shape), _unbroadcast(np.where(cond, 0, g), b.shape)),
    )


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a, b)
    pick_a = a.data >= b.data
    return Tensor._result(
        np.maximum(a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


# reductions and shape -------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return Tensor._result(np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.asarray(a.data[index]), (a,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._result(
        out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    )


# layers ---------------------------------------------------------------------


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1, *x.shape)), True
    if x.ndim != 4:
        raise ShapeError(f"expected [C,H,W] or [N,C,H,W] input, got shape {x.shape}")
    return x, False


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``kernels`` has shape ``[C_out, C_in, k, k]`` and ``bias`` ``[C_out]``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    x4, squeeze = _batched(x)
    n, c_in, h, w = x4.shape
    c_out, k_in, kh, kw = kernels.shape
    if k_in != c_in:
        raise ShapeError(
            f"input channels do not match kernel channels: input {x.shape}, kernels {kernels.shape}"
        )
    if kh != kw:
        raise ShapeError(f"only square kernels are supported, got {kernels.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    k = kh
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {h}x{w} (padding {padding})")
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)

    xp = x4.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = xp.strides
    windows = as_strided(
        xp, (n, ho, wo, c_in, k, k), (sn, sh * stride, sw * stride, sc, sh, sw), writeable=False
    )
    cols = windows.reshape(n * ho * wo, c_in * k * k)
    wmat = kernels.data.reshape(c_out, -1)
    out = cols @ wmat.T
    parents: list[Tensor] = [x4, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
        out = out + bias.data
        parents.append(bias)
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        g_w = (gm.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        g_x = None
        if x4.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c_in, k, k)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            g_x = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [g_x, g_w]
        if bias is not None:
            grads.append(gm.sum(axis=0))
        return tuple(grads)

    result = Tensor._result(out, parents, backward)
    return reshape(result, result.shape[1:]) if squeeze else result


def pool2d(x, kind: str = "avg", global_pool: bool = True, size: int = 2) -> Tensor:
    """Max or average pooling.

    With ``global_pool`` the spatial axes collapse to one value per channel
    (``[C]`` or ``[N, C]``); otherwise non-overlapping ``size x size`` windows
    are pooled and trailing rows/columns that do not fill a window are dropped.
    """
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    x = as_tensor(x)
    x4, squeeze = _batched(x)
    n, c, h, w = x4.shape
    if h == 0 or w == 0:
        raise ShapeError(f"cannot pool an empty map of shape {x.shape}")
    if global_pool:
        flat = reshape(x4, (n, c, h * w))
        if kind == "avg":
            out = tmean(flat, axis=2)
        else:
            idx = flat.data.argmax(axis=2)

            def backward(g):
                full = np.zeros_like(flat.data)
                np.put_along_axis(full, idx[..., None], g[..., None], axis=2)
                return (full,)

            out = Tensor._result(
                np.take_along_axis(flat.data, idx[..., None], axis=2)[..., 0], (flat,), backward
            )
        return reshape(out, (c,)) if squeeze else out

    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool window {size} larger than map {h}x{w}")
    cropped = x4[:, :, : ho * size, : wo * size] if (h % size or w % size) else x4
    blocks = reshape(cropped, (n, c, ho, size, wo, size))
    if kind == "avg":
        out = tmean(blocks, axis=(3, 5))
    else:
        arr = blocks.data.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
        idx = arr.argmax(axis=4)

        def backward(g):
            full = np.zeros_like(arr)
            np.put_along_axis(full, idx[..., None], g[..., None], axis=4)
            back = full.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
            return (np.ascontiguousarray(back),)

        out = Tensor._result(np.take_along_axis(arr, idx[..., None], axis=4)[..., 0], (blocks,), backward)
    return reshape(out, out.shape[1:]) if squeeze else out


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data >= 0, 1.0, slope).astype(x.dtype)
    return Tensor._result(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x) -> Tensor:
    """Logistic function 1 / (1 + exp(-x)), evaluated without overflow."""
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1 - out),))


logsig = sigmoid


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(z.dtype)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._result(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def activation(kind: str, x, slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "logsig":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis=-1)
    raise ValueError(f"unknown activation {kind!r}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(
        a.data @ b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.ndim > 1 else g @ b.data.T,
            np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g),
        ),
    )


def linear(x, weight, bias=None) -> Tensor:
    """``out_j = sum_i x_i W_ij + b_j`` for ``x`` of shape ``[n]`` or ``[N, n]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear dimension mismatch: x {x.shape}, W {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match W {weight.shape}")
        out = add(out, bias)
    return out


def dropout_mask(shape, p: float, rng_seed: int, *stream: int | str, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``p``, else ``1 / (1 - p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    keep = make_rng(rng_seed, *stream).random(shape) >= p
    return (keep / (1.0 - p)).astype(dtype)


def dropout(x, p: float, rng_seed: int = 0, training: bool = True) -> Tensor:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0:
        return x
    return mul(x, Tensor(dropout_mask(x.shape, p, rng_seed, dtype=x.dtype)))


def parameters_zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()

"""
Differentiable primitives over batch x height x width x channels tensors.

Every op computes its forward pass with numpy and, when a tape is active
and an input requires grad, records a node whose backward closure calls the
module-level ``_<op>_grad`` helper below it.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .constants import BN_EPSILON, BN_MOMENTUM, LEAKY_SLOPE
from .exceptions import ConfigError, ShapeError
from .tensor import BackwardFn, Node, Tensor, TensorLike, current_tape, get_precision

Axis = Optional[Union[int, Tuple[int, ...]]]


def _as_tensor(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_precision().dtype
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def _emit(
    op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn
) -> Tensor:
    data = np.asarray(data)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad, dtype=data.dtype)
    tape = current_tape()
    if requires_grad and tape is not None:
        tape.record(Node(op, tuple(inputs), out, backward))
    return out


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    """Result shape of an elementwise op; only singleton axes expand."""
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) != len(b):
        raise ShapeError(f"cannot broadcast shapes {a} and {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    pairs = enumerate(zip(shape, grad.shape))
    axes = tuple(i for i, (s, g) in pairs if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    b = _as_tensor(b)
    return _as_tensor(a, like=b), b


def add(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise sum with singleton broadcasting."""
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    return _emit(
        "add", (a, b), a.data + b.data, lambda g: _add_grad(g, a.shape, b.shape)
    )


def _add_grad(g: np.ndarray, a_shape: Tuple[int, ...], b_shape: Tuple[int, ...]):
    return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    return _emit(
        "sub", (a, b), a.data - b.data, lambda g: _sub_grad(g, a.shape, b.shape)
    )


def _sub_grad(g: np.ndarray, a_shape: Tuple[int, ...], b_shape: Tuple[int, ...]):
    return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise product; a [B,H,W,1] map scales every channel of [B,H,W,C]."""
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    return _emit(
        "mul", (a, b), a.data * b.data, lambda g: _mul_grad(g, a.data, b.data)
    )


def _mul_grad(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    return _emit(
        "div", (a, b), a.data / b.data, lambda g: _div_grad(g, a.data, b.data)
    )


def _div_grad(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def neg(x: Tensor) -> Tensor:
    return _emit("neg", (x,), -x.data, lambda g: (-g,))


def log(x: Tensor) -> Tensor:
    return _emit("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; the gradient is zero where clamping applied."""
    return _emit(
        "clip",
        (x,),
        np.clip(x.data, low, high),
        lambda g: (g * ((x.data > low) & (x.data < high)),),
    )


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axes(axis, x.ndim)
    return _emit(
        "sum",
        (x,),
        x.data.sum(axis=axes, keepdims=keepdims),
        lambda g: (_sum_grad(g, x.shape, axes, keepdims),),
    )


def _sum_grad(
    g: np.ndarray, shape: Tuple[int, ...], axes: Tuple[int, ...], keepdims: bool
) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return _emit(
        "mean",
        (x,),
        x.data.mean(axis=axes, keepdims=keepdims),
        lambda g: (_sum_grad(g, x.shape, axes, keepdims) / count,),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit(
        "reshape", (x,), x.data.reshape(tuple(shape)), lambda g: (g.reshape(x.shape),)
    )


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if broadcast_shape(x.shape, shape) != shape:
        raise ShapeError(f"cannot broadcast shape {x.shape} to {shape}")
    return _emit(
        "broadcast_to",
        (x,),
        np.broadcast_to(x.data, shape),
        lambda g: (_unbroadcast(g, x.shape),),
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """
    Join tensors along one axis (the channel axis by default).

    Raises:
        ShapeError: If the inputs disagree on any other dimension
    """
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    reference = tensors[0].shape
    for t in tensors[1:]:
        other = t.shape
        if len(other) != ndim or any(
            other[i] != reference[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(f"cannot concatenate shapes {reference} and {other}")
    sizes = [t.shape[axis] for t in tensors]
    return _emit(
        "concat",
        tensors,
        np.concatenate([t.data for t in tensors], axis=axis),
        lambda g: _concat_grad(g, sizes, axis),
    )


def _concat_grad(g: np.ndarray, sizes: List[int], axis: int) -> List[np.ndarray]:
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``start:stop`` of the last axis."""
    if not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(f"channel slice {start}:{stop} out of range for {x.shape}")
    return _emit(
        "slice_channels",
        (x,),
        x.data[..., start:stop],
        lambda g: (_slice_channels_grad(g, x.shape, start, stop),),
    )


def _slice_channels_grad(
    g: np.ndarray, shape: Tuple[int, ...], start: int, stop: int
) -> np.ndarray:
    full = np.zeros(shape, dtype=g.dtype)
    full[..., start:stop] = g
    return full


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def conv_geometry(
    height: int,
    width: int,
    kernel: Tuple[int, int],
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tuple[int, int, int, int]:
    """
    Padding and output size of a 2D convolution.

    "same" pads symmetrically by half the dilated kernel extent, so stride 1
    keeps the spatial size.

    Returns:
        (pad_top_bottom, pad_left_right, out_height, out_width)
    """
    kh, kw = kernel
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel spatial dims must be odd, got {kernel}")
    if stride < 1 or dilation < 1:
        raise ConfigError(f"stride and dilation must be >= 1, got {stride}, {dilation}")
    extent_h = dilation * (kh - 1) + 1
    extent_w = dilation * (kw - 1) + 1
    if padding == "same":
        pad_h, pad_w = (extent_h - 1) // 2, (extent_w - 1) // 2
    elif padding == "valid":
        pad_h = pad_w = 0
    else:
        raise ConfigError(f"unknown padding '{padding}'")
    out_h = (height + 2 * pad_h - extent_h) // stride + 1
    out_w = (width + 2 * pad_w - extent_w) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"kernel {kernel} with dilation {dilation} does not fit "
            f"input {height}x{width}"
        )
    return pad_h, pad_w, out_h, out_w


def _tap(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def _window(
    i: int, j: int, dilation: int, stride: int, out_size: Tuple[int, int]
) -> Tuple[slice, ...]:
    """Index of the input pixels kernel tap (i, j) reads, over a BHWC array."""
    rows = _tap(i * dilation, stride, out_size[0])
    cols = _tap(j * dilation, stride, out_size[1])
    return (slice(None), rows, cols, slice(None))


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """
    Dilated 2D cross-correlation.

    Args:
        x: Input [B,H,W,Cin]
        kernel: Weights [kh,kw,Cin,Cout], odd spatial dims
        bias: Optional [Cout]
        stride: Output subsampling step
        dilation: Spacing between kernel taps
        padding: "same" or "valid"

    Returns:
        Tensor [B,H',W',Cout]

    Raises:
        ShapeError: If input and kernel channel counts differ
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d expects input [B,H,W,C] and kernel [kh,kw,Cin,Cout], "
            f"got {x.shape} and {kernel.shape}"
        )
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(
            f"conv2d input channels do not match kernel: input {x.shape}, "
            f"kernel {kernel.shape}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(
            f"conv2d bias {bias.shape} does not match kernel {kernel.shape}"
        )
    batch, height, width, _ = x.shape
    pad_h, pad_w, out_h, out_w = conv_geometry(
        height, width, (kh, kw), stride, dilation, padding
    )
    xp = np.pad(x.data, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)))
    dtype = np.result_type(x.data, kernel.data)
    out = np.zeros((batch, out_h, out_w, cout), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            window = xp[_window(i, j, dilation, stride, (out_h, out_w))]
            out += np.tensordot(window, kernel.data[i, j], axes=([3], [0]))
    if bias is not None:
        out += bias.data
    inputs: Tuple[Tensor, ...] = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit(
        "conv2d",
        inputs,
        out,
        lambda g: _conv2d_grad(
            g,
            xp,
            kernel.data,
            (pad_h, pad_w),
            (height, width),
            stride,
            dilation,
            bias is not None,
        ),
    )


def _conv2d_grad(
    g: np.ndarray,
    xp: np.ndarray,
    kernel: np.ndarray,
    pads: Tuple[int, int],
    size: Tuple[int, int],
    stride: int,
    dilation: int,
    has_bias: bool,
):
    kh, kw = kernel.shape[:2]
    out_h, out_w = g.shape[1:3]
    grad_xp = np.zeros_like(xp)
    grad_k = np.zeros_like(kernel)
    for i in range(kh):
        for j in range(kw):
            taps = _window(i, j, dilation, stride, (out_h, out_w))
            grad_k[i, j] = np.tensordot(xp[taps], g, axes=([0, 1, 2], [0, 1, 2]))
            grad_xp[taps] += np.tensordot(g, kernel[i, j], axes=([3], [1]))
    pad_h, pad_w = pads
    grad_x = grad_xp[:, pad_h : pad_h + size[0], pad_w : pad_w + size[1], :]
    if has_bias:
        return grad_x, grad_k, g.sum(axis=(0, 1, 2))
    return grad_x, grad_k


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ weight + bias for x [B,Cin] and weight [Cin,Cout]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"dense cannot multiply input {x.shape} by weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"dense bias {bias.shape} does not match weight {weight.shape}"
        )
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    inputs: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)
    has_bias = bias is not None
    return _emit(
        "dense", inputs, out, lambda g: _dense_grad(g, x.data, weight.data, has_bias)
    )


def _dense_grad(g: np.ndarray, x: np.ndarray, w: np.ndarray, has_bias: bool):
    grads = [g @ w.T, x.T @ g]
    if has_bias:
        grads.append(g.sum(axis=0))
    return grads


@dataclass
class RunningStats:
    """Per-channel moving mean and variance used by batch norm in eval mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype: Optional[np.dtype] = None) -> "RunningStats":
        dtype = dtype or get_precision().dtype
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    epsilon: float = BN_EPSILON,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """
    Per-channel normalization over every axis but the last.

    Training mode normalizes with batch statistics and folds them into
    ``stats`` by exponential moving average; eval mode uses ``stats``.

    Raises:
        ConfigError: If epsilon is not positive
        ShapeError: If gamma/beta do not match the channel axis
    """
    if epsilon <= 0:
        raise ConfigError(f"batch norm epsilon must be > 0, got {epsilon}")
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batch norm parameters {gamma.shape}/{beta.shape} do not match "
            f"input {x.shape}"
        )
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean[...] = momentum * stats.mean + (1.0 - momentum) * mu
        stats.var[...] = momentum * stats.var + (1.0 - momentum) * var
    else:
        mu = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data
    return _emit(
        "batch_norm",
        (x, gamma, beta),
        out,
        lambda g: _batch_norm_grad(g, xhat, inv_std, gamma.data, axes, training),
    )


def _batch_norm_grad(
    g: np.ndarray,
    xhat: np.ndarray,
    inv_std: np.ndarray,
    gamma: np.ndarray,
    axes: Tuple[int, ...],
    training: bool,
):
    grad_xhat = g * gamma
    if training:
        n = xhat.size // xhat.shape[-1]
        grad_x = (inv_std / n) * (
            n * grad_xhat
            - grad_xhat.sum(axis=axes)
            - xhat * (grad_xhat * xhat).sum(axis=axes)
        )
    else:
        grad_x = grad_xhat * inv_std
    return grad_x, (g * xhat).sum(axis=axes), g.sum(axis=axes)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """x where x >= 0, slope * x elsewhere."""
    if not 0.0 <= slope < 1.0:
        raise ConfigError(f"leaky ReLU slope must lie in [0, 1), got {slope}")
    positive = x.data >= 0
    return _emit(
        "leaky_relu",
        (x,),
        np.where(positive, x.data, slope * x.data),
        lambda g: (_leaky_relu_grad(g, positive, slope),),
    )


def _leaky_relu_grad(g: np.ndarray, positive: np.ndarray, slope: float) -> np.ndarray:
    return np.where(positive, g, slope * g)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _emit("sigmoid", (x,), s, lambda g: (_sigmoid_grad(g, s),))


def _sigmoid_grad(g: np.ndarray, s: np.ndarray) -> np.ndarray:
    return g * s * (1.0 - s)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (channels by default)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", (x,), s, lambda g: (_softmax_grad(g, s, axis),))


def _softmax_grad(g: np.ndarray, s: np.ndarray, axis: int) -> np.ndarray:
    return s * (g - (g * s).sum(axis=axis, keepdims=True))


def max_pool(x: Tensor, window: int = 2) -> Tensor:
    """
    Non-overlapping spatial max pooling.

    Raises:
        ShapeError: If height or width is not a multiple of the window
    """
    batch, height, width, channels = x.shape
    if height % window or width % window:
        raise ShapeError(f"max_pool window {window} does not tile input {x.shape}")
    oh, ow = height // window, width // window
    blocks = (
        x.data.reshape(batch, oh, window, ow, window, channels)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(batch, oh, ow, channels, window * window)
    )
    winner = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]
    return _emit(
        "max_pool",
        (x,),
        out,
        lambda g: (_max_pool_grad(g, winner, x.shape, window),),
    )


def _max_pool_grad(
    g: np.ndarray, winner: np.ndarray, shape: Tuple[int, ...], window: int
) -> np.ndarray:
    batch, height, width, channels = shape
    oh, ow = height // window, width // window
    blocks = np.zeros((batch, oh, ow, channels, window * window), dtype=g.dtype)
    np.put_along_axis(blocks, winner[..., None], g[..., None], axis=-1)
    return (
        blocks.reshape(batch, oh, ow, channels, window, window)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(shape)
    )


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: [B,H,W,C] -> [B,C]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [B,H,W,C], got {x.shape}")
    area = x.shape[1] * x.shape[2]
    return _emit(
        "global_avg_pool",
        (x,),
        x.data.mean(axis=(1, 2)),
        lambda g: (np.broadcast_to(g[:, None, None, :] / area, x.shape),),
    )


def channel_max(x: Tensor) -> Tensor:
    """Max across channels, keeping a singleton channel axis."""
    winner = x.data.argmax(axis=-1)[..., None]
    out = np.take_along_axis(x.data, winner, axis=-1)
    return _emit(
        "channel_max", (x,), out, lambda g: (_channel_max_grad(g, winner, x.shape),)
    )


def _channel_max_grad(
    g: np.ndarray, winner: np.ndarray, shape: Tuple[int, ...]
) -> np.ndarray:
    grad = np.zeros(shape, dtype=g.dtype)
    np.put_along_axis(grad, winner, g, axis=-1)
    return grad


def upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour spatial upsampling by an integer factor."""
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)
    return _emit("upsample", (x,), out, lambda g: (_upsample_grad(g, x.shape, factor),))


def _upsample_grad(g: np.ndarray, shape: Tuple[int, ...], factor: int) -> np.ndarray:
    batch, height, width, channels = shape
    return g.reshape(batch, height, factor, width, factor, channels).sum(axis=(2, 4))


def upsample2x(x: Tensor) -> Tensor:
    return upsample(x, 2)

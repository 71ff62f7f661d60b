"""
Functional Operations
Convolution, normalization, resampling, activations and pooling with analytic gradients
"""

from typing import Optional, Tuple, Union

import numpy as np

from config.macmd_config import LN_EPSILON
from src.numerics.params import NormMode, NormState
from src.numerics.tensor import Tensor, make_result, unbroadcast
from src.utils.errors import ConfigError, ShapeError

Pair = Union[int, Tuple[int, int]]

ACTIVATIONS = ("relu", "sigmoid", "squared_relu")


def _pair(value: Pair) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    return int(value[0]), int(value[1])


def _require_rank(x: Tensor, rank: int, op: str):
    if x.ndim != rank:
        raise ShapeError(f"{op} expects a rank-{rank} tensor, got shape {x.shape}")


# ---------------------------------------------------------------------- #
#  Convolution                                                           #
# ---------------------------------------------------------------------- #

def conv_output_size(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _tap_forward(tap: np.ndarray, w_tap: np.ndarray) -> np.ndarray:
    # tap: (N, G, Ci, Ho, Wo), w_tap: (G, Co, Ci) -> (N, G, Co, Ho, Wo)
    groups, c_out, c_in = w_tap.shape
    if c_in == 1 and c_out == 1:
        return tap * w_tap.reshape(1, groups, 1, 1, 1)
    if groups == 1:
        out = np.tensordot(w_tap[0], tap[:, 0], axes=([1], [1]))
        return out.transpose(1, 0, 2, 3)[:, None]
    return np.einsum("ngihw,goi->ngohw", tap, w_tap)


def _tap_weight_grad(grad: np.ndarray, tap: np.ndarray) -> np.ndarray:
    # grad: (N, G, Co, Ho, Wo), tap: (N, G, Ci, Ho, Wo) -> (G, Co, Ci)
    groups, c_out, c_in = grad.shape[1], grad.shape[2], tap.shape[2]
    if c_in == 1 and c_out == 1:
        return (grad * tap).sum(axis=(0, 3, 4)).reshape(groups, 1, 1)
    if groups == 1:
        return np.tensordot(grad[:, 0], tap[:, 0], axes=([0, 2, 3], [0, 2, 3]))[None]
    return np.einsum("ngohw,ngihw->goi", grad, tap)


def _tap_input_grad(grad: np.ndarray, w_tap: np.ndarray) -> np.ndarray:
    # grad: (N, G, Co, Ho, Wo), w_tap: (G, Co, Ci) -> (N, G, Ci, Ho, Wo)
    groups, c_out, c_in = w_tap.shape
    if c_in == 1 and c_out == 1:
        return grad * w_tap.reshape(1, groups, 1, 1, 1)
    if groups == 1:
        out = np.tensordot(grad[:, 0], w_tap[0], axes=([1], [0]))
        return out.transpose(0, 3, 1, 2)[:, None]
    return np.einsum("ngohw,goi->ngihw", grad, w_tap)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: Pair = 1,
           dilation: Pair = 1, padding: Pair = 0, groups: int = 1) -> Tensor:
    """
    2-D cross-correlation with zero padding, dilation and channel groups

    The kernel is applied tap by tap: each of the kh*kw offsets contributes
    one strided view of the padded input contracted with the matching kernel
    slice, accumulated in a fixed order.

    Args:
        x: Input [N, Cin, H, W]
        w: Kernel [Cout, Cin/groups, kh, kw]
        b: Optional bias [Cout]
        stride, dilation, padding: Per-axis integers or pairs
        groups: Channel groups (groups == Cin gives a depthwise convolution)

    Returns:
        Tensor: [N, Cout, H', W']
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(w, 4, "conv2d kernel")
    n, c_in, h, wd = x.shape
    c_out, c_in_group, kh, kw = w.shape
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    ph, pw = _pair(padding)

    if groups < 1 or c_in % groups:
        raise ShapeError(f"conv2d: input channels {c_in} not divisible by groups={groups}")
    if c_out % groups:
        raise ShapeError(f"conv2d: output channels {c_out} not divisible by groups={groups}")
    if c_in // groups != c_in_group:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c_in // groups} per group, "
                         f"kernel expects {c_in_group}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {c_out} output channels")

    h_out = conv_output_size(h, kh, sh, dh, ph)
    w_out = conv_output_size(wd, kw, sw, dw, pw)
    if h_out < 1:
        raise ShapeError(f"conv2d: kernel does not fit the padded input along height ({h}+2*{ph})")
    if w_out < 1:
        raise ShapeError(f"conv2d: kernel does not fit the padded input along width ({wd}+2*{pw})")

    c_out_group = c_out // groups
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    hp, wp = padded.shape[2], padded.shape[3]
    xg = padded.reshape(n, groups, c_in_group, hp, wp)
    wg = w.data.reshape(groups, c_out_group, c_in_group, kh, kw)

    def window(i: int, j: int):
        return (slice(None), slice(None), slice(None),
                slice(i * dh, i * dh + sh * (h_out - 1) + 1, sh),
                slice(j * dw, j * dw + sw * (w_out - 1) + 1, sw))

    dtype = np.result_type(x.dtype, w.dtype)
    out = np.zeros((n, groups, c_out_group, h_out, w_out), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            out += _tap_forward(xg[window(i, j)], wg[:, :, :, i, j])
    out = out.reshape(n, c_out, h_out, w_out)
    if b is not None:
        out = out + b.data.reshape(1, c_out, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(grad):
        gg = grad.reshape(n, groups, c_out_group, h_out, w_out)
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xg)
            for i in range(kh):
                for j in range(kw):
                    gxp[window(i, j)] += _tap_input_grad(gg, wg[:, :, :, i, j])
            gx = gxp.reshape(n, c_in, hp, wp)[:, :, ph:ph + h, pw:pw + wd]
        if w.requires_grad:
            gwg = np.zeros_like(wg)
            for i in range(kh):
                for j in range(kw):
                    gwg[:, :, :, i, j] = _tap_weight_grad(gg, xg[window(i, j)])
            gw = gwg.reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, grad.sum(axis=(0, 2, 3))

    return make_result(out, parents, backward_fn)


# ---------------------------------------------------------------------- #
#  Normalization                                                         #
# ---------------------------------------------------------------------- #

def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, state: NormState) -> Tensor:
    """
    Per-channel batch normalization over (N, H, W)

    Train mode normalizes with the batch's population statistics and folds
    them into the running estimates; eval mode is the fixed affine map
    defined by the running estimates.
    """
    _require_rank(x, 4, "batch_norm input")
    channels = x.shape[1]
    if gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeError(f"batch_norm: gain/bias must have shape ({channels},)")

    eps = state.epsilon
    g = gain.data.reshape(1, channels, 1, 1)
    b = bias.data.reshape(1, channels, 1, 1)

    if state.mode is NormMode.TRAIN:
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        centered = x.data - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = centered * inv_std
        state.update(mean.reshape(-1), var.reshape(-1))
        count = x.data.size // channels

        def backward_fn(grad):
            gx = None
            if x.requires_grad:
                gx_hat = grad * g
                gx = (inv_std / count) * (count * gx_hat
                                          - gx_hat.sum(axis=(0, 2, 3), keepdims=True)
                                          - x_hat * (gx_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True))
            return gx, (grad * x_hat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3))
    else:
        mean = state.running_mean.reshape(1, channels, 1, 1)
        inv_std = 1.0 / np.sqrt(state.running_var.reshape(1, channels, 1, 1) + eps)
        x_hat = (x.data - mean) * inv_std

        def backward_fn(grad):
            gx = grad * g * inv_std if x.requires_grad else None
            return gx, (grad * x_hat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3))

    out = (g * x_hat + b).astype(x.dtype, copy=False)
    return make_result(out, (x, gain, bias), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPSILON) -> Tensor:
    """
    Normalize each token over its last axis (population variance), then scale and shift

    Args:
        x: Tokens [..., D]
        gain, bias: [D]
    """
    features = x.shape[-1]
    if gain.shape != (features,) or bias.shape != (features,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({features},), got {gain.shape}")
    if eps <= 0:
        raise ConfigError(f"layer_norm epsilon must be positive, got {eps}")

    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    lead_axes = tuple(range(x.ndim - 1))

    def backward_fn(grad):
        gx = None
        if x.requires_grad:
            gx_hat = grad * gain.data
            gx = (inv_std / features) * (features * gx_hat
                                         - gx_hat.sum(axis=-1, keepdims=True)
                                         - x_hat * (gx_hat * x_hat).sum(axis=-1, keepdims=True))
        return gx, (grad * x_hat).sum(axis=lead_axes), grad.sum(axis=lead_axes)

    out = (x_hat * gain.data + bias.data).astype(x.dtype, copy=False)
    return make_result(out, (x, gain, bias), backward_fn)


# ---------------------------------------------------------------------- #
#  Resampling                                                            #
# ---------------------------------------------------------------------- #

def interpolation_matrix(size_in: int, size_out: int, dtype=np.float64) -> np.ndarray:
    """
    Half-pixel-center linear interpolation weights [size_out, size_in]

    Destination d samples s = (d + 0.5) * size_in / size_out - 0.5 clamped
    to [0, size_in - 1]; every row is a convex combination.
    """
    matrix = np.zeros((size_out, size_in), dtype=np.float64)
    scale = size_in / size_out
    for d in range(size_out):
        s = min(max((d + 0.5) * scale - 0.5, 0.0), size_in - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, size_in - 1)
        frac = s - i0
        matrix[d, i0] += 1.0 - frac
        matrix[d, i1] += frac
    return matrix.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling to any positive size (half-pixel centers, edge clamping)"""
    _require_rank(x, 4, "bilinear_resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear resize to an empty extent ({out_h}, {out_w})")
    h, w = x.shape[2], x.shape[3]
    if (h, w) == (out_h, out_w):
        return x
    rows = interpolation_matrix(h, out_h, x.dtype)
    cols = interpolation_matrix(w, out_w, x.dtype)
    out = rows @ x.data @ cols.T

    def backward_fn(grad):
        return (rows.T @ grad @ cols,)

    return make_result(out, (x,), backward_fn)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear enlargement; shrinking requests are rejected"""
    _require_rank(x, 4, "bilinear_upsample input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear upsample to an empty extent ({out_h}, {out_w})")
    if out_h < x.shape[2]:
        raise ShapeError(f"bilinear_upsample cannot shrink height {x.shape[2]} -> {out_h}")
    if out_w < x.shape[3]:
        raise ShapeError(f"bilinear_upsample cannot shrink width {x.shape[3]} -> {out_w}")
    return bilinear_resize(x, out_h, out_w)


# ---------------------------------------------------------------------- #
#  Softmax family                                                        #
# ---------------------------------------------------------------------- #

def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward_fn)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def backward_fn(grad):
        return (grad - probs * grad.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward_fn)


def binary_cross_entropy_with_logits(z: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise -[y log sigmoid(z) + (1-y) log(1-sigmoid(z))] in softplus form"""
    y = np.asarray(target, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError(f"binary cross entropy: target shape {y.shape} != logits shape {z.shape}")
    out = np.logaddexp(0.0, z.data) - y * z.data
    sig = _sigmoid(z.data)

    def backward_fn(grad):
        return (grad * (sig - y),)

    return make_result(out.astype(z.dtype, copy=False), (z,), backward_fn)


# ---------------------------------------------------------------------- #
#  Activations                                                           #
# ---------------------------------------------------------------------- #

def _sigmoid(values: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * values))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward_fn(grad):
        return (grad * mask,)

    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def backward_fn(grad):
        return (grad * out * (1.0 - out),)

    return make_result(out, (x,), backward_fn)


def squared_relu(x: Tensor) -> Tensor:
    positive = np.maximum(x.data, 0)

    def backward_fn(grad):
        return (2.0 * grad * positive,)

    return make_result(positive * positive, (x,), backward_fn)


def pointwise_activation(x: Tensor, f: str) -> Tensor:
    """Apply one of relu / sigmoid / squared_relu elementwise"""
    if f == "relu":
        return relu(x)
    if f == "sigmoid":
        return sigmoid(x)
    if f == "squared_relu":
        return squared_relu(x)
    raise ConfigError(f"unknown activation '{f}', expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------- #
#  Pooling and dense maps                                                #
# ---------------------------------------------------------------------- #

def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean [N, C, H, W] -> [N, C, 1, 1]"""
    _require_rank(x, 4, "global_avg_pool input")
    return x.mean(axis=(2, 3), keepdims=True)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Affine map per token: x @ w.T + b

    Args:
        x: Tokens [..., Din]
        w: [Dout, Din]
        b: Optional [Dout]
    """
    d_out, d_in = w.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: token width {x.shape[-1]} != weight input width {d_in}")
    if b is not None and b.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {b.shape} != ({d_out},)")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(grad):
        gx = grad @ w.data if x.requires_grad else None
        flat_grad = grad.reshape(-1, d_out)
        gw = flat_grad.T @ x.data.reshape(-1, d_in) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, flat_grad.sum(axis=0)

    return make_result(out, parents, backward_fn)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    def backward_fn(grad):
        return (unbroadcast(grad, x.shape),)

    return make_result(np.broadcast_to(x.data, shape).copy(), (x,), backward_fn)

"""Functional neural-network operations with explicit caches.

Every forward function returns ``(output, cache)`` and pairs with a backward
function that maps ``(grad_output, cache)`` to input and parameter gradients.
Spatial arrays use the [batch, channels, height, width] layout. All backward
passes are exact reverse-mode derivatives; the tests hold them to central
finite differences in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# When enabled, the model forward/backward chains assert that every layer
# output is finite and raise TrainingDiverged otherwise.
DEBUG_CHECK_FINITE = False


class TrainingDiverged(RuntimeError):
    """Raised when a forward pass or loss value turns non-finite."""


@dataclass
class HighwayLayerParams:
    """Parameters of one highway convolution layer.

    The same container carries gradients on the backward path. Both weight
    tensors are [filters, in_channels, kh, kw] and must match in shape so the
    carry and transform paths see identical receptive fields.
    """

    conv_weights: np.ndarray
    conv_bias: np.ndarray
    transform_weights: np.ndarray
    transform_bias: np.ndarray


def same_padding(kernel: int) -> tuple[int, int]:
    """Zero-padding pair (begin, end) that preserves size under stride 1.

    For even kernels the extra pixel goes to the end (bottom/right) edge.
    """
    begin = (kernel - 1) // 2
    return begin, kernel - 1 - begin


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Unfold padded [B, C, H, W] input into patch columns [B, C*kh*kw, H*W]."""
    pad_top, pad_bottom = same_padding(kh)
    pad_left, pad_right = same_padding(kw)
    padded = np.pad(x, ((0, 0), (0, 0), (pad_top, pad_bottom), (pad_left, pad_right)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    batch, channels, height, width = x.shape
    patches = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3))
    return patches.reshape(batch, channels * kh * kw, height * width)


def _col2im(grad_cols: np.ndarray, x_shape: tuple, kh: int, kw: int) -> np.ndarray:
    """Fold patch-column gradients back onto the input, summing overlaps."""
    batch, channels, height, width = x_shape
    pad_top, pad_bottom = same_padding(kh)
    pad_left, pad_right = same_padding(kw)
    grad_padded = np.zeros(
        (batch, channels, height + pad_top + pad_bottom, width + pad_left + pad_right),
        dtype=grad_cols.dtype,
    )
    grads = grad_cols.reshape(batch, channels, kh, kw, height, width)
    for i in range(kh):
        for j in range(kw):
            grad_padded[:, :, i:i + height, j:j + width] += grads[:, :, i, j]
    return grad_padded[:, :, pad_top:pad_top + height, pad_left:pad_left + width]


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Stride-1 same-padded convolution.

    x: [B, C, H, W]; weight: [F, C, kh, kw]; bias: [F] -> out [B, F, H, W].
    Runs as one batched matrix product per call; 1x1 kernels skip the patch
    unfolding entirely. The cache keeps only references to x and weight, and
    patch buffers are recomputed on the backward pass to bound memory.
    """
    batch, channels, height, width = x.shape
    filters, weight_channels, kh, kw = weight.shape
    if weight_channels != channels:
        raise ValueError(
            f"convolution weights expect {weight_channels} input channels, got {channels}"
        )
    if kh == 1 and kw == 1:
        cols = x.reshape(batch, channels, height * width)
    else:
        cols = _im2col(x, kh, kw)
    out = np.matmul(weight.reshape(filters, -1), cols)
    out += bias[:, None]
    return out.reshape(batch, filters, height, width), (x, weight)


def conv2d_backward(grad_out: np.ndarray, cache):
    """Gradients of conv2d_forward: returns (grad_x, grad_weight, grad_bias)."""
    x, weight = cache
    batch, channels, height, width = x.shape
    filters, _, kh, kw = weight.shape
    if grad_out.shape != (batch, filters, height, width):
        raise ValueError(
            f"gradient shape {grad_out.shape} does not match convolution output "
            f"{(batch, filters, height, width)}"
        )
    grad_mat = np.ascontiguousarray(grad_out).reshape(batch, filters, height * width)
    grad_bias = grad_mat.sum(axis=(0, 2))
    if kh == 1 and kw == 1:
        cols = x.reshape(batch, channels, height * width)
    else:
        cols = _im2col(x, kh, kw)
    grad_weight = (
        np.matmul(grad_mat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    )
    grad_cols = np.matmul(weight.reshape(filters, -1).T, grad_mat)
    if kh == 1 and kw == 1:
        grad_x = grad_cols.reshape(x.shape)
    else:
        grad_x = _col2im(grad_cols, x.shape, kh, kw)
    return grad_x, grad_weight, grad_bias


def maxpool_forward(x: np.ndarray, pool_size: int):
    """Non-overlapping max pooling with kernel = stride = pool_size.

    Trailing rows/columns that do not fill a window are dropped and receive
    zero gradient. pool_size 1 is the identity. Ties route to the first
    position in row-major window order.
    """
    if pool_size == 1:
        return x, (x.shape, 1, None)
    batch, channels, height, width = x.shape
    out_h, out_w = height // pool_size, width // pool_size
    if out_h == 0 or out_w == 0:
        raise ValueError(
            f"pool size {pool_size} would reduce spatial dims {height}x{width} below 1"
        )
    cropped = x[:, :, :out_h * pool_size, :out_w * pool_size]
    windows = (
        cropped.reshape(batch, channels, out_h, pool_size, out_w, pool_size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, pool_size * pool_size)
    )
    argmax = windows.argmax(axis=4)
    out = np.take_along_axis(windows, argmax[..., None], axis=4)[..., 0]
    return out, (x.shape, pool_size, argmax)


def maxpool_backward(grad_out: np.ndarray, cache):
    """Routes each window's gradient to the argmax position recorded forward."""
    x_shape, pool_size, argmax = cache
    if pool_size == 1:
        return grad_out
    batch, channels, height, width = x_shape
    out_h, out_w = height // pool_size, width // pool_size
    window_grad = np.zeros(
        (batch, channels, out_h, out_w, pool_size * pool_size), dtype=grad_out.dtype
    )
    np.put_along_axis(window_grad, argmax[..., None], grad_out[..., None], axis=4)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    grad_x[:, :, :out_h * pool_size, :out_w * pool_size] = (
        window_grad.reshape(batch, channels, out_h, out_w, pool_size, pool_size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h * pool_size, out_w * pool_size)
    )
    return grad_x


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
):
    """Per-channel batch normalization over [B, C, H, W].

    Training mode normalizes with biased batch statistics and updates the
    running buffers in place (momentum is the keep rate of the old value);
    evaluation mode normalizes with the running buffers.
    """
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = x - mean[None, :, None, None]
    x_hat *= inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat
    out += beta[None, :, None, None]
    return out, (x_hat, gamma, inv_std, training)


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Gradients of batchnorm_forward: (grad_x, grad_gamma, grad_beta)."""
    x_hat, gamma, inv_std, was_training = cache
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = np.einsum("bchw,bchw->c", grad_out, x_hat)
    grad_x_hat = grad_out * gamma[None, :, None, None]
    if not was_training:
        grad_x_hat *= inv_std[None, :, None, None]
        return grad_x_hat, grad_gamma, grad_beta
    batch, _, height, width = grad_out.shape
    count = batch * height * width
    sum_grad = grad_x_hat.sum(axis=(0, 2, 3))
    sum_grad_x_hat = np.einsum("bchw,bchw->c", grad_x_hat, x_hat)
    grad_x = grad_x_hat
    grad_x *= count
    grad_x -= sum_grad[None, :, None, None]
    grad_x -= x_hat * sum_grad_x_hat[None, :, None, None]
    grad_x *= (inv_std / count)[None, :, None, None]
    return grad_x, grad_gamma, grad_beta


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Affine layer: x [B, D] @ weight [D, U] + bias [U]."""
    return x @ weight + bias, (x, weight)


def dense_backward(grad_out: np.ndarray, cache):
    """Gradients of dense_forward: (grad_x, grad_weight, grad_bias)."""
    x, weight = cache
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def _broadcast_alpha(alpha: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape a per-channel slope for broadcasting against channel axis 1."""
    return alpha.reshape((1, alpha.shape[0]) + (1,) * (ndim - 2))


def activation_forward(kind: str, x: np.ndarray, alpha: np.ndarray | None = None):
    """Elementwise activation. ``alpha`` is the per-channel PReLU slope.

    elu: x for x > 0 else e^x - 1; relu: max(x, 0); softsign: x / (1 + |x|);
    prelu: x for x > 0 else alpha * x.
    """
    if kind == "relu":
        out = np.maximum(x, 0.0)
        return out, ("relu", out, None)
    if kind == "elu":
        negative = np.minimum(x, 0.0)
        np.expm1(negative, out=negative)
        out = np.where(x > 0.0, x, negative)
        return out, ("elu", out, None)
    if kind == "softsign":
        out = np.abs(x)
        out += 1.0
        np.divide(x, out, out=out)
        return out, ("softsign", out, None)
    if kind == "prelu":
        if alpha is None:
            raise ValueError("prelu activation requires a slope array")
        out = np.where(x > 0.0, x, _broadcast_alpha(alpha, x.ndim) * x)
        return out, ("prelu", x, alpha)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(grad_out: np.ndarray, cache):
    """Returns (grad_x, grad_alpha); grad_alpha is None except for PReLU."""
    kind, saved, alpha = cache
    if kind == "relu":
        return grad_out * (saved > 0.0), None
    if kind == "elu":
        # the slope is e^x = out + 1 below zero and 1 above, so one clamp covers both
        factor = saved + 1.0
        np.minimum(factor, 1.0, out=factor)
        factor *= grad_out
        return factor, None
    if kind == "softsign":
        shrink = np.abs(saved)
        np.subtract(1.0, shrink, out=shrink)
        shrink *= shrink
        shrink *= grad_out
        return shrink, None
    positive = saved > 0.0
    slope = _broadcast_alpha(alpha, saved.ndim)
    grad_x = np.where(positive, grad_out, slope * grad_out)
    per_element = np.where(positive, 0.0, grad_out * saved)
    reduce_axes = (0,) + tuple(range(2, saved.ndim))
    return grad_x, per_element.sum(axis=reduce_axes)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic sigmoid; exact 0/1 at saturated inputs."""
    decay = np.abs(x)
    np.negative(decay, out=decay)
    np.exp(decay, out=decay)
    numerator = np.where(x >= 0.0, 1.0, decay)
    decay += 1.0
    np.divide(numerator, decay, out=numerator)
    return numerator


def highway_forward(
    x: np.ndarray,
    params: HighwayLayerParams,
    act_kind: str,
    act_alpha: np.ndarray | None = None,
):
    """Gated highway combination y = H*T + x*(1 - T), elementwise.

    H is the activated convolution path, T the sigmoid transform gate. Input
    and output channel counts must match; the caller projects channels before
    this layer when they differ.
    """
    filters, in_channels = params.conv_weights.shape[:2]
    if params.conv_weights.shape != params.transform_weights.shape:
        raise ValueError(
            f"carry and transform weights differ in shape: "
            f"{params.conv_weights.shape} vs {params.transform_weights.shape}"
        )
    if x.shape[1] != in_channels or filters != in_channels:
        raise ValueError(
            f"highway layer needs matching channel counts, got input {x.shape[1]} "
            f"and weights {in_channels} -> {filters}"
        )
    h_pre, h_cache = conv2d_forward(x, params.conv_weights, params.conv_bias)
    h_out, act_cache = activation_forward(act_kind, h_pre, act_alpha)
    t_pre, t_cache = conv2d_forward(x, params.transform_weights, params.transform_bias)
    gate = sigmoid(t_pre)
    y = 1.0 - gate
    y *= x
    gated = h_out * gate
    y += gated
    return y, (x, h_out, gate, h_cache, act_cache, t_cache)


def highway_backward(grad_y: np.ndarray, cache):
    """Gradients of highway_forward.

    Returns (grad_x, grad_params, grad_alpha) where grad_params mirrors
    HighwayLayerParams and grad_alpha is None unless the activation is PReLU.
    """
    x, h_out, gate, h_cache, act_cache, t_cache = cache
    if grad_y.shape != x.shape:
        raise ValueError(
            f"gradient shape {grad_y.shape} does not match highway output {x.shape}"
        )
    grad_h_out = grad_y * gate
    grad_h_pre, grad_alpha = activation_backward(grad_h_out, act_cache)
    # gate path: d sigmoid = gate * (1 - gate), applied to grad_y * (h_out - x)
    grad_t_pre = h_out - x
    grad_t_pre *= grad_y
    grad_t_pre *= gate
    grad_x = 1.0 - gate
    grad_t_pre *= grad_x
    grad_x *= grad_y
    carry_grad_x, grad_w_c, grad_b_c = conv2d_backward(grad_h_pre, h_cache)
    grad_x += carry_grad_x
    gate_grad_x, grad_w_t, grad_b_t = conv2d_backward(grad_t_pre, t_cache)
    grad_x += gate_grad_x
    return grad_x, HighwayLayerParams(grad_w_c, grad_b_c, grad_w_t, grad_b_t), grad_alpha


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift stabilization."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its logit gradient.

    labels are one-hot rows. Returns (loss, grad) with
    grad = (softmax(logits) - labels) / batch. Non-finite logits signal an
    evaluation failure.
    """
    if not np.isfinite(logits).all():
        raise TrainingDiverged("non-finite logits reached the softmax head")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = logits.shape[0]
    loss = float(-(labels * log_probs).sum() / batch)
    grad = (np.exp(log_probs) - labels) / batch
    return loss, grad

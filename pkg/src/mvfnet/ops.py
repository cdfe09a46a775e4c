"""Forward and backward kernels for the layers the networks are built from.

Every kernel works on ``(n, c, t, h, w)`` arrays. Spatial convolutions and
normalization act per frame, so nothing here mixes information across ``t``
except :func:`conv1d_channelwise` along :attr:`Axis.TEMPORAL`.
"""

from __future__ import annotations

import enum
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import check_video, same_dtype


class Axis(enum.Enum):
    TEMPORAL = 2
    HEIGHT = 3
    WIDTH = 4

    @property
    def dim(self) -> int:
        return self.value


class GradPair(NamedTuple):
    d_input: np.ndarray
    d_weights: Optional[np.ndarray] = None


def _check_kernel(x: np.ndarray, k: np.ndarray) -> None:
    if k.ndim != 2 or k.shape[1] != 3:
        raise ShapeError(f"channel-wise kernel must have shape (channels, 3), got {k.shape}")
    if k.shape[0] != x.shape[1]:
        raise ShapeError(f"kernel has {k.shape[0]} channels, tensor has {x.shape[1]}")
    same_dtype(x, k)


def _taps(k: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    col = k.reshape(1, k.shape[0], 1, 1, 1, 3)
    return col[..., 0], col[..., 1], col[..., 2]


def _pad_axis(x: np.ndarray, dim: int) -> np.ndarray:
    pad = [(0, 0)] * x.ndim
    pad[dim] = (1, 1)
    return np.pad(x, pad)


def _window(xp: np.ndarray, dim: int, start: int, length: int) -> np.ndarray:
    idx = [slice(None)] * xp.ndim
    idx[dim] = slice(start, start + length)
    return xp[tuple(idx)]


# ---------------------------------------------------------------------------
# channel-wise 1D convolution along t, h or w


def conv1d_channelwise(x: np.ndarray, k: np.ndarray, axis: Axis) -> np.ndarray:
    """Per-channel 3-tap cross-correlation along ``axis`` with zero padding.

    ``out[c, p] = k[c, 0] * x[c, p-1] + k[c, 1] * x[c, p] + k[c, 2] * x[c, p+1]``.
    """
    check_video(x, allow_empty_channels=True)
    _check_kernel(x, k)
    d = axis.dim
    n = x.shape[d]
    xp = _pad_axis(x, d)
    k0, k1, k2 = _taps(k)
    out = k0 * _window(xp, d, 0, n)
    out += k1 * _window(xp, d, 1, n)
    out += k2 * _window(xp, d, 2, n)
    return out


def conv1d_channelwise_backward(x: np.ndarray, k: np.ndarray, axis: Axis, d_out: np.ndarray) -> GradPair:
    check_video(x, allow_empty_channels=True)
    _check_kernel(x, k)
    if d_out.shape != x.shape:
        raise ShapeError(f"d_out shape {d_out.shape} != input shape {x.shape}")
    d = axis.dim
    n = x.shape[d]
    gp = _pad_axis(d_out, d)
    k0, k1, k2 = _taps(k)
    # d_in[p] = k0 * g[p+1] + k1 * g[p] + k2 * g[p-1]
    d_in = k0 * _window(gp, d, 2, n)
    d_in += k1 * _window(gp, d, 1, n)
    d_in += k2 * _window(gp, d, 0, n)
    xp = _pad_axis(x, d)
    axes = tuple(i for i in range(5) if i != 1)
    d_k = np.stack(
        [np.sum(d_out * _window(xp, d, i, n), axis=axes) for i in range(3)], axis=1
    )
    return GradPair(d_in, d_k)


def conv1d_channelwise_reference(x: np.ndarray, k: np.ndarray, axis: Axis) -> np.ndarray:
    """Naive loop implementation of :func:`conv1d_channelwise`, for testing."""
    check_video(x, allow_empty_channels=True)
    _check_kernel(x, k)
    moved = np.moveaxis(x, axis.dim, -1)
    out = np.zeros_like(moved)
    length = moved.shape[-1]
    for n in range(moved.shape[0]):
        for c in range(moved.shape[1]):
            for a in range(moved.shape[2]):
                for b in range(moved.shape[3]):
                    line = moved[n, c, a, b]
                    for p in range(length):
                        acc = x.dtype.type(0)
                        for tap, offset in enumerate((-1, 0, 1)):
                            q = p + offset
                            if 0 <= q < length:
                                acc = acc + k[c, tap] * line[q]
                        out[n, c, a, b, p] = acc
    return np.ascontiguousarray(np.moveaxis(out, -1, axis.dim))


# ---------------------------------------------------------------------------
# per-frame 2D convolutions


def conv_pointwise(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    check_video(x)
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise weight {w.shape} does not match {x.shape[1]} input channels")
    same_dtype(x, w)
    n, c, t, h, ww = x.shape
    y = np.matmul(w, x.reshape(n, c, -1))
    if bias is not None:
        y += bias.reshape(1, -1, 1)
    return y.reshape(n, w.shape[0], t, h, ww)


def conv_pointwise_backward(x, w, d_out, has_bias=False):
    """Returns ``(d_x, d_w, d_bias)``; ``d_bias`` is None without bias."""
    n, c = x.shape[:2]
    g = d_out.reshape(n, w.shape[0], -1)
    d_x = np.matmul(w.T, g).reshape(x.shape)
    d_w = np.tensordot(g, x.reshape(n, c, -1), axes=([0, 2], [0, 2]))
    d_b = g.sum(axis=(0, 2)) if has_bias else None
    return d_x, d_w, d_b


def conv2d_output_size(size: int, stride: int) -> int:
    return (size + 2 - 3) // stride + 1


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    n, c, t, h, w = x.shape
    ho, wo = conv2d_output_size(h, stride), conv2d_output_size(w, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, t, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, 3 * i + j] = xp[:, :, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(n, c * 9, t * ho * wo)


def conv2d_spatial(x: np.ndarray, w: np.ndarray, stride: int = 1, cols: Optional[np.ndarray] = None) -> np.ndarray:
    """3x3 convolution applied to every frame independently, zero padding 1."""
    check_video(x)
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if w.ndim != 4 or w.shape[1:] != (x.shape[1], 3, 3):
        raise ShapeError(f"3x3 weight {w.shape} does not match {x.shape[1]} input channels")
    same_dtype(x, w)
    n, _, t, h, ww = x.shape
    if cols is None:
        cols = _im2col(x, stride)
    y = np.matmul(w.reshape(w.shape[0], -1), cols)
    return y.reshape(n, w.shape[0], t, conv2d_output_size(h, stride), conv2d_output_size(ww, stride))


def conv2d_spatial_backward(x, w, stride, d_out, cols=None, need_input=True):
    """Returns ``(d_x, d_w)``. ``cols`` may be the cached im2col of ``x``.

    With ``need_input=False`` the input gradient is skipped and ``d_x`` is None.
    """
    n, c, t, h, ww = x.shape
    ho, wo = d_out.shape[3:]
    if cols is None:
        cols = _im2col(x, stride)
    g = d_out.reshape(n, w.shape[0], -1)
    d_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    if not need_input:
        return None, d_w
    d_cols = np.matmul(w.reshape(w.shape[0], -1).T, g).reshape(n, c, 9, t, ho, wo)
    d_xp = np.zeros((n, c, t, h + 2, ww + 2), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            d_xp[:, :, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += d_cols[:, :, 3 * i + j]
    return d_xp[:, :, :, 1:-1, 1:-1].copy(), d_w


# ---------------------------------------------------------------------------
# normalization, pooling, head


class NormCache(NamedTuple):
    x_hat: np.ndarray
    inv_std: np.ndarray


_NORM_AXES = (0, 2, 3, 4)


def _bcast(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1, 1)


def norm_affine(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over ``(n, t, h, w)``.

    In training mode the running statistics are updated in place and batch
    statistics are used; in eval mode the running statistics are used.
    Returns ``(y, cache)``.
    """
    check_video(x)
    if training:
        mean = x.mean(axis=_NORM_AXES)
        var = x.var(axis=_NORM_AXES)
        m = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - _bcast(mean)) * _bcast(inv_std)
    y = x_hat * _bcast(gamma) + _bcast(beta)
    return y.astype(x.dtype, copy=False), NormCache(x_hat, inv_std)


def norm_affine_backward(cache: NormCache, gamma, d_out, training):
    """Returns ``(d_x, d_gamma, d_beta)``."""
    x_hat, inv_std = cache
    d_beta = d_out.sum(axis=_NORM_AXES)
    d_gamma = (d_out * x_hat).sum(axis=_NORM_AXES)
    scale = _bcast(gamma * inv_std)
    if not training:
        return d_out * scale, d_gamma, d_beta
    m = x_hat.size // x_hat.shape[1]
    d_x = scale * (d_out - _bcast(d_beta / m) - x_hat * _bcast(d_gamma / m))
    return d_x, d_gamma, d_beta


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over ``(t, h, w)`` per ``(n, c)``.

    Frame means are summed in sorted order, which makes the result bitwise
    invariant to any permutation of the frames.
    """
    check_video(x)
    frame_means = x.mean(axis=(3, 4))
    return np.sort(frame_means, axis=2).sum(axis=2) / x.dtype.type(x.shape[2])


def global_avg_pool_backward(x_shape, d_out: np.ndarray) -> np.ndarray:
    n, c, t, h, w = x_shape
    g = d_out / d_out.dtype.type(t * h * w)
    return np.broadcast_to(g.reshape(n, c, 1, 1, 1), x_shape).copy()


def avg_pool2x2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 mean over (h, w) per frame; h and w must be even."""
    check_video(x)
    n, c, t, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even h and w, got {x.shape}")
    return x.reshape(n, c, t, h // 2, 2, w // 2, 2).mean(axis=(4, 6))


def avg_pool2x2_backward(d_out: np.ndarray) -> np.ndarray:
    g = d_out * d_out.dtype.type(0.25)
    return np.repeat(np.repeat(g, 2, axis=3), 2, axis=4)


def linear(features: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if features.ndim != 2 or w.shape[1] != features.shape[1]:
        raise ShapeError(f"linear: features {features.shape} vs weight {w.shape}")
    return features @ w.T + b


def linear_backward(features, w, d_out):
    """Returns ``(d_features, d_w, d_b)``."""
    return d_out @ w, d_out.T @ features, d_out.sum(axis=0)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    return d_out * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DomainError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    loss = -log_p[np.arange(n), labels].mean()
    d = np.exp(log_p)
    d[np.arange(n), labels] -= 1
    return float(loss), d / logits.dtype.type(n)

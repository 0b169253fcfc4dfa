"""Network ops with hand-written adjoints: convolution, linear, PReLU, batch norm."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, make_op


def conv2d(x, weight, stride=1, padding=0):
    """2D cross-correlation with zero padding.

    ``x`` is ``[N, C, H, W]`` and ``weight`` is ``[F, C, kh, kw]``.  The kernel is
    *not* flipped, so ``conv2d(x, k)`` equals a true convolution with ``k[..., ::-1, ::-1]``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = weight.shape
    if c != ck:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    # channel-major padded copy so every kernel tap is one strided slice
    xc = np.zeros((c, n, h + 2 * padding, w + 2 * padding))
    xc[:, :, padding:padding + h, padding:padding + w] = x.data.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xc[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(f, -1)
    out = np.ascontiguousarray((wmat @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        dw = (gf @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ gf).reshape(c, kh, kw, n, ho, wo)
            dxc = np.zeros(xc.shape)
            for i in range(kh):
                for j in range(kw):
                    dxc[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            dx = np.ascontiguousarray(
                dxc[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3))
        return dx, dw

    return make_op(out, (x, weight), backward)


def linear(x, weight):
    """``x @ weight`` for ``x: [N, D]`` and ``weight: [D, K]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear shapes {x.shape} and {weight.shape} do not align")
    return make_op(x.data @ weight.data, (x, weight),
                   lambda g: (g @ weight.data.T, x.data.T @ g))


def _channel_view(slope, x):
    """Reshape a scalar or per-channel slope so it broadcasts over axis 1 of ``x``."""
    if slope.size == 1:
        return slope.data.reshape((1,) * x.ndim)
    if x.ndim < 2 or slope.size != x.shape[1]:
        raise DimensionError(f"prelu slope {slope.shape} does not match channels of {x.shape}")
    shape = [1] * x.ndim
    shape[1] = slope.size
    return slope.data.reshape(shape)


def prelu(x, slope):
    """``x`` where ``x > 0`` else ``slope * x``.  At exactly 0 the slope is 1."""
    a = _channel_view(slope, x)
    pos = x.data >= 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        dx = np.where(pos, g, a * g) if x.requires_grad else None
        ds = None
        if slope.requires_grad:
            contrib = np.where(pos, 0.0, g * x.data)
            if slope.size == 1:
                ds = np.full(slope.shape, contrib.sum())
            else:
                axes = tuple(i for i in range(x.ndim) if i != 1)
                ds = contrib.sum(axis=axes).reshape(slope.shape)
        return dx, ds

    return make_op(out, (x, slope), backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel standardization over ``(N, H, W)``.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays) are updated in place; in eval mode the running
    statistics are used.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm2d affine params {gamma.shape}/{beta.shape} vs channels {c}")
    m = n * h * w
    if training:
        if m < 2:
            raise DimensionError(f"batch_norm2d in training mode needs N*H*W >= 2, got {x.shape}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean, running_var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * invstd[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            dx = (invstd[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            dx = dxhat * invstd[None, :, None, None]
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), backward)


def global_avg_pool(x):
    """``[N, C, H, W] -> [N, C]``."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    return make_op(out, (x,),
                   lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))


def avg_pool2(x):
    """Non-overlapping 2x2 average pooling."""
    d = x.data
    out = 0.25 * (d[:, :, 0::2, 0::2] + d[:, :, 0::2, 1::2] + d[:, :, 1::2, 0::2] + d[:, :, 1::2, 1::2])

    def backward(g):
        dx = np.empty(x.shape)
        q = 0.25 * g
        for di in (0, 1):
            for dj in (0, 1):
                dx[:, :, di::2, dj::2] = q
        return (dx,)

    return make_op(out, (x,), backward)


def l2_normalize(x, axis=1):
    """Unit-normalize along ``axis``; the zero vector is an error."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if (norm == 0).any():
        raise FloatingPointError("cannot L2-normalize a zero vector")
    u = x.data / norm

    def backward(g):
        return ((g - u * (g * u).sum(axis=axis, keepdims=True)) / norm,)

    return make_op(u, (x,), backward)

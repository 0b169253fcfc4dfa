"""Single-level orthonormal 2D Haar analysis/synthesis and the WaveConv downsampler.

For a 2x2 block ``[[a, b], [c, d]]`` the analysis kernels (applied as stride-2
correlation) give::

    LL = (a + b + c + d) / 2      LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2      HH = (a - b - c + d) / 2

The 1/2 normalization makes the transform orthonormal, so energy is conserved
and a constant image ``c`` maps to ``LL == 2c``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_op

FILTER_BANK = {
    "ll": 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]]),
    "lh": 0.5 * np.array([[1.0, 1.0], [-1.0, -1.0]]),
    "hl": 0.5 * np.array([[1.0, -1.0], [1.0, -1.0]]),
    "hh": 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]),
}

# sign of (a, b, c, d) in each subband
_SIGNS = {
    "ll": (1, 1, 1, 1),
    "lh": (1, 1, -1, -1),
    "hl": (1, -1, 1, -1),
    "hh": (1, -1, -1, 1),
}


class WaveletSubbands(NamedTuple):
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor


def _check_even(x):
    if x.ndim < 2 or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise DimensionError(f"Haar analysis needs even spatial dims, got shape {x.shape}")


def _quads(d):
    return d[..., 0::2, 0::2], d[..., 0::2, 1::2], d[..., 1::2, 0::2], d[..., 1::2, 1::2]


def _ll(d):
    a, b, c, e = _quads(d)
    return 0.5 * (a + b + c + e)


def _subband(x, name):
    d = x.data
    if name == "ll":
        out = _ll(d)
    else:
        a, b, c, e = _quads(d)
        sa, sb, sc, se = _SIGNS[name]
        out = 0.5 * (sa * a + sb * b + sc * c + se * e)
    signs = _SIGNS[name]

    def backward(g):
        dx = np.empty(x.shape)
        half = 0.5 * g
        dx[..., 0::2, 0::2] = signs[0] * half
        dx[..., 0::2, 1::2] = signs[1] * half
        dx[..., 1::2, 0::2] = signs[2] * half
        dx[..., 1::2, 1::2] = signs[3] * half
        return (dx,)

    return make_op(out, (x,), backward)


def dwt2_forward(x):
    """Decompose ``x`` (``[..., H, W]`` with even H, W) into its four Haar subbands."""
    x = as_tensor(x)
    _check_even(x)
    return WaveletSubbands(*(_subband(x, k) for k in ("ll", "lh", "hl", "hh")))


def dwt2_inverse(s):
    """Exact synthesis: inverse of :func:`dwt2_forward`."""
    ll, lh, hl, hh = (as_tensor(t) for t in s)
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise DimensionError(
            f"subband shapes differ: {ll.shape}, {lh.shape}, {hl.shape}, {hh.shape}")
    shape = ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1])
    out = np.empty(shape)
    L, A, B, D = ll.data, lh.data, hl.data, hh.data
    out[..., 0::2, 0::2] = 0.5 * (L + A + B + D)
    out[..., 0::2, 1::2] = 0.5 * (L + A - B - D)
    out[..., 1::2, 0::2] = 0.5 * (L - A + B - D)
    out[..., 1::2, 1::2] = 0.5 * (L - A - B + D)

    def backward(g):
        # synthesis is orthonormal, so its adjoint is analysis
        return tuple(0.5 * (sa * q0 + sb * q1 + sc * q2 + sd * q3)
                     for (sa, sb, sc, sd), (q0, q1, q2, q3)
                     in ((_SIGNS[k], _quads(g)) for k in ("ll", "lh", "hl", "hh")))

    return make_op(out, (ll, lh, hl, hh), backward)


def waveconv_downsample(x):
    """WaveConv: keep only the Haar low-pass subband (stride-2 ``f_LL``).

    The detail subbands are never computed.
    """
    x = as_tensor(x)
    _check_even(x)
    return _subband(x, "ll")


def subband_energies(x):
    """Squared-norm of each subband, as a dict of floats (no graph)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise DimensionError(f"Haar analysis needs even spatial dims, got shape {x.shape}")
    a, b, c, d = _quads(x)
    out = {}
    for k, (sa, sb, sc, sd) in _SIGNS.items():
        band = 0.5 * (sa * a + sb * b + sc * c + sd * d)
        out[k] = float((band * band).sum())
    return out

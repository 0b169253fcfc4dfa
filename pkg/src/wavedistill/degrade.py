"""Low-resolution degradation model and resampling.

Training LR images: optional Gaussian blur -> additive Gaussian noise -> JPEG-style
DCT quantization, each gated independently, then bicubic downsampling to a random
size from ``lr_sizes`` and bicubic upsampling back to the network input size.

Evaluation LR probes skip the corruptions and use bilinear down/up sampling.

Images are float64 arrays on the 0-255 scale, shaped ``[H, W]`` or ``[C, H, W]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn

# standard JPEG luminance quantization table (ITU T.81 Annex K)
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class DegradationConfig:
    p_blur: float = 0.5
    p_noise: float = 0.5
    p_jpeg: float = 0.5
    blur_sigma_range: tuple = (0.5, 2.0)
    noise_sigma_range: tuple = (2.0, 10.0)
    jpeg_quality_range: tuple = (30, 90)
    lr_sizes: list = field(default_factory=lambda: [8, 16])
    upsample_back: bool = True

    def validate(self, hr_size=None):
        for name in ("p_blur", "p_noise", "p_jpeg"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("blur_sigma_range", "noise_sigma_range", "jpeg_quality_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
        qlo, qhi = self.jpeg_quality_range
        if qlo < 1 or qhi > 100:
            raise ValueError("jpeg_quality_range must lie within [1, 100]")
        if not self.lr_sizes or min(self.lr_sizes) < 1:
            raise ValueError(f"lr_sizes must be non-empty positive extents, got {self.lr_sizes}")
        if hr_size is not None and max(self.lr_sizes) > hr_size:
            raise ValueError(f"lr_sizes {self.lr_sizes} exceed HR size {hr_size}")
        return self


@dataclass(frozen=True)
class RngStream:
    """Counter-style stream key: draws depend only on ``(seed, sample_index, epoch)``."""

    seed: int
    sample_index: int
    epoch: int = 0

    def generator(self):
        return np.random.default_rng(np.random.SeedSequence(
            [self.seed & 0xFFFFFFFFFFFFFFFF, self.sample_index, self.epoch, 0x64656772]))


def _as_planes(img):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    if a.ndim == 3:
        return a, False
    raise ValueError(f"expected [H, W] or [C, H, W] image, got shape {a.shape}")


def _restore(planes, squeeze):
    return planes[0] if squeeze else planes


# -- corruptions ---------------------------------------------------------------

def gaussian_kernel(sigma):
    """Normalized 1-d Gaussian taps with radius ``ceil(3 * sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _filter_axis(planes, taps, axis):
    r = len(taps) // 2
    pad = [(0, 0)] * planes.ndim
    pad[axis] = (r, r)
    padded = np.pad(planes, pad, mode="edge")
    n = planes.shape[axis]
    out = np.zeros_like(planes)
    for i, wgt in enumerate(taps):
        sl = [slice(None)] * planes.ndim
        sl[axis] = slice(i, i + n)
        out += wgt * padded[tuple(sl)]
    return out


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with edge-replicated borders; ``sigma == 0`` is identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    planes, squeeze = _as_planes(img)
    if sigma == 0:
        return _restore(planes.copy(), squeeze)
    taps = gaussian_kernel(sigma)
    out = _filter_axis(_filter_axis(planes, taps, axis=1), taps, axis=2)
    return _restore(out, squeeze)


def add_noise(img, sigma, stream):
    """Add i.i.d. N(0, sigma^2) noise (0-255 scale) and clamp to [0, 255]."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    a = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return a.copy()
    rng = stream if isinstance(stream, np.random.Generator) else stream.generator()
    return np.clip(a + sigma * rng.standard_normal(a.shape), 0.0, 255.0)


def jpeg_quant_table(quality):
    """IJG quality scaling of the luminance table, entries clamped to [1, 255]."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must lie in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_artifact(img, quality):
    """Simulate baseline-JPEG block artifacts by 8x8 DCT quantization (no entropy coding)."""
    q = jpeg_quant_table(int(quality))
    planes, squeeze = _as_planes(img)
    c, h, w = planes.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode="edge") - 128.0
    H, W = x.shape[1:]
    blocks = x.reshape(c, H // 8, 8, W // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / q) * q
    rec = idctn(coef, type=2, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(c, H, W)[:, :h, :w] + 128.0
    return _restore(np.clip(rec, 0.0, 255.0), squeeze)


# -- resampling ----------------------------------------------------------------

def cubic_kernel(t, a=-0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
                    np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0))


def linear_kernel(t):
    return np.maximum(0.0, 1.0 - np.abs(t))


@functools.lru_cache(maxsize=256)
def resample_matrix(src, dst, kernel, support, antialias):
    """Dense ``[dst, src]`` weight matrix for 1-d resampling on a half-pixel grid.

    When ``antialias`` and downscaling, the kernel is stretched by the scale
    factor (as MATLAB ``imresize`` does) so it also acts as a low-pass filter.
    Taps falling outside the source are clamped to the nearest edge sample.
    """
    scale = dst / src
    stretch = 1.0 / scale if (antialias and scale < 1.0) else 1.0
    centers = (np.arange(dst) + 0.5) / scale - 0.5
    reach = support * stretch
    m = np.zeros((dst, src))
    for i, x in enumerate(centers):
        lo = int(math.floor(x - reach)) + 1 if stretch > 1 else int(math.floor(x)) - support + 1
        hi = int(math.ceil(x + reach)) - 1 if stretch > 1 else int(math.floor(x)) + support
        taps = np.arange(lo, hi + 1)
        wts = kernel((x - taps) / stretch)
        wts = wts / wts.sum()
        np.add.at(m[i], np.clip(taps, 0, src - 1), wts)
    return m


def _resize(img, target, kernel, support, antialias):
    planes, squeeze = _as_planes(img)
    c, h, w = planes.shape
    th, tw = (target, target) if np.isscalar(target) else target
    if th < 1 or tw < 1:
        raise ValueError(f"target extent must be >= 1, got {target}")
    if (th, tw) == (h, w):
        return _restore(planes.copy(), squeeze)
    mh = resample_matrix(int(h), int(th), kernel, support, antialias)
    mw = resample_matrix(int(w), int(tw), kernel, support, antialias)
    out = np.einsum("ij,cjk,lk->cil", mh, planes, mw)
    return _restore(out, squeeze)


def bicubic_resize(img, target):
    """Separable Catmull-Rom resize, antialiased when shrinking; identity if size is unchanged.

    Output is clamped to [0, 255] since the negative lobes can overshoot.
    """
    return np.clip(_resize(img, target, cubic_kernel, 2, antialias=True), 0.0, 255.0)


def bilinear_resize(img, target):
    """Separable linear interpolation on a half-pixel grid (no antialiasing)."""
    return _resize(img, target, linear_kernel, 1, antialias=False)


def eval_downsample(hr, size):
    """Evaluation probe: bilinear down to ``size`` and back up to the HR extent."""
    planes, squeeze = _as_planes(hr)
    hr_size = planes.shape[-1]
    if size > hr_size:
        raise ValueError(f"probe size {size} exceeds HR size {hr_size}")
    out = bilinear_resize(bilinear_resize(planes, size), planes.shape[-2:])
    return _restore(out, squeeze)


# -- full pipeline ----------------------------------------------------------------

@dataclass
class DegradationRecord:
    blur: bool
    blur_sigma: float
    noise: bool
    noise_sigma: float
    jpeg: bool
    jpeg_quality: int
    size: int


def degrade_sample(hr, cfg, stream, return_record=False):
    """Corrupt, downsample, and (optionally) upsample one HR image.

    All random draws come from ``stream`` in a fixed order, so the result is a
    pure function of the pixels, the config and the stream key.  Returns
    ``(lr, chosen_size)`` or ``(lr, record)`` when ``return_record``.
    """
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    planes, squeeze = _as_planes(hr)
    hr_size = planes.shape[-1]
    # draw everything up front so gates do not shift later draws
    gates = rng.random(3)
    blur_sigma = rng.uniform(*cfg.blur_sigma_range)
    noise_sigma = rng.uniform(*cfg.noise_sigma_range)
    quality = int(rng.integers(cfg.jpeg_quality_range[0], cfg.jpeg_quality_range[1] + 1))
    size = int(cfg.lr_sizes[rng.integers(len(cfg.lr_sizes))])
    noise_rng = np.random.default_rng(rng.integers(0, 2 ** 63))

    rec = DegradationRecord(bool(gates[0] < cfg.p_blur), float(blur_sigma),
                            bool(gates[1] < cfg.p_noise), float(noise_sigma),
                            bool(gates[2] < cfg.p_jpeg), quality, size)
    x = planes
    if rec.blur:
        x = gaussian_blur(x, rec.blur_sigma)
    if rec.noise:
        x = add_noise(x, rec.noise_sigma, noise_rng)
    if rec.jpeg:
        x = jpeg_artifact(x, rec.jpeg_quality)
    x = bicubic_resize(x, size)
    if cfg.upsample_back:
        x = bicubic_resize(x, hr_size)
    out = _restore(x, squeeze)
    return (out, rec) if return_record else (out, size)

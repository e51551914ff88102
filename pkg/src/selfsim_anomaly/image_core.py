"""Image container conventions, dyadic pyramids and disk measure kernels.

Images are plain ``float64`` numpy arrays of shape ``(height, width, channels)``;
``img[y, x, c]`` is the sample at column ``x``, row ``y``, channel ``c``.
"""
import logging
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

log = logging.getLogger(__name__)

BLUR_SIGMA = 1.4
BLUR_TRUNCATE = 4.0
MIN_LEVEL_SIZE = 16

# "mirror" repeats the edge sample (d c b a | a b c d); "zero" pads with 0 and is
# meant for zero-centered data, where it never raises the variance at borders
_SCIPY_MODES = {"mirror": "reflect", "zero": "constant"}


def _scipy_mode(mode):
    try:
        return _SCIPY_MODES[mode]
    except KeyError:
        raise InvalidInputError(f"unknown boundary mode {mode!r}, expected one of {sorted(_SCIPY_MODES)}") from None


def as_image(data, name="image"):
    """Validate and convert to a C-contiguous (H, W, C) float64 array.

    2D input is promoted to a single channel.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidInputError(f"{name} must be 2D or 3D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise InvalidInputError(f"{name} is empty (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite samples")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class DiskKernel:
    radius: int
    weights: np.ndarray = field(repr=False)

    @property
    def support(self):
        return int(np.count_nonzero(self.weights))


@dataclass
class Pyramid:
    """Dyadic levels, ``levels[0]`` at input resolution."""

    levels: list
    requested_scales: int

    @property
    def n_scales(self):
        return len(self.levels)

    @property
    def clamped(self):
        return self.n_scales < self.requested_scales

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, s):
        return self.levels[s]


def max_scales(height, width, min_size=MIN_LEVEL_SIZE):
    """Largest level count whose coarsest level is at least ``min_size`` on both axes."""
    n = 1
    while True:
        h = -(-height // 2 ** n)
        w = -(-width // 2 ** n)
        if h < min_size or w < min_size:
            return n
        n += 1


def downsample(img, mode="mirror"):
    """Gaussian blur (sigma 1.4) followed by taking every other sample."""
    blurred = ndimage.gaussian_filter(
        img, sigma=(BLUR_SIGMA, BLUR_SIGMA, 0), mode=_scipy_mode(mode), truncate=BLUR_TRUNCATE
    )
    return np.ascontiguousarray(blurred[::2, ::2, :])


def build_pyramid(img, n_scales, mode="mirror"):
    img = as_image(img)
    if n_scales < 1:
        raise InvalidInputError(f"n_scales must be >= 1, got {n_scales}")
    h, w, _ = img.shape
    allowed = max(1, min(n_scales, max_scales(h, w)))
    if allowed < n_scales:
        log.warning("pyramid clamped from %d to %d scales for a %dx%d image", n_scales, allowed, w, h)
    levels = [img.copy()]
    for _ in range(1, allowed):
        levels.append(downsample(levels[-1], mode))
    return Pyramid(levels=levels, requested_scales=n_scales)


def disk_kernel(radius):
    """Normalized binary disk: cells whose center lies within ``radius`` of the kernel center."""
    if int(radius) != radius or radius < 1:
        raise InvalidInputError(f"disk radius must be a positive integer, got {radius}")
    radius = int(radius)
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    mask = (xx * xx + yy * yy) <= radius * radius
    weights = mask / mask.sum()
    return DiskKernel(radius=radius, weights=weights)


def convolve_disk(img, kernel, mode="mirror"):
    """Per-channel convolution; output has the input dimensions."""
    img = as_image(img)
    scipy_mode = _scipy_mode(mode)
    side = kernel.weights.shape[0]
    if img.shape[0] < side or img.shape[1] < side:
        raise InvalidInputError(
            f"kernel of side {side} does not fit a {img.shape[1]}x{img.shape[0]} image"
        )
    out = np.empty_like(img)
    # disk weights are point-symmetric, so correlation equals convolution
    for c in range(img.shape[2]):
        ndimage.correlate(img[:, :, c], kernel.weights, output=out[:, :, c], mode=scipy_mode)
    return out


@lru_cache(maxsize=64)
def _chain_gram(n0, scale, mode):
    """Gram matrix Y Y^T of the 1D blur-decimate chain mapping n0 samples to level ``scale``."""
    y = np.eye(n0)
    for _ in range(scale):
        y = ndimage.gaussian_filter1d(y, BLUR_SIGMA, axis=0, mode=_scipy_mode(mode), truncate=BLUR_TRUNCATE)[::2]
    return y @ y.T


@lru_cache(maxsize=64)
def _noise_gain(height, width, scale, radius, mode):
    if mode != "zero":
        raise InvalidInputError("noise gain maps are only available for zero padding")
    gy = _chain_gram(height, scale, mode)
    gx = _chain_gram(width, scale, mode)
    k = disk_kernel(radius)
    cells = [(dy, dx, k.weights[dy + radius, dx + radius])
             for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
             if k.weights[dy + radius, dx + radius] > 0]

    def shifted(g, a, b):
        # v[i] = g[i + a, i + b], zero where either index leaves the grid
        n = g.shape[0]
        i = np.arange(n)
        ok = (i + a >= 0) & (i + a < n) & (i + b >= 0) & (i + b < n)
        v = np.zeros(n)
        v[ok] = g[i[ok] + a, i[ok] + b]
        return v

    var = np.zeros((gy.shape[0], gx.shape[0]))
    for ay, ax, wa in cells:
        for by, bx, wb in cells:
            var += wa * wb * np.outer(shifted(gy, ay, by), shifted(gx, ax, bx))
    return np.sqrt(var)


def noise_gain(level_shape, base_shape, scale, radius, mode="zero"):
    """Per-pixel standard deviation, at pyramid level ``scale`` after disk filtering,
    of unit white noise fed in at level 0.

    Dividing a filtered level by this map equalizes the noise variance near
    borders, where padding changes how many samples a kernel sees.
    """
    g = _noise_gain(int(base_shape[0]), int(base_shape[1]), int(scale), int(radius), mode)
    if g.shape != tuple(level_shape[:2]):
        raise InvalidInputError(f"gain map {g.shape} does not match level shape {level_shape[:2]}")
    return g

"""Noise model for the residual: generalized Gaussian fit and Gaussianization.

The GGD density is proportional to ``exp(-|x / scale| ** shape)``; shape 2 is
Gaussian, shape 1 Laplace.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import CalibrationError, InvalidInputError
from .image_core import as_image

SHAPE_MIN = 0.2
SHAPE_MAX = 10.0
MIN_FIT_SAMPLES = 1000
MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class GgdParams:
    shape: float
    scale: float

    def to_dict(self):
        return {"shape": self.shape, "scale": self.scale}


@dataclass
class ChannelStats:
    """Robust location and spread of one filtered channel."""

    median: float
    sigma: float


def ggd_kurtosis(shape):
    lg = special.gammaln
    return np.exp(lg(5.0 / shape) + lg(1.0 / shape) - 2.0 * lg(3.0 / shape))


def ggd_scale_from_std(std, shape):
    return std * np.exp(0.5 * (special.gammaln(1.0 / shape) - special.gammaln(3.0 / shape)))


def ggd_std(params):
    return params.scale * np.exp(0.5 * (special.gammaln(3.0 / params.shape) - special.gammaln(1.0 / params.shape)))


def ggd_abs_quantile(p, shape, scale=1.0):
    """Quantile of |X| for X ~ GGD(shape, scale)."""
    return scale * special.gammaincinv(1.0 / shape, p) ** (1.0 / shape)


def ggd_octile_kurtosis(shape):
    """Moors' octile kurtosis of the GGD; for symmetric laws it reduces to
    (Q|X|(3/4) - Q|X|(1/4)) / Q|X|(1/2)."""
    q = special.gammaincinv(1.0 / shape, np.array([0.25, 0.5, 0.75])) ** (1.0 / shape)
    return (q[2] - q[0]) / q[1]


def octile_kurtosis(x):
    """Sample octile kurtosis of zero-centered values. Insensitive to the
    outer 12.5% of each tail, where anomalies live."""
    q = np.quantile(np.abs(x), [0.25, 0.5, 0.75])
    if not q[1] > 0:
        return np.inf
    return (q[2] - q[0]) / q[1]


def _solve_shape(target, kurtosis=ggd_octile_kurtosis, tol=1e-4):
    # both kurtosis measures are strictly decreasing in shape
    lo, hi = SHAPE_MIN, SHAPE_MAX
    if target >= kurtosis(lo):
        return lo
    if target <= kurtosis(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if kurtosis(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_ggd(samples):
    """Zero-location GGD fit by matching the octile kurtosis, scale from the
    median of |x|.

    Fewer than 1000 samples fall back to a Gaussian with the sample spread.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise CalibrationError("no samples to fit")
    m2 = np.mean(x * x)
    if not m2 > 0:
        raise CalibrationError("residual is constant (zero second moment)")
    if x.size < MIN_FIT_SAMPLES:
        return GgdParams(shape=2.0, scale=float(ggd_scale_from_std(np.sqrt(m2), 2.0)))
    med = np.median(np.abs(x))
    if not med > 0:
        # more than half the samples are exactly zero; fall back to moments
        shape = _solve_shape(np.mean(x ** 4) / (m2 * m2), kurtosis=ggd_kurtosis)
        return GgdParams(shape=float(shape), scale=float(ggd_scale_from_std(np.sqrt(m2), shape)))
    shape = _solve_shape(octile_kurtosis(x))
    scale = med / ggd_abs_quantile(0.5, shape)
    return GgdParams(shape=float(shape), scale=float(scale))


def _norm_isf_from_log(logq):
    """z with P(Z > z) = exp(logq), valid for tiny tail masses."""
    # asymptotic start, then Newton steps on log_ndtr(-z) = logq
    t = -2.0 * logq
    z = np.sqrt(np.maximum(t - np.log(t) - np.log(2.0 * np.pi), 1.0))
    for _ in range(6):
        f = special.log_ndtr(-z) - logq
        # d/dz log Phi(-z) = -pdf(z) / Phi(-z)
        slope = -np.exp(-0.5 * z * z - 0.5 * np.log(2.0 * np.pi) - special.log_ndtr(-z))
        z = z - f / slope
    return z


def _log_upper_gamma(a, z):
    # log of the regularized upper incomplete gamma for large z: leading asymptotic terms
    series = 1.0 + (a - 1.0) / z + (a - 1.0) * (a - 2.0) / (z * z)
    return (a - 1.0) * np.log(z) - z - special.gammaln(a) + np.log(series)


def gaussianize_values(x, params):
    """Map GGD(params) samples to standard normal, sign-symmetrically."""
    x = np.asarray(x, dtype=np.float64)
    a = 1.0 / params.shape
    z = (np.abs(x) / params.scale) ** params.shape
    # two-sided tail mass P(|X| > |x|) / 2 = upper regularized gamma / 2
    q = special.gammaincc(a, z)
    half = 0.5 * q
    out = np.empty_like(x)
    regular = half > 1e-300
    out[regular] = -special.ndtri(half[regular])
    if not regular.all():
        logq = _log_upper_gamma(a, z[~regular]) + np.log(0.5)
        out[~regular] = _norm_isf_from_log(logq)
    return np.sign(x) * out


def gaussianize(residual, params):
    """Apply per-channel Gaussianization; ``params`` holds one GgdParams per channel."""
    r = as_image(residual, "residual")
    params = list(params)
    if len(params) != r.shape[2] or any(p is None for p in params):
        raise InvalidInputError(f"need fitted GGD params for all {r.shape[2]} channels, got {len(params)}")
    out = np.empty_like(r)
    for c, p in enumerate(params):
        out[:, :, c] = gaussianize_values(r[:, :, c], p)
    return out


def robust_sigma(values):
    v = np.asarray(values, dtype=np.float64).ravel()
    med = np.median(v)
    sigma = MAD_TO_SIGMA * np.median(np.abs(v - med))
    if not sigma > 0:
        sigma = np.std(v)
    if not sigma > 0:
        raise CalibrationError("channel is constant; cannot normalize")
    return float(med), float(sigma)


def normalize_unit_variance(filtered, sigma_floor=None):
    """Center each channel on its median and divide by 1.4826 * MAD.

    A zero MAD falls back to the sample standard deviation. ``sigma_floor``
    (one value per channel) is a lower bound on the spread used; with a floor,
    a constant channel is allowed and maps to zeros.
    Returns (normalized image, list of ChannelStats).
    """
    f = as_image(filtered, "filtered")
    out = np.empty_like(f)
    stats = []
    for c in range(f.shape[2]):
        if sigma_floor is not None and np.ptp(f[:, :, c]) == 0:
            # constant channel: nothing to normalize, the floor sets the scale
            med, sigma = float(f[0, 0, c]), float(sigma_floor[c])
        else:
            med, sigma = robust_sigma(f[:, :, c])
        if sigma_floor is not None:
            sigma = max(sigma, float(sigma_floor[c]))
        out[:, :, c] = (f[:, :, c] - med) / sigma
        stats.append(ChannelStats(median=med, sigma=sigma))
    return out, stats

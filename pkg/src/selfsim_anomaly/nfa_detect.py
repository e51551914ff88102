"""Multiscale a-contrario detection on the Gaussianized residual.

Every (scale, channel, kernel radius, pixel) is one test. With ``N`` tests in
total, a value ``x`` gets ``NFA = N * P(|Z| >= |x|)`` for standard normal
``Z``, and it is a detection when ``NFA <= epsilon``. Under the noise model
the expected number of detections per image is then at most ``epsilon``.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, special

from . import calibration, feature_prep, image_core
from . import residual as residual_mod
from .errors import InvalidInputError
from .feature_prep import FEATURES, PIXELS

log = logging.getLogger(__name__)

LN10 = math.log(10.0)
LOG10_2 = math.log10(2.0)

# upper log10 limits: weak (1e-3, 1e-2], mild (1e-8, 1e-3], strong (1e-21, 1e-8]
# mirror padding folds kernels onto themselves and inflates the noise variance
# near borders (up to ~7x at coarse corners). The centered residual is zero
# padded instead and every filtered map is divided by its exact white-noise
# gain, so all pixels of a map share one variance before the robust estimate.
BOUNDARY = "zero"

BANDS = (("very_strong", -21.0), ("strong", -8.0), ("mild", -3.0), ("weak", math.inf))


@dataclass(frozen=True)
class DetectionConfig:
    epsilon: float = 1e-2
    kernel_radii: tuple = (1, 2)
    n_scales: int = 4
    mode: str = PIXELS
    residual: residual_mod.ResidualParams = field(default_factory=residual_mod.ResidualParams)
    pca_components: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.kernel_radii or any(int(r) != r or r < 1 for r in self.kernel_radii):
            raise InvalidInputError(f"kernel radii must be positive integers, got {self.kernel_radii}")
        if self.n_scales < 1:
            raise InvalidInputError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.mode not in feature_prep.MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "kernel_radii", tuple(int(r) for r in self.kernel_radii))

    @classmethod
    def for_mode(cls, mode=PIXELS, **overrides):
        """Defaults: 8x8 patches and radii 1, 2 for pixels; 5x5 and 1, 2, 3 for features."""
        if mode == FEATURES:
            base = cls(mode=FEATURES, kernel_radii=(1, 2, 3), residual=residual_mod.ResidualParams(patch_side=5))
        else:
            base = cls(mode=PIXELS)
        res_fields = {k: overrides.pop(k) for k in ("patch_side", "n_neighbors", "h", "search_stride")
                      if overrides.get(k) is not None}
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if res_fields:
            overrides["residual"] = replace(base.residual, **res_fields)
        return replace(base, **overrides)

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "kernel_radii": list(self.kernel_radii),
            "n_scales": self.n_scales,
            "mode": self.mode,
            "pca_components": self.pca_components,
            "patch_side": self.residual.patch_side,
            "n_neighbors": self.residual.n_neighbors,
            "h": self.residual.h,
            "search_stride": self.residual.search_stride,
        }


@dataclass(frozen=True)
class DetectionRecord:
    x: int
    y: int
    scale: int
    kernel_radius: int
    channel: int
    nfa: float
    log10_nfa: float
    band: str

    def to_dict(self):
        return {
            "x": self.x, "y": self.y, "scale": self.scale, "kernel_radius": self.kernel_radius,
            "channel": self.channel, "nfa": self.nfa, "log10_nfa": self.log10_nfa, "band": self.band,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass
class NfaMapStack:
    """log10 NFA grids keyed by (scale, kernel_radius); each grid is (H_s, W_s, channels)."""

    n_tests: int
    log10_maps: dict = field(default_factory=dict)
    sigmas: dict = field(default_factory=dict)

    def keys(self):
        return sorted(self.log10_maps)

    def nfa(self, key):
        return np.power(10.0, self.log10_maps[key])


@dataclass
class DetectionResult:
    records: list
    stack: NfaMapStack
    ggd: list
    basis: object = None
    pyramid_shapes: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def band_for(log10_nfa):
    for name, upper in BANDS:
        if log10_nfa <= upper:
            return name
    return "weak"


def count_tests(config, pyramid):
    """N = (number of radii) * (channels) * (total pixels over all levels)."""
    pixels = sum(level.shape[0] * level.shape[1] for level in pyramid.levels)
    return len(config.kernel_radii) * pyramid.levels[0].shape[2] * pixels


def log10_nfa_map(values, n_tests):
    """log10 of N * P(|Z| >= |x|), accurate far into the tail."""
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("NFA input contains non-finite values")
    return math.log10(n_tests) + LOG10_2 + special.log_ndtr(-np.abs(x)) / LN10


def nfa_map(values, n_tests):
    """N * P(|Z| >= |x|) as raw values (may underflow to 0) and log10 values."""
    x = np.asarray(values, dtype=np.float64)
    log10 = log10_nfa_map(x, n_tests)
    raw = n_tests * special.erfc(np.abs(x) / math.sqrt(2.0))
    # erfc itself goes subnormal before N * erfc does; rebuild those from the log
    deep = raw < 1e-280
    raw[deep] = np.exp(LN10 * log10[deep])
    return raw, log10


def detection_threshold(epsilon, n_tests):
    """|x| above which NFA <= epsilon."""
    p = epsilon / n_tests
    if p >= 1.0:
        return 0.0
    return float(-special.ndtri(0.5 * p))


def group_detections(stack, epsilon):
    """One record per 8-connected component of sub-threshold pixels, at its minimum NFA."""
    limit = math.log10(epsilon)
    structure = np.ones((3, 3), dtype=bool)
    records = []
    for scale, radius in stack.keys():
        grid = stack.log10_maps[(scale, radius)]
        for c in range(grid.shape[2]):
            g = grid[:, :, c]
            labels, count = ndimage.label(g <= limit, structure=structure)
            if count == 0:
                continue
            flat_labels = labels.ravel()
            flat = g.ravel()
            # first minimum in scan order within each component
            order = np.lexsort((np.arange(flat.size), flat))
            seen = set()
            for i in order:
                lab = flat_labels[i]
                if lab == 0 or lab in seen:
                    continue
                seen.add(lab)
                y, x = divmod(int(i), g.shape[1])
                lg = float(flat[i])
                records.append(DetectionRecord(
                    x=x * 2 ** scale, y=y * 2 ** scale, scale=scale, kernel_radius=radius,
                    channel=c, nfa=float(10.0 ** lg), log10_nfa=lg, band=band_for(lg),
                ))
                if len(seen) == count:
                    break
    records.sort(key=lambda r: (r.scale, r.channel, r.kernel_radius, r.y, r.x))
    return records


# a residual channel whose spread is this small relative to the image is
# floating-point rounding from a fully explained image, not noise
DEGENERATE_RTOL = 1e-9


def _degenerate(channel, reference_rms):
    rms = float(np.sqrt(np.mean(channel * channel)))
    return rms <= DEGENERATE_RTOL * max(reference_rms, 1.0)


def calibrate_residual(res, reference_rms=0.0):
    """Median-center each channel, fit a GGD, and map to standard normal.

    Channels at rounding level (see ``DEGENERATE_RTOL``) map to zeros and get
    ``None`` for their parameters.
    """
    centered = res - np.median(res.reshape(-1, res.shape[2]), axis=0)
    out = np.zeros_like(centered)
    params = []
    for c in range(res.shape[2]):
        if _degenerate(centered[:, :, c], reference_rms):
            params.append(None)
            continue
        p = calibration.fit_ggd(centered[:, :, c])
        out[:, :, c] = calibration.gaussianize_values(centered[:, :, c], p)
        params.append(p)
    return out, params


def detect(image, config=None, backend=None):
    """Full pipeline; returns a DetectionResult (records may be empty)."""
    config = config or DetectionConfig()
    timings = {}
    t0 = time.perf_counter()
    work, basis = feature_prep.prepare(image, config.mode, config.pca_components)
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = residual_mod.compute_residual(work, config.residual, backend=backend)
    timings["residual"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gauss, ggd = calibrate_residual(res, float(np.sqrt(np.mean(work * work))))
    pyramid = image_core.build_pyramid(gauss, config.n_scales, mode=BOUNDARY)
    n_tests = count_tests(config, pyramid)
    stack = NfaMapStack(n_tests=n_tests)
    kernels = [image_core.disk_kernel(r) for r in config.kernel_radii]
    # after gain correction a white residual has the level-0 spread in every map;
    # coarse maps hold few independent samples, so their robust estimate may not
    # drop below that
    # (a degenerate channel stays identically zero; floor 1 keeps it at NFA = N)
    floor = [calibration.robust_sigma(gauss[:, :, c])[1] if p is not None else 1.0
             for c, p in enumerate(ggd)]
    for s, level in enumerate(pyramid.levels):
        for k in kernels:
            filtered = image_core.convolve_disk(level, k, mode=BOUNDARY)
            gain = image_core.noise_gain(level.shape, gauss.shape, s, k.radius, BOUNDARY)
            filtered /= gain[:, :, None]
            normalized, stats = calibration.normalize_unit_variance(filtered, floor)
            stack.log10_maps[(s, k.radius)] = log10_nfa_map(normalized, n_tests)
            stack.sigmas[(s, k.radius)] = [st.sigma for st in stats]
    timings["detection"] = time.perf_counter() - t0

    records = group_detections(stack, config.epsilon)
    log.info("%d detections over %d tests", len(records), n_tests)
    return DetectionResult(
        records=records, stack=stack, ggd=ggd, basis=basis,
        pyramid_shapes=[lvl.shape[:2] for lvl in pyramid.levels], timings=timings,
    )

"""Anomaly detection by self-similarity removal and a-contrario NFA control."""
from .errors import CalibrationError, FeatureMapError, InvalidInputError
from .calibration import GgdParams, fit_ggd, gaussianize, normalize_unit_variance
from .feature_prep import PcaBasis, fit_pca, load_feature_map, prepare, project, save_feature_map, sqrt_compress
from .image_core import DiskKernel, Pyramid, as_image, build_pyramid, convolve_disk, disk_kernel, downsample
from .nfa_detect import (
    DetectionConfig, DetectionRecord, DetectionResult, NfaMapStack, count_tests, detect,
    group_detections, log10_nfa_map, nfa_map,
)
from .residual import (
    PatchMatch, PatchSpec, ResidualParams, compute_residual, nearest_neighbors, reconstruct_patch,
    self_similar_estimate,
)

__version__ = "0.1.0"

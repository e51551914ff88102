"""Detection inputs: raw color pixels, or external feature maps reduced by PCA.

Feature maps travel as FMAP files: a 16-byte header (ASCII ``FMAP`` then
width, height, channels as little-endian uint32) followed by little-endian
float32 samples in planar order, all of channel 0 row-major, then channel 1...
"""
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FeatureMapError, InvalidInputError
from .image_core import as_image

FMAP_MAGIC = b"FMAP"
FMAP_HEADER = struct.Struct("<4sIII")

PIXELS = "pixels"
FEATURES = "features"
MODES = (PIXELS, FEATURES)


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (k, channels), rows orthonormal
    explained_variance: np.ndarray
    rank_deficient: bool = False

    @property
    def k(self):
        return self.components.shape[0]

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "rank_deficient": self.rank_deficient,
        }


def sqrt_compress(features):
    """Signed square root, sign(v) * sqrt(|v|)."""
    f = as_image(features, "features")
    return np.sign(f) * np.sqrt(np.abs(f))


def _fix_signs(vectors):
    # rows: make the entry of largest magnitude positive
    lead = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), lead])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def fit_pca(features, k=5):
    """Per-image PCA of the channel vectors.

    Directions beyond the numerical rank are an arbitrary orthonormal
    completion with zero variance; ``rank_deficient`` is then set and a
    warning issued.
    """
    f = as_image(features, "features")
    c = f.shape[2]
    if c < k:
        raise InvalidInputError(f"need at least {k} channels for PCA, got {c}")
    x = f.reshape(-1, c)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    tol = max(evals[0], 0.0) * c * np.finfo(float).eps * 10
    rank = int(np.count_nonzero(evals > tol))
    deficient = rank < k
    if deficient:
        warnings.warn(f"feature covariance has rank {rank} < {k}; padding the basis", RuntimeWarning)
        evals[rank:] = 0.0
    return PcaBasis(
        mean=mean,
        components=_fix_signs(evecs[:k]),
        explained_variance=evals[:k].copy(),
        rank_deficient=deficient,
    )


def project(features, basis):
    f = as_image(features, "features")
    if f.shape[2] != basis.components.shape[1]:
        raise InvalidInputError(
            f"feature map has {f.shape[2]} channels but the basis expects {basis.components.shape[1]}"
        )
    return (f - basis.mean) @ basis.components.T


def prepare(image, mode, k=5):
    """Working channels for detection; returns (image, basis or None).

    Pixels mode uses the color channels directly: gray is replicated to three
    channels and an alpha channel is dropped.
    """
    img = as_image(image)
    if mode == PIXELS:
        c = img.shape[2]
        if c == 1:
            img = np.repeat(img, 3, axis=2)
        elif c == 4:
            img = img[:, :, :3].copy()
        elif c != 3:
            raise InvalidInputError(f"pixels mode takes 1, 3 or 4 channels, got {c}")
        return img, None
    if mode == FEATURES:
        compressed = sqrt_compress(img)
        basis = fit_pca(compressed, k)
        return np.ascontiguousarray(project(compressed, basis)), basis
    raise InvalidInputError(f"unknown mode {mode!r}, expected one of {MODES}")


def save_feature_map(path, image):
    """Write an (H, W, C) array as FMAP; the file is replaced atomically."""
    img = as_image(image)
    h, w, c = img.shape
    payload = FMAP_HEADER.pack(FMAP_MAGIC, w, h, c) + np.ascontiguousarray(
        img.transpose(2, 0, 1), dtype="<f4"
    ).tobytes()
    atomic_write_bytes(path, payload)


def read_feature_map_header(raw):
    if len(raw) < FMAP_HEADER.size:
        raise FeatureMapError(
            f"file too short for the FMAP header: expected at least {FMAP_HEADER.size} bytes, got {len(raw)}"
        )
    magic, w, h, c = FMAP_HEADER.unpack_from(raw)
    if magic != FMAP_MAGIC:
        raise FeatureMapError(f"bad magic {magic!r}, expected {FMAP_MAGIC!r}", byte_offset=0)
    return w, h, c


def load_feature_map(path, width=None, height=None, channels=None):
    """Read an FMAP file; optional declared dimensions must match the header."""
    with open(path, "rb") as fh:
        raw = fh.read()
    w, h, c = read_feature_map_header(raw)
    for name, declared, actual in (("width", width, w), ("height", height, h), ("channels", channels, c)):
        if declared is not None and declared != actual:
            raise FeatureMapError(f"declared {name} {declared} but file header says {actual}")
    if w == 0 or h == 0 or c == 0:
        raise FeatureMapError(f"degenerate dimensions {w}x{h}x{c}")
    expected = FMAP_HEADER.size + 4 * w * h * c
    if len(raw) != expected:
        raise FeatureMapError(
            f"size mismatch: expected {expected} bytes for {w}x{h}x{c}, got {len(raw)}",
            byte_offset=min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f4", offset=FMAP_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        off = FMAP_HEADER.size + 4 * i
        raise FeatureMapError(f"non-finite value at element {i} (byte offset {off})", index=i, byte_offset=off)
    return values.reshape(c, h, w).transpose(1, 2, 0).astype(np.float64)


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

"""Self-similar estimate and residual via exclusion-zone non-local averaging.

Every patch is replaced by a weighted mean of its ``n`` most similar patches
taken from anywhere in the image except the square of positions whose patches
would intersect it. Pixel estimates are the plain mean over all covering
patch reconstructions, and the residual is ``estimate - image``.

Patches are indexed by their top-left corner.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels_numpy
from ._backend import get_backend
from .errors import InvalidInputError
from .image_core import as_image


@dataclass(frozen=True)
class PatchSpec:
    x: int
    y: int
    side: int


@dataclass(frozen=True)
class PatchMatch:
    x: int
    y: int
    distance: float


@dataclass(frozen=True)
class ResidualParams:
    patch_side: int = 8
    n_neighbors: int = 16
    h: float = 10.0
    search_stride: int = 1

    def __post_init__(self):
        if self.patch_side < 2:
            raise InvalidInputError(f"patch_side must be >= 2, got {self.patch_side}")
        if self.n_neighbors < 1:
            raise InvalidInputError(f"n_neighbors must be >= 1, got {self.n_neighbors}")
        if not self.h > 0:
            raise InvalidInputError(f"h must be > 0, got {self.h}")
        if self.search_stride < 1:
            raise InvalidInputError(f"search_stride must be >= 1, got {self.search_stride}")


def _kernels(backend):
    if get_backend(backend) == "numba":
        from . import _kernels_numba
        return _kernels_numba
    return _kernels_numpy


def _axis_counts(length, p, stride):
    """Per query coordinate: (grid candidates on the axis, grid candidates within p-1 of it)."""
    nq = length - p + 1
    grid = np.zeros(nq + 1, dtype=np.int64)
    grid[1:] = np.cumsum(np.arange(nq) % stride == 0)
    q = np.arange(nq)
    lo = np.maximum(q - p + 1, 0)
    hi = np.minimum(q + p - 1, nq - 1)
    return grid[-1], grid[hi + 1] - grid[lo]


def admissible_counts(shape, p, stride=1):
    """Number of admissible candidates for every query position, shape (hq, wq)."""
    H, W = shape[:2]
    if H < p or W < p:
        raise InvalidInputError(f"patch side {p} does not fit a {W}x{H} image")
    gy, ny = _axis_counts(H, p, stride)
    gx, nx = _axis_counts(W, p, stride)
    return gy * gx - np.outer(ny, nx)


def _check_capacity(shape, params):
    counts = admissible_counts(shape, params.patch_side, params.search_stride)
    worst = int(counts.min())
    if worst < params.n_neighbors:
        raise InvalidInputError(
            f"only {worst} admissible candidates for some patch but n_neighbors="
            f"{params.n_neighbors} (short by {params.n_neighbors - worst})"
        )


def nearest_neighbors(img, query, params):
    """Brute-force search for one query patch; returns ``n`` PatchMatch sorted by distance."""
    u = as_image(img)
    p = params.patch_side
    if query.side != p:
        raise InvalidInputError(f"query side {query.side} != patch_side {p}")
    H, W, _ = u.shape
    if not (0 <= query.x <= W - p and 0 <= query.y <= H - p):
        raise InvalidInputError(f"query patch at ({query.x}, {query.y}) is out of bounds")
    windows = np.lib.stride_tricks.sliding_window_view(u, (p, p), axis=(0, 1))
    ref = windows[query.y, query.x]
    dist = ((windows - ref) ** 2).sum(axis=(2, 3, 4))
    hq, wq = dist.shape
    yy, xx = np.mgrid[0:hq, 0:wq]
    ok = (np.maximum(np.abs(yy - query.y), np.abs(xx - query.x)) >= p)
    ok &= (yy % params.search_stride == 0) & (xx % params.search_stride == 0)
    n = params.n_neighbors
    available = int(ok.sum())
    if available < n:
        raise InvalidInputError(
            f"only {available} admissible candidates but n_neighbors={n} (short by {n - available})"
        )
    flat = np.flatnonzero(ok.ravel())
    d = dist.ravel()[flat]
    # stable sort keeps row-major scan order among equal distances
    order = np.argsort(d, kind="stable")[:n]
    return [PatchMatch(x=int(flat[k] % wq), y=int(flat[k] // wq), distance=float(d[k])) for k in order]


def patch_weights(distances, h):
    """Normalized exp(-d / h^2) weights, one row per query.

    The shift by the row minimum cancels in the normalization and keeps the
    sum from underflowing when every match is far.
    """
    d = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    w = np.exp(-(d - d.min(axis=1, keepdims=True)) / (h * h))
    return w / w.sum(axis=1, keepdims=True)


def reconstruct_patch(query, matches, img, h):
    """Weighted average of the matched patches, shape (side, side, channels)."""
    if not matches:
        raise InvalidInputError("reconstruct_patch needs at least one match")
    if not h > 0:
        raise InvalidInputError(f"h must be > 0, got {h}")
    u = as_image(img)
    p = query.side
    w = patch_weights([m.distance for m in matches], h)[0]
    stack = np.stack([u[m.y:m.y + p, m.x:m.x + p] for m in matches])
    return np.tensordot(w, stack, axes=1)


def search_all(img, params, backend=None):
    """(distances, flat indices) of the n matches for every dense query position."""
    u = as_image(img)
    _check_capacity(u.shape, params)
    k = _kernels(backend)
    return k.knn_search(u, params.patch_side, params.n_neighbors, params.search_stride)


def compute_residual(img, params, backend=None):
    """Residual ``estimate - image`` with the dimensions of ``img``.

    Accumulated as weighted deviations of each match from its query patch,
    which equals the difference of means and is exactly zero wherever the
    matches are exact copies.
    """
    u = as_image(img)
    dist, index = search_all(u, params, backend)
    weights = patch_weights(dist, params.h)
    acc, count = _kernels(backend).aggregate(u, params.patch_side, index, weights)
    return acc / count[:, :, None]


def self_similar_estimate(img, params, backend=None):
    u = as_image(img)
    return u + compute_residual(u, params, backend)

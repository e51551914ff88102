"""Synthetic test images with known anomalies.

Each generator returns ``(image, truth)`` where ``image`` is a uint8
(H, W, 3) array and ``truth`` a JSON-ready dict. ``truth["box"]`` is the
inclusive pixel bounding box ``[x0, y0, x1, y1]`` of the anomaly, or None.
"""
import numpy as np

KINDS = ("periodic_block", "color_dot", "noise")
SIZE = 128
TILE = 16
NOISE_STD = 3.0


def _texture(rng, size, tile):
    base = rng.uniform(60.0, 190.0, size=(tile, tile, 3))
    reps = -(-size // tile)
    return np.tile(base, (reps, reps, 1))[:size, :size]


def _finish(rng, img):
    img = img + rng.normal(0.0, NOISE_STD, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def periodic_block(seed, size=SIZE, block=8):
    """Tiled random texture with one inverted ``block`` x ``block`` square."""
    rng = np.random.default_rng(seed)
    img = _texture(rng, size, TILE)
    margin = 16
    x0, y0 = (int(v) for v in rng.integers(margin, size - margin - block, size=2))
    img[y0:y0 + block, x0:x0 + block] = 255.0 - img[y0:y0 + block, x0:x0 + block]
    truth = {"kind": "periodic_block", "seed": seed, "box": [x0, y0, x0 + block - 1, y0 + block - 1]}
    return _finish(rng, img), truth


def color_dot(seed, size=SIZE, radius=3):
    """Tiled texture with a saturated red disk."""
    rng = np.random.default_rng(seed)
    img = _texture(rng, size, TILE)
    margin = 16
    cx, cy = (int(v) for v in rng.integers(margin, size - margin, size=2))
    yy, xx = np.mgrid[0:size, 0:size]
    dot = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    img[dot] = (255.0, 0.0, 0.0)
    truth = {"kind": "color_dot", "seed": seed, "box": [cx - radius, cy - radius, cx + radius, cy + radius]}
    return _finish(rng, img), truth


def noise(seed, size=SIZE):
    rng = np.random.default_rng(seed)
    img = rng.normal(128.0, 20.0, size=(size, size, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), {"kind": "noise", "seed": seed, "box": None}


def generate(kind, seed):
    try:
        fn = {"periodic_block": periodic_block, "color_dot": color_dot, "noise": noise}[kind]
    except KeyError:
        raise ValueError(f"unknown fixture kind {kind!r}, expected one of {KINDS}") from None
    return fn(seed)

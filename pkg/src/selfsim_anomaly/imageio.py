"""PNG input/output and the detection overlay."""
import io

import numpy as np
import png

from .feature_prep import atomic_write_bytes

BAND_COLORS = {
    "weak": (255, 255, 255),
    "mild": (0, 255, 255),
    "strong": (0, 255, 0),
    "very_strong": (255, 165, 0),
}
BEST_COLOR = (255, 0, 0)
CIRCLE_BASE_RADIUS = 4


def read_png(path):
    """(H, W, C) float64 in [0, 255]; 16-bit samples are rescaled, alpha dropped."""
    width, height, rows, info = png.Reader(filename=str(path)).asDirect()
    planes = info["planes"]
    data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows]).reshape(height, width, planes)
    if info["bitdepth"] != 8:
        data *= 255.0 / (2 ** info["bitdepth"] - 1)
    if info.get("alpha"):
        data = data[:, :, :-1]
    return np.ascontiguousarray(data)


def write_png(path, rgb):
    """Write an (H, W, 3) or (H, W) array, clipped to 8 bits."""
    arr = np.clip(np.rint(np.asarray(rgb, dtype=np.float64)), 0, 255).astype(np.uint8)
    greyscale = arr.ndim == 2
    h, w = arr.shape[:2]
    buf = io.BytesIO()
    png.Writer(width=w, height=h, greyscale=greyscale, bitdepth=8).write(buf, arr.reshape(h, -1))
    atomic_write_bytes(path, buf.getvalue())


def to_display(image):
    """Map an arbitrary (H, W, C) array to displayable 8-bit RGB."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape[2] == 3 and img.min() >= 0 and img.max() <= 255:
        return img.copy()
    gray = img.mean(axis=2)
    lo, hi = gray.min(), gray.max()
    gray = (gray - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(gray)
    return np.repeat(gray[:, :, None], 3, axis=2)


def circle_specs(records):
    """(x, y, radius, color) for every record; the lowest-NFA record is last and red."""
    if not records:
        return []
    best = min(range(len(records)), key=lambda i: (records[i].log10_nfa, i))
    specs = []
    for i, r in enumerate(records):
        if i != best:
            specs.append((r.x, r.y, CIRCLE_BASE_RADIUS * 2 ** r.scale, BAND_COLORS[r.band]))
    r = records[best]
    specs.append((r.x, r.y, CIRCLE_BASE_RADIUS * 2 ** r.scale, BEST_COLOR))
    return specs


def render_overlay(base, records):
    """Draw one circle outline per record; returns (rgb array, circle specs)."""
    out = to_display(base)
    h, w = out.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    specs = circle_specs(records)
    for x, y, radius, color in specs:
        ring = np.abs(np.hypot(xx - x, yy - y) - radius) <= 0.5
        out[ring] = color
    return out, specs

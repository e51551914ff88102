"""Independent reference implementations shared by the test modules."""
import math

import mpmath
import numpy as np


def naive_residual(u, p, n, h):
    """Direct transcription: loop over queries, loop over candidates, average."""
    H, W, C = u.shape
    positions = [(y, x) for y in range(H - p + 1) for x in range(W - p + 1)]
    acc = np.zeros_like(u)
    cnt = np.zeros((H, W))
    for qy, qx in positions:
        ref = u[qy:qy + p, qx:qx + p]
        cands = []
        for idx, (y, x) in enumerate(positions):
            if max(abs(y - qy), abs(x - qx)) < p:
                continue
            d = float(np.sum((u[y:y + p, x:x + p] - ref) ** 2))
            cands.append((d, idx, y, x))
        cands.sort()
        best = cands[:n]
        w = np.array([math.exp(-d / (h * h)) for d, *_ in best])
        if not w.sum() > 0:
            raise ValueError("weights underflow; use smaller sample values or a larger h")
        w /= w.sum()
        rec = sum(wk * u[y:y + p, x:x + p] for wk, (_, _, y, x) in zip(w, best))
        acc[qy:qy + p, qx:qx + p] += rec
        cnt[qy:qy + p, qx:qx + p] += 1
    return acc / cnt[:, :, None] - u


def mp_nfa(x, n):
    """N * P(|Z| >= |x|) at 50 digits."""
    mpmath.mp.dps = 50
    return n * mpmath.erfc(abs(mpmath.mpf(x)) / mpmath.sqrt(2))

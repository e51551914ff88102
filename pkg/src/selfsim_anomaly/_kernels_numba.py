"""numba kernels for the exclusion-zone patch search and patch aggregation.

Candidates are ranked by the total order (distance, flat position), so heap
contents never depend on the order in which pairs are visited.
"""
import numpy as np
from numba import njit

NO_INDEX = np.iinfo(np.int64).max


@njit(cache=True, inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True)
def _heap_replace_root(hd, hi, row, d, idx):
    # max-heap over (distance, index); caller guarantees (d, idx) < root
    n = hd.shape[1]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        right = child + 1
        if right < n and _less(hd[row, child], hi[row, child], hd[row, right], hi[row, right]):
            child = right
        if _less(d, idx, hd[row, child], hi[row, child]):
            hd[row, pos] = hd[row, child]
            hi[row, pos] = hi[row, child]
            pos = child
        else:
            break
    hd[row, pos] = d
    hi[row, pos] = idx


@njit(cache=True)
def _offer(hd, hi, row, d, idx):
    if _less(d, idx, hd[row, 0], hi[row, 0]):
        _heap_replace_root(hd, hi, row, d, idx)


@njit(cache=True)
def _sort_rows(hd, hi):
    q_count, n = hd.shape
    for q in range(q_count):
        for a in range(1, n):
            d = hd[q, a]
            i = hi[q, a]
            b = a - 1
            while b >= 0 and _less(d, i, hd[q, b], hi[q, b]):
                hd[q, b + 1] = hd[q, b]
                hi[q, b + 1] = hi[q, b]
                b -= 1
            hd[q, b + 1] = d
            hi[q, b + 1] = i


@njit(cache=True)
def knn_search(u, p, n, stride):
    """n nearest non-intersecting patches for every top-left position.

    Returns (dist, index) arrays of shape (Q, n) sorted ascending, where index
    is the flat position y * wq + x of the matched patch.
    """
    H, W, C = u.shape
    hq = H - p + 1
    wq = W - p + 1
    hd = np.full((hq * wq, n), np.inf)
    hi = np.full((hq * wq, n), NO_INDEX, dtype=np.int64)
    colsum = np.empty(W)
    ring = np.empty((p, W))

    for dy in range(hq):
        ny = hq - dy
        for dx in range(-(wq - 1), wq):
            # each unordered pair once; skip offsets inside the exclusion square
            if dy == 0 and dx <= 0:
                continue
            if dy < p and -p < dx < p:
                continue
            xa = max(0, -dx)
            xb = min(wq, wq - dx)
            xe = xb + p - 1
            for xx in range(xa, xe):
                s = 0.0
                for i in range(p):
                    v = 0.0
                    for c in range(C):
                        t = u[i, xx, c] - u[i + dy, xx + dx, c]
                        v += t * t
                    ring[i, xx] = v
                    s += v
                colsum[xx] = s
            for y in range(ny):
                if y > 0:
                    slot = (y - 1) % p
                    yy = y + p - 1
                    for xx in range(xa, xe):
                        v = 0.0
                        for c in range(C):
                            t = u[yy, xx, c] - u[yy + dy, xx + dx, c]
                            v += t * t
                        colsum[xx] += v - ring[slot, xx]
                        ring[slot, xx] = v
                a_on = y % stride == 0
                b_on = (y + dy) % stride == 0
                s = 0.0
                for j in range(p):
                    s += colsum[xa + j]
                for x in range(xa, xb):
                    if x > xa:
                        s += colsum[x + p - 1] - colsum[x - 1]
                    d = s if s > 0.0 else 0.0
                    a = y * wq + x
                    b = (y + dy) * wq + x + dx
                    if b_on and (x + dx) % stride == 0:
                        _offer(hd, hi, a, d, b)
                    if a_on and x % stride == 0:
                        _offer(hd, hi, b, d, a)
    _sort_rows(hd, hi)
    return hd, hi


@njit(cache=True)
def aggregate(u, p, index, weights):
    """Per pixel: sum over covering queries of the weighted match deviation
    sum_k w_k (P_k - P_q), and the cover counts."""
    H, W, C = u.shape
    hq = H - p + 1
    wq = W - p + 1
    n = index.shape[1]
    acc = np.zeros((H, W, C))
    count = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            for qy in range(max(0, y - p + 1), min(hq, y + 1)):
                i = y - qy
                for qx in range(max(0, x - p + 1), min(wq, x + 1)):
                    j = x - qx
                    q = qy * wq + qx
                    for k in range(n):
                        m = index[q, k]
                        my = m // wq + i
                        mx = m % wq + j
                        w = weights[q, k]
                        for c in range(C):
                            acc[y, x, c] += w * (u[my, mx, c] - u[y, x, c])
                    count[y, x] += 1.0
    return acc, count

"""Pure numpy fallback for the kernels in ``_kernels_numba``.

Same contracts; distances are box sums taken from cumulative sums, so the
floating point values may differ from the numba path in the last few ulps.
"""
import numpy as np

NO_INDEX = np.iinfo(np.int64).max


class _TopN:
    """Vectorized per-row bounded selection under the (distance, index) order."""

    def __init__(self, rows, n):
        self.d = np.full((rows, n), np.inf)
        self.i = np.full((rows, n), NO_INDEX, dtype=np.int64)
        self.wpos = np.zeros(rows, dtype=np.int64)
        self.wd = np.full(rows, np.inf)
        self.wi = np.full(rows, NO_INDEX, dtype=np.int64)

    def offer(self, rows, d, idx):
        # rows must be unique within one call
        wd = self.wd[rows]
        keep = (d < wd) | ((d == wd) & (idx < self.wi[rows]))
        if not keep.any():
            return
        rows, d, idx = rows[keep], d[keep], idx[keep]
        pos = self.wpos[rows]
        self.d[rows, pos] = d
        self.i[rows, pos] = idx
        bd = self.d[rows]
        bi = self.i[rows]
        mx = bd.max(axis=1)
        tied = np.where(bd == mx[:, None], bi, -1)
        newpos = tied.argmax(axis=1)
        self.wpos[rows] = newpos
        self.wd[rows] = mx
        self.wi[rows] = bi[np.arange(len(rows)), newpos]

    def sorted(self):
        order = np.lexsort((self.i, self.d), axis=-1)
        return (np.take_along_axis(self.d, order, axis=1),
                np.take_along_axis(self.i, order, axis=1))


def knn_search(u, p, n, stride):
    H, W, C = u.shape
    hq = H - p + 1
    wq = W - p + 1
    top = _TopN(hq * wq, n)
    qy, qx = np.mgrid[0:hq, 0:wq]
    flat = qy * wq + qx
    on_grid = (qy % stride == 0) & (qx % stride == 0)

    for dy in range(hq):
        ny = hq - dy
        for dx in range(-(wq - 1), wq):
            if dy == 0 and dx <= 0:
                continue
            if dy < p and -p < dx < p:
                continue
            xa = max(0, -dx)
            xb = min(wq, wq - dx)
            diff = u[0:ny + p - 1, xa:xb + p - 1] - u[dy:dy + ny + p - 1, xa + dx:xb + dx + p - 1]
            sq = np.einsum("yxc,yxc->yx", diff, diff)
            cs = np.zeros((sq.shape[0] + 1, sq.shape[1] + 1))
            np.cumsum(np.cumsum(sq, axis=0), axis=1, out=cs[1:, 1:])
            box = cs[p:, p:] - cs[:-p, p:] - cs[p:, :-p] + cs[:-p, :-p]
            np.maximum(box, 0.0, out=box)
            a = flat[0:ny, xa:xb]
            b = flat[dy:hq, xa + dx:xb + dx]
            mb = on_grid[dy:hq, xa + dx:xb + dx]
            ma = on_grid[0:ny, xa:xb]
            top.offer(a[mb], box[mb], b[mb])
            top.offer(b[ma], box[ma], a[ma])
    return top.sorted()


def aggregate(u, p, index, weights):
    H, W, C = u.shape
    hq = H - p + 1
    wq = W - p + 1
    my = index // wq
    mx = index % wq
    acc = np.zeros((H, W, C))
    for i in range(p):
        for j in range(p):
            own = u[i:i + hq, j:j + wq].reshape(-1, 1, C)
            vals = u[my + i, mx + j] - own  # (Q, n, C)
            rec = np.einsum("qn,qnc->qc", weights, vals)
            acc[i:i + hq, j:j + wq] += rec.reshape(hq, wq, C)
    cy = np.convolve(np.ones(hq), np.ones(p))
    cx = np.convolve(np.ones(wq), np.ones(p))
    return acc, np.outer(cy, cx)

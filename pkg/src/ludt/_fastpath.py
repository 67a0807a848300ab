"""Fused kernels for the online tracker's hot loop.

Same math as imgproc.crop_square and network.forward (plus the cosine window),
restructured to minimize memory traffic: conv1 runs as a small GEMM over a
gathered patch matrix; conv2 runs as a Winograd F(4x4, 3x3) pipeline whose
input transform folds in conv1's bias/ReLU and whose output transform folds in
the response normalization and window, so no intermediate feature plane ever
round-trips through memory.  Without numba the extractor falls back to the
reference forward pass (identical results, slower).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap(args[0]) if args and callable(args[0]) else wrap


@njit(cache=True, fastmath=True)
def crop_bilinear(frame, cx, cy, side, out_size):
    """Square bilinear crop with edge replication; frame is (H, W, 3)."""
    h, w = frame.shape[0], frame.shape[1]
    scale = side / out_size
    x_base = cx - side / 2.0
    y_base = cy - side / 2.0
    out = np.empty((out_size, out_size, 3), dtype=frame.dtype)
    for i in range(out_size):
        sy = y_base + (i + 0.5) * scale
        y0 = int(np.floor(sy))
        fy = sy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for j in range(out_size):
            sx = x_base + (j + 0.5) * scale
            x0 = int(np.floor(sx))
            fx = sx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for c in range(3):
                a = frame[y0c, x0c, c]
                b = frame[y0c, x1c, c]
                cc = frame[y1c, x0c, c]
                d = frame[y1c, x1c, c]
                top = a + (b - a) * fx
                bot = cc + (d - cc) * fx
                out[i, j, c] = top + (bot - top) * fy
    return out


@njit(cache=True, fastmath=True)
def _gather3x3(src, cols, h, w, ci):
    """3x3 zero-padded patch gather: src (h*w, ci) -> cols (h*w, 9*ci)."""
    for r in range(h):
        for t in range(9):
            u = t // 3 - 1
            v = t % 3 - 1
            rr = r + u
            base = t * ci
            if rr < 0 or rr >= h:
                for c in range(w):
                    j = r * w + c
                    for i in range(ci):
                        cols[j, base + i] = 0.0
                continue
            row0 = rr * w
            c_lo = 1 if v < 0 else 0
            c_hi = w - 1 if v > 0 else w
            if v < 0:
                j = r * w
                for i in range(ci):
                    cols[j, base + i] = 0.0
            if v > 0:
                j = r * w + w - 1
                for i in range(ci):
                    cols[j, base + i] = 0.0
            for c in range(c_lo, c_hi):
                j = r * w + c
                s = row0 + c + v
                for i in range(ci):
                    cols[j, base + i] = src[s, i]
    return cols


@njit(cache=True, fastmath=True)
def _wino_input_relu(y1, bias, V, tile_base, tiles, h, w, ci):
    """Winograd F(4x4, 3x3) input transform over max(0, y1 + bias) with an
    implicit 1-pixel zero border.

    y1: (h*w, ci); V: (36, n_tiles, ci).  Tiles stride 4; channel lanes run
    innermost so every combination vectorizes; interior tiles read y1 rows
    directly with the ReLU recomputed inline.
    """
    d = np.empty((6, 6, ci), dtype=y1.dtype)
    tmp = np.empty((6, 6, ci), dtype=y1.dtype)
    for ty in range(tiles):
        r0 = 4 * ty - 1
        for tx in range(tiles):
            c0 = 4 * tx - 1
            t = tile_base + ty * tiles + tx
            interior = r0 >= 0 and r0 + 6 <= h and c0 >= 0 and c0 + 6 <= w
            if interior:
                for col in range(6):
                    p0 = (r0 + 0) * w + c0 + col
                    p1 = p0 + w
                    p2 = p1 + w
                    p3 = p2 + w
                    p4 = p3 + w
                    p5 = p4 + w
                    for i in range(ci):
                        b = bias[i]
                        e0 = y1[p0, i] + b
                        if e0 < 0.0:
                            e0 = 0.0
                        e1 = y1[p1, i] + b
                        if e1 < 0.0:
                            e1 = 0.0
                        e2 = y1[p2, i] + b
                        if e2 < 0.0:
                            e2 = 0.0
                        e3 = y1[p3, i] + b
                        if e3 < 0.0:
                            e3 = 0.0
                        e4 = y1[p4, i] + b
                        if e4 < 0.0:
                            e4 = 0.0
                        e5 = y1[p5, i] + b
                        if e5 < 0.0:
                            e5 = 0.0
                        tmp[0, col, i] = 4.0 * e0 - 5.0 * e2 + e4
                        tmp[1, col, i] = -4.0 * e1 - 4.0 * e2 + e3 + e4
                        tmp[2, col, i] = 4.0 * e1 - 4.0 * e2 - e3 + e4
                        tmp[3, col, i] = -2.0 * e1 - e2 + 2.0 * e3 + e4
                        tmp[4, col, i] = 2.0 * e1 - e2 - 2.0 * e3 + e4
                        tmp[5, col, i] = 4.0 * e1 - 5.0 * e3 + e5
            else:
                for row in range(6):
                    rr = r0 + row
                    if rr < 0 or rr >= h:
                        for col in range(6):
                            for i in range(ci):
                                d[row, col, i] = 0.0
                        continue
                    base = rr * w
                    for col in range(6):
                        cc = c0 + col
                        if cc < 0 or cc >= w:
                            for i in range(ci):
                                d[row, col, i] = 0.0
                        else:
                            src = y1[base + cc]
                            dst = d[row, col]
                            for i in range(ci):
                                v = src[i] + bias[i]
                                dst[i] = v if v > 0.0 else 0.0
                for col in range(6):
                    for i in range(ci):
                        d0 = d[0, col, i]
                        d1 = d[1, col, i]
                        d2 = d[2, col, i]
                        d3 = d[3, col, i]
                        d4 = d[4, col, i]
                        d5 = d[5, col, i]
                        tmp[0, col, i] = 4.0 * d0 - 5.0 * d2 + d4
                        tmp[1, col, i] = -4.0 * d1 - 4.0 * d2 + d3 + d4
                        tmp[2, col, i] = 4.0 * d1 - 4.0 * d2 - d3 + d4
                        tmp[3, col, i] = -2.0 * d1 - d2 + 2.0 * d3 + d4
                        tmp[4, col, i] = 2.0 * d1 - d2 - 2.0 * d3 + d4
                        tmp[5, col, i] = 4.0 * d1 - 5.0 * d3 + d5
            # cols: (B^T . d) . B
            for row in range(6):
                r6 = row * 6
                for i in range(ci):
                    d0 = tmp[row, 0, i]
                    d1 = tmp[row, 1, i]
                    d2 = tmp[row, 2, i]
                    d3 = tmp[row, 3, i]
                    d4 = tmp[row, 4, i]
                    d5 = tmp[row, 5, i]
                    V[r6 + 0, t, i] = 4.0 * d0 - 5.0 * d2 + d4
                    V[r6 + 1, t, i] = -4.0 * d1 - 4.0 * d2 + d3 + d4
                    V[r6 + 2, t, i] = 4.0 * d1 - 4.0 * d2 - d3 + d4
                    V[r6 + 3, t, i] = -2.0 * d1 - d2 + 2.0 * d3 + d4
                    V[r6 + 4, t, i] = 2.0 * d1 - d2 - 2.0 * d3 + d4
                    V[r6 + 5, t, i] = 4.0 * d1 - 5.0 * d3 + d5
    return V


@njit(cache=True, fastmath=True)
def _wino_output_lrn(M, bias, win, k, alpha, feat, tile_base, tiles, h, w, co):
    """Winograd output transform fused with the cross-channel normalization
    and window: A^T . m . A per tile, then per valid pixel
    feat[p, c] = (y + b)_c / (k + alpha * window_sum)^0.75 * win[p].

    M: (36, n_tiles, co); feat: (h*w, co); win: (h*w,).
    """
    tmp = np.empty((4, 6, co), dtype=M.dtype)
    ob = np.empty((4, co), dtype=M.dtype)
    cum = np.empty(co + 1, dtype=M.dtype)
    for ty in range(tiles):
        r0 = 4 * ty
        for tx in range(tiles):
            c0 = 4 * tx
            t = tile_base + ty * tiles + tx
            # rows: A^T . m  (m indexed [row*6+col]); lanes innermost
            for col in range(6):
                for i in range(co):
                    m0 = M[0 + col, t, i]
                    m1 = M[6 + col, t, i]
                    m2 = M[12 + col, t, i]
                    m3 = M[18 + col, t, i]
                    m4 = M[24 + col, t, i]
                    m5 = M[30 + col, t, i]
                    tmp[0, col, i] = m0 + m1 + m2 + m3 + m4
                    tmp[1, col, i] = m1 - m2 + 2.0 * m3 - 2.0 * m4
                    tmp[2, col, i] = m1 + m2 + 4.0 * m3 + 4.0 * m4
                    tmp[3, col, i] = m1 - m2 + 8.0 * m3 - 8.0 * m4 + m5
            for row in range(4):
                rr = r0 + row
                if rr >= h:
                    break
                for i in range(co):
                    m0 = tmp[row, 0, i]
                    m1 = tmp[row, 1, i]
                    m2 = tmp[row, 2, i]
                    m3 = tmp[row, 3, i]
                    m4 = tmp[row, 4, i]
                    m5 = tmp[row, 5, i]
                    b = bias[i]
                    ob[0, i] = m0 + m1 + m2 + m3 + m4 + b
                    ob[1, i] = m1 - m2 + 2.0 * m3 - 2.0 * m4 + b
                    ob[2, i] = m1 + m2 + 4.0 * m3 + 4.0 * m4 + b
                    ob[3, i] = m1 - m2 + 8.0 * m3 - 8.0 * m4 + m5 + b
                n_cols = min(4, w - c0)
                for dc in range(n_cols):
                    pix = rr * w + c0 + dc
                    g = win[pix]
                    cum[0] = 0.0
                    for i in range(co):
                        vv = ob[dc, i]
                        cum[i + 1] = cum[i] + vv * vv
                    dst = feat[pix]
                    c_int_lo = min(2, co)
                    c_int_hi = max(co - 2, c_int_lo)
                    for i in range(c_int_lo, c_int_hi):
                        dd = k + alpha * (cum[i + 3] - cum[i - 2])
                        dst[i] = ob[dc, i] / np.sqrt(dd * np.sqrt(dd)) * g
                    for i in range(co):
                        if c_int_lo <= i < c_int_hi:
                            continue
                        lo = i - 2 if i - 2 > 0 else 0
                        hi = i + 3 if i + 3 < co else co
                        dd = k + alpha * (cum[hi] - cum[lo])
                        dst[i] = ob[dc, i] / np.sqrt(dd * np.sqrt(dd)) * g
    return feat


class FastExtractor:
    """Windowed feature extraction with buffers reused across same-size calls.

    Buffers are sized for `max_batch` patches so a scale pyramid runs its
    GEMMs over the stacked patch matrices.
    """

    def __init__(
        self,
        params,
        out_size: int,
        window: np.ndarray | None,
        dtype=np.float32,
        max_batch: int = 3,
    ):
        from .network import LRN_ALPHA, LRN_K

        self.dtype = np.dtype(dtype)
        self.params = params
        p = params.astype(np.float64)
        cin = p.conv1_w.shape[2]
        c1 = p.conv1_w.shape[3]
        c2 = p.conv2_w.shape[3]
        self.cin, self.c1, self.c2 = cin, c1, c2
        self.k1 = np.ascontiguousarray(
            p.conv1_w.reshape(9 * cin, c1), dtype=self.dtype
        )
        self.b1 = np.ascontiguousarray(p.conv1_b, dtype=self.dtype)
        self.b2 = np.ascontiguousarray(p.conv2_b, dtype=self.dtype)
        # Winograd-domain kernel U[k, ci, co] (transform in float64)
        g_mat = np.array(
            [
                [1 / 4, 0, 0],
                [-1 / 6, -1 / 6, -1 / 6],
                [-1 / 6, 1 / 6, -1 / 6],
                [1 / 24, 1 / 12, 1 / 6],
                [1 / 24, -1 / 12, 1 / 6],
                [0, 0, 1],
            ]
        )
        u = np.einsum("au,bv,uvcf->abcf", g_mat, g_mat, p.conv2_w)
        self.u = np.ascontiguousarray(u.reshape(36, c1, c2), dtype=self.dtype)
        self.lrn_k = self.dtype.type(LRN_K)
        self.lrn_alpha = self.dtype.type(LRN_ALPHA)
        n = out_size * out_size
        m = max_batch * n
        tiles = (out_size + 3) // 4
        self.out_size = out_size
        self.max_batch = max_batch
        self.tiles = tiles
        self.cols1 = np.empty((m, 9 * cin), dtype=self.dtype)
        self.y1 = np.empty((m, c1), dtype=self.dtype)
        self.v = np.empty((36, max_batch * tiles * tiles, c1), dtype=self.dtype)
        self.mprod = np.empty((36, max_batch * tiles * tiles, c2), dtype=self.dtype)
        self.feat = np.empty((m, c2), dtype=self.dtype)
        if window is None:
            window = np.ones((out_size, out_size))
        self._window2d = np.asarray(window, dtype=np.float64)
        win = np.ascontiguousarray(window.ravel(), dtype=self.dtype)
        self.window = np.ascontiguousarray(np.tile(win, max_batch))

    def extract_batch(self, patches) -> np.ndarray:
        """Patches [(S, S, 3), ...] -> feature maps (B, S, S, C); the result
        views a buffer reused by the next call."""
        if not HAVE_NUMBA:  # pragma: no cover - reference fallback
            return self._extract_batch_reference(patches)
        s = self.out_size
        n = s * s
        b = len(patches)
        if b > self.max_batch:
            raise ValueError(f"batch {b} exceeds buffer capacity {self.max_batch}")
        m = b * n
        t2 = self.tiles * self.tiles
        for i, patch in enumerate(patches):
            flat = np.ascontiguousarray(patch, dtype=self.dtype).reshape(n, self.cin)
            _gather3x3(flat, self.cols1[i * n : (i + 1) * n], s, s, self.cin)
        np.matmul(self.cols1[:m], self.k1, out=self.y1[:m])
        for i in range(b):
            _wino_input_relu(
                self.y1[i * n : (i + 1) * n], self.b1, self.v, i * t2,
                self.tiles, s, s, self.c1,
            )
        np.matmul(self.v[:, : b * t2, :], self.u, out=self.mprod[:, : b * t2, :])
        for i in range(b):
            _wino_output_lrn(
                self.mprod, self.b2, self.window[i * n : (i + 1) * n],
                self.lrn_k, self.lrn_alpha, self.feat[i * n : (i + 1) * n],
                i * t2, self.tiles, s, s, self.c2,
            )
        return self.feat[:m].reshape(b, s, s, self.c2)

    def _extract_batch_reference(self, patches) -> np.ndarray:
        from .network import forward

        outs = []
        for patch in patches:
            feat, _ = forward(np.asarray(patch, dtype=np.float64), self.params)
            outs.append((feat * self._window2d[:, :, None]).astype(self.dtype))
        return np.stack(outs)

    def extract(self, patch: np.ndarray) -> np.ndarray:
        """Single patch (S, S, 3) -> windowed feature map (S, S, C)."""
        return self.extract_batch([patch])[0]


def crop_bilinear_np(frame, cx, cy, side, out_size):
    from .imgproc import crop_square

    return crop_square(frame, cx, cy, side, out_size)


if not HAVE_NUMBA:  # pragma: no cover
    crop_bilinear = crop_bilinear_np

"""Numba kernels for the tile renderer and its backward pass.

All kernels run on flattened batches: parameter rows for every image are
concatenated, tiles carry the index of the image they belong to, and bins
refer to global parameter rows. Accumulation is float64 throughout, and every
parallel iteration writes only to slots owned by its loop index, so results
are bit-identical for any worker count.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit, prange

# Avoid probing optional threading backends; workqueue is always available
# and scheduling never affects results here.
numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True)
def fill_bins(gtx0, gtx1, gty0, gty1, tiles_x, tile_base, bin_off, bin_idx):
    """Populate CSR tile bins from per-splat tile ranges.

    Splat i covers the inclusive tile rectangle [gtx0..gtx1] x [gty0..gty1]
    of its image; a negative gtx0 marks a splat with no on-screen support.
    Two passes: count entries per tile, then fill in ascending splat order so
    each bin lists rows in increasing index order.
    """
    n = gtx0.shape[0]
    ntiles = bin_off.shape[0] - 1
    for t in range(ntiles + 1):
        bin_off[t] = 0
    for i in range(n):
        if gtx0[i] < 0:
            continue
        base = tile_base[i]
        for ty in range(gty0[i], gty1[i] + 1):
            for tx in range(gtx0[i], gtx1[i] + 1):
                bin_off[base + ty * tiles_x + tx + 1] += 1
    for t in range(ntiles):
        bin_off[t + 1] += bin_off[t]
    cursor = bin_off[:-1].copy()
    for i in range(n):
        if gtx0[i] < 0:
            continue
        base = tile_base[i]
        for ty in range(gty0[i], gty1[i] + 1):
            for tx in range(gtx0[i], gtx1[i] + 1):
                t = base + ty * tiles_x + tx
                bin_idx[cursor[t]] = i
                cursor[t] += 1


@njit(parallel=True, cache=True)
def forward(px, py, tiles, tile_img, bin_off, bin_idx,
            mux, muy, i11, i12, i22, col, gx0, gx1, gy0, gy1, out):
    """Accumulate splat contributions per tile into `out` (B, H, W, 3).

    Within a tile every pixel receives its contributions in ascending bin
    order; each splat only touches pixels inside its own cutoff box, which is
    exactly the support the backward pass integrates over.
    """
    for t in prange(tiles.shape[0]):
        x0 = tiles[t, 0]
        y0 = tiles[t, 1]
        x1 = tiles[t, 2]
        y1 = tiles[t, 3]
        b = tile_img[t]
        buf = np.zeros((y1 - y0, x1 - x0, 3))
        for k in range(bin_off[t], bin_off[t + 1]):
            i = bin_idx[k]
            ax0 = max(x0, gx0[i])
            ax1 = min(x1 - 1, gx1[i])
            ay0 = max(y0, gy0[i])
            ay1 = min(y1 - 1, gy1[i])
            c0 = col[i, 0]
            c1 = col[i, 1]
            c2 = col[i, 2]
            for y in range(ay0, ay1 + 1):
                dy = py[y] - muy[i]
                v1 = i12[i] * dy
                v2 = i22[i] * dy
                row = y - y0
                for x in range(ax0, ax1 + 1):
                    dx = px[x] - mux[i]
                    u1 = i11[i] * dx + v1
                    u2 = i12[i] * dx + v2
                    w = math.exp(-0.5 * (dx * u1 + dy * u2))
                    buf[row, x - x0, 0] += c0 * w
                    buf[row, x - x0, 1] += c1 * w
                    buf[row, x - x0, 2] += c2 * w
        out[b, y0:y1, x0:x1, :] = buf


@njit(parallel=True, cache=True)
def backward(px, py, gres, gauss_img, mux, muy, i11, i12, i22, col,
             gx0, gx1, gy0, gy1, a, b_, c, sig11, sig22, alive,
             d_mu, d_chol, d_color):
    """Per-splat gradient accumulation over the same support as `forward`.

    `gres` is (2 / (H*W*3)) * (render - target), so the sums below are the
    exact derivatives of the mean-squared reconstruction error through
    w = exp(-0.5 * d^T Sigma^{-1} d) and Sigma = L L^T. Each splat owns its
    accumulators; pixel order inside the box is row-major and fixed.
    """
    for i in prange(mux.shape[0]):
        if not alive[i] or gx0[i] < 0:
            continue
        b = gauss_img[i]
        sc0 = 0.0
        sc1 = 0.0
        sc2 = 0.0
        m1 = 0.0
        m2 = 0.0
        s11 = 0.0
        s12 = 0.0
        s22 = 0.0
        c0 = col[i, 0]
        c1 = col[i, 1]
        c2 = col[i, 2]
        for y in range(gy0[i], gy1[i] + 1):
            dy = py[y] - muy[i]
            v1 = i12[i] * dy
            v2 = i22[i] * dy
            for x in range(gx0[i], gx1[i] + 1):
                dx = px[x] - mux[i]
                u1 = i11[i] * dx + v1
                u2 = i12[i] * dx + v2
                w = math.exp(-0.5 * (dx * u1 + dy * u2))
                r0 = gres[b, y, x, 0]
                r1 = gres[b, y, x, 1]
                r2 = gres[b, y, x, 2]
                sc0 += w * r0
                sc1 += w * r1
                sc2 += w * r2
                wg = w * (r0 * c0 + r1 * c1 + r2 * c2)
                m1 += wg * u1
                m2 += wg * u2
                s11 += wg * u1 * u1
                s12 += wg * u1 * u2
                s22 += wg * u2 * u2
        d_color[i, 0] = sc0
        d_color[i, 1] = sc1
        d_color[i, 2] = sc2
        d_mu[i, 0] = m1
        d_mu[i, 1] = m2
        # dq/dSigma = -u u^T chained through Sigma(a, b, c); see gradients.py
        d_chol[i, 0] = (a[i] * s11 + b_[i] * s12) * sig11[i]
        d_chol[i, 1] = a[i] * s12 + b_[i] * s22
        d_chol[i, 2] = c[i] * s22 * sig22[i]

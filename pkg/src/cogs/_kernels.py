"""Numba-compiled compositing sweeps.

The rasterizer's per-splat loops are the training hot path; these kernels
mirror the vectorized numpy implementation in raster.py exactly (same
early-stop and clamp semantics) but run as machine code. raster.py falls
back to the numpy sweeps when numba is unavailable or COGS_NO_NUMBA is set.
"""
from __future__ import annotations

import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("COGS_NO_NUMBA"):
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        pass

if HAVE_NUMBA:

    @njit(cache=True)
    def composite_forward(order, x0, x1, y0, y1, mean2d, inv, alphas, colors,
                          image, T, count, contrib, clamp, stop):
        n_splats = order.shape[0]
        n_ch = colors.shape[1]
        for oi in range(n_splats):
            i = order[oi]
            if x0[i] > x1[i] or y0[i] > y1[i]:
                continue
            ia, ib, ic = inv[i, 0], inv[i, 1], inv[i, 2]
            u, v = mean2d[i, 0], mean2d[i, 1]
            for y in range(y0[i], y1[i] + 1):
                dy = y - v
                for x in range(x0[i], x1[i] + 1):
                    t = T[y, x]
                    if t < stop:
                        continue
                    dx = x - u
                    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                    a = alphas[i] * np.exp(-0.5 * q)
                    if a > clamp:
                        a = clamp
                    w = a * t
                    for c in range(n_ch):
                        image[y, x, c] += w * colors[i, c]
                    T[y, x] = t * (1.0 - a)
                    count[y, x] += 1
                    contrib[i] += w

    @njit(cache=True)
    def composite_backward(order, x0, x1, y0, y1, mean2d, inv, alphas, colors,
                           grad_image, bg, clamp, stop, height, width,
                           g_mean2d, g_cov, g_opac, g_colors):
        n_splats = order.shape[0]
        n_ch = colors.shape[1]
        T = np.ones((height, width))
        n_active = np.zeros((height, width), dtype=np.int32)
        coverage = np.zeros((height, width), dtype=np.int32)
        # forward replay: final transmittance, active count, total coverage
        for oi in range(n_splats):
            i = order[oi]
            if x0[i] > x1[i] or y0[i] > y1[i]:
                continue
            ia, ib, ic = inv[i, 0], inv[i, 1], inv[i, 2]
            u, v = mean2d[i, 0], mean2d[i, 1]
            for y in range(y0[i], y1[i] + 1):
                dy = y - v
                for x in range(x0[i], x1[i] + 1):
                    coverage[y, x] += 1
                    t = T[y, x]
                    if t < stop:
                        continue
                    dx = x - u
                    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                    a = alphas[i] * np.exp(-0.5 * q)
                    if a > clamp:
                        a = clamp
                    T[y, x] = t * (1.0 - a)
                    n_active[y, x] += 1
        T_final = T.copy()
        suffix = np.zeros((height, width, n_ch))
        # back-to-front: reconstruct per-splat transmittance by division
        for oi in range(n_splats - 1, -1, -1):
            i = order[oi]
            if x0[i] > x1[i] or y0[i] > y1[i]:
                continue
            ia, ib, ic = inv[i, 0], inv[i, 1], inv[i, 2]
            u, v = mean2d[i, 0], mean2d[i, 1]
            for y in range(y0[i], y1[i] + 1):
                dy = y - v
                for x in range(x0[i], x1[i] + 1):
                    idx = coverage[y, x]
                    coverage[y, x] = idx - 1
                    if idx > n_active[y, x]:
                        continue
                    dx = x - u
                    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                    gauss = np.exp(-0.5 * q)
                    raw = alphas[i] * gauss
                    a = raw if raw < clamp else clamp
                    one_minus = 1.0 - a
                    tb = T[y, x] / one_minus
                    T[y, x] = tb
                    w = a * tb
                    d_alpha = 0.0
                    for c in range(n_ch):
                        gc = grad_image[y, x, c]
                        g_colors[i, c] += gc * w
                        d_alpha += gc * (
                            tb * colors[i, c]
                            - (suffix[y, x, c] + bg[c] * T_final[y, x]) / one_minus
                        )
                        suffix[y, x, c] += w * colors[i, c]
                    if raw < clamp:
                        g_opac[i] += d_alpha * gauss
                        dq = -0.5 * raw * d_alpha
                        g_mean2d[i, 0] += -2.0 * dq * (ia * dx + ib * dy)
                        g_mean2d[i, 1] += -2.0 * dq * (ib * dx + ic * dy)
                        g_cov[i, 0] += dq * dx * dx
                        g_cov[i, 1] += dq * dx * dy
                        g_cov[i, 2] += dq * dy * dy
        return T_final

"""Tiled numba kernels for forward and backward rasterization.

Tiles are 16x16 pixel blocks processed independently (prange); every tile
owns a disjoint slice of the outputs, and gradient accumulation goes into
per-(tile, splat) entry buffers, so results are bit-identical for any
thread count. The backward kernel replays the forward blend per pixel and
then walks the contributions in reverse with suffix accumulators.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .common import (
    ALPHA_MAX,
    ALPHA_MIN,
    NEAR_PLANE,
    PARALLEL_EPS,
    TILE,
    TRANSMITTANCE_MIN,
)


@njit(cache=True)
def bin_tiles(order, bounds, visible, n_tiles_x, n_tiles_y):
    """CSR tile lists (offsets, entries); entries stay in blend order."""
    n_tiles = n_tiles_x * n_tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    n = order.shape[0]
    for oi in range(n):
        k = order[oi]
        if not visible[k]:
            continue
        tx0 = bounds[k, 0] // TILE
        tx1 = bounds[k, 1] // TILE
        ty0 = bounds[k, 2] // TILE
        ty1 = bounds[k, 3] // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * n_tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    entries = np.empty(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for oi in range(n):
        k = order[oi]
        if not visible[k]:
            continue
        tx0 = bounds[k, 0] // TILE
        tx1 = bounds[k, 1] // TILE
        ty0 = bounds[k, 2] // TILE
        ty1 = bounds[k, 3] // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * n_tiles_x + tx
                entries[cursor[t]] = k
                cursor[t] += 1
    return offsets, entries


@njit(cache=True, parallel=True)
def forward_kernel(offsets, entries, center, au, av, an, scale, opac, r2max,
                   rgb, feat, bg, fx, fy, cx, cy, height, width, n_tiles_x,
                   color, feature, depth, normal, weight, trans):
    n_tiles = offsets.shape[0] - 1
    d_f = feat.shape[1]
    for tt in prange(n_tiles):
        ty = tt // n_tiles_x
        tx = tt % n_tiles_x
        y0, y1 = ty * TILE, min(ty * TILE + TILE, height)
        x0, x1 = tx * TILE, min(tx * TILE + TILE, width)
        e0, e1 = offsets[tt], offsets[tt + 1]
        acc_f = np.empty(d_f)
        for i in range(y0, y1):
            dy = (i + 0.5 - cy) / fy
            for j in range(x0, x1):
                dx = (j + 0.5 - cx) / fx
                dnorm = np.sqrt(dx * dx + dy * dy + 1.0)
                t_run = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for q in range(d_f):
                    acc_f[q] = 0.0
                dep = 0.0
                n0 = 0.0
                n1 = 0.0
                n2 = 0.0
                wei = 0.0
                for e in range(e0, e1):
                    k = entries[e]
                    denom = an[k, 0] * dx + an[k, 1] * dy + an[k, 2]
                    if abs(denom) < PARALLEL_EPS * dnorm:
                        continue
                    m = (an[k, 0] * center[k, 0] + an[k, 1] * center[k, 1]
                         + an[k, 2] * center[k, 2])
                    t = m / denom
                    if t <= NEAR_PLANE:
                        continue
                    qx = t * dx - center[k, 0]
                    qy = t * dy - center[k, 1]
                    qz = t - center[k, 2]
                    u = (qx * au[k, 0] + qy * au[k, 1] + qz * au[k, 2]) / scale[k, 0]
                    v = (qx * av[k, 0] + qy * av[k, 1] + qz * av[k, 2]) / scale[k, 1]
                    r2 = u * u + v * v
                    if r2 > r2max[k]:
                        continue
                    alpha = opac[k] * np.exp(-0.5 * r2)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    coef = t_run * alpha
                    c0 += coef * rgb[k, 0]
                    c1 += coef * rgb[k, 1]
                    c2 += coef * rgb[k, 2]
                    for q in range(d_f):
                        acc_f[q] += coef * feat[k, q]
                    dep += coef * t
                    flip = -1.0 if denom > 0.0 else 1.0
                    n0 += coef * flip * an[k, 0]
                    n1 += coef * flip * an[k, 1]
                    n2 += coef * flip * an[k, 2]
                    wei += coef
                    t_run *= 1.0 - alpha
                    if t_run < TRANSMITTANCE_MIN:
                        break
                color[i, j, 0] = c0 + t_run * bg[0]
                color[i, j, 1] = c1 + t_run * bg[1]
                color[i, j, 2] = c2 + t_run * bg[2]
                for q in range(d_f):
                    feature[i, j, q] = acc_f[q]
                depth[i, j] = dep
                normal[i, j, 0] = n0
                normal[i, j, 1] = n1
                normal[i, j, 2] = n2
                weight[i, j] = wei
                trans[i, j] = t_run


@njit(cache=True, parallel=True)
def backward_kernel(offsets, entries, center, au, av, an, scale, opac, r2max,
                    rgb, feat, bg, fx, fy, cx, cy, height, width, n_tiles_x,
                    g_color, g_feature, g_depth, g_normal, g_weight, g_trans,
                    e_center, e_au, e_av, e_an, e_ls, e_opac, e_rgb, e_feat):
    n_tiles = offsets.shape[0] - 1
    d_f = feat.shape[1]
    for tt in prange(n_tiles):
        ty = tt // n_tiles_x
        tx = tt % n_tiles_x
        y0, y1 = ty * TILE, min(ty * TILE + TILE, height)
        x0, x1 = tx * TILE, min(tx * TILE + TILE, width)
        e0, e1 = offsets[tt], offsets[tt + 1]
        cap = e1 - e0
        if cap == 0:
            continue
        s_entry = np.empty(cap, dtype=np.int64)
        s_alpha = np.empty(cap)
        s_gauss = np.empty(cap)
        s_u = np.empty(cap)
        s_v = np.empty(cap)
        s_t = np.empty(cap)
        s_denom = np.empty(cap)
        for i in range(y0, y1):
            dy = (i + 0.5 - cy) / fy
            for j in range(x0, x1):
                dx = (j + 0.5 - cx) / fx
                dnorm = np.sqrt(dx * dx + dy * dy + 1.0)
                # forward replay, recording every blended contribution
                t_run = 1.0
                count = 0
                for e in range(e0, e1):
                    k = entries[e]
                    denom = an[k, 0] * dx + an[k, 1] * dy + an[k, 2]
                    if abs(denom) < PARALLEL_EPS * dnorm:
                        continue
                    m = (an[k, 0] * center[k, 0] + an[k, 1] * center[k, 1]
                         + an[k, 2] * center[k, 2])
                    t = m / denom
                    if t <= NEAR_PLANE:
                        continue
                    qx = t * dx - center[k, 0]
                    qy = t * dy - center[k, 1]
                    qz = t - center[k, 2]
                    u = (qx * au[k, 0] + qy * au[k, 1] + qz * au[k, 2]) / scale[k, 0]
                    v = (qx * av[k, 0] + qy * av[k, 1] + qz * av[k, 2]) / scale[k, 1]
                    r2 = u * u + v * v
                    if r2 > r2max[k]:
                        continue
                    gauss = np.exp(-0.5 * r2)
                    alpha = opac[k] * gauss
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    s_entry[count] = e
                    s_alpha[count] = alpha
                    s_gauss[count] = gauss
                    s_u[count] = u
                    s_v[count] = v
                    s_t[count] = t
                    s_denom[count] = denom
                    count += 1
                    t_run *= 1.0 - alpha
                    if t_run < TRANSMITTANCE_MIN:
                        break
                if count == 0:
                    continue
                gc0 = g_color[i, j, 0]
                gc1 = g_color[i, j, 1]
                gc2 = g_color[i, j, 2]
                gd = g_depth[i, j]
                gn0 = g_normal[i, j, 0]
                gn1 = g_normal[i, j, 1]
                gn2 = g_normal[i, j, 2]
                gw = g_weight[i, j]
                gt = g_trans[i, j]
                # suffix scalar: cotangent-weighted tail of the blend, plus
                # the terms proportional to the final transmittance
                suffix = (gc0 * bg[0] + gc1 * bg[1] + gc2 * bg[2] + gt) * t_run
                t_next = t_run
                for kk in range(count - 1, -1, -1):
                    alpha = s_alpha[kk]
                    t_k = t_next / (1.0 - alpha)
                    e = s_entry[kk]
                    k = entries[e]
                    u = s_u[kk]
                    v = s_v[kk]
                    t = s_t[kk]
                    denom = s_denom[kk]
                    gauss = s_gauss[kk]
                    flip = -1.0 if denom > 0.0 else 1.0
                    dot_v = (gc0 * rgb[k, 0] + gc1 * rgb[k, 1] + gc2 * rgb[k, 2]
                             + gd * t
                             + flip * (gn0 * an[k, 0] + gn1 * an[k, 1] + gn2 * an[k, 2])
                             + gw)
                    for q in range(d_f):
                        dot_v += g_feature[i, j, q] * feat[k, q]
                    coef = t_k * alpha
                    d_alpha = t_k * dot_v - suffix / (1.0 - alpha)
                    # channel-value gradients
                    e_rgb[e, 0] += coef * gc0
                    e_rgb[e, 1] += coef * gc1
                    e_rgb[e, 2] += coef * gc2
                    for q in range(d_f):
                        e_feat[e, q] += coef * g_feature[i, j, q]
                    d_npix0 = coef * gn0
                    d_npix1 = coef * gn1
                    d_npix2 = coef * gn2
                    d_t = coef * gd
                    # alpha chain (dead when the clamp was active)
                    du = 0.0
                    dv = 0.0
                    if alpha < ALPHA_MAX:
                        e_opac[e] += gauss * d_alpha
                        du = -u * alpha * d_alpha
                        dv = -v * alpha * d_alpha
                        e_ls[e, 0] += -u * du
                        e_ls[e, 1] += -v * dv
                    # geometry chain
                    qx = t * dx - center[k, 0]
                    qy = t * dy - center[k, 1]
                    qz = t - center[k, 2]
                    wu = du / scale[k, 0]
                    wv = dv / scale[k, 1]
                    dq0 = wu * au[k, 0] + wv * av[k, 0]
                    dq1 = wu * au[k, 1] + wv * av[k, 1]
                    dq2 = wu * au[k, 2] + wv * av[k, 2]
                    d_t += dq0 * dx + dq1 * dy + dq2
                    w_n = d_t / denom
                    e_center[e, 0] += -dq0 + w_n * an[k, 0]
                    e_center[e, 1] += -dq1 + w_n * an[k, 1]
                    e_center[e, 2] += -dq2 + w_n * an[k, 2]
                    e_an[e, 0] += flip * d_npix0 - w_n * qx
                    e_an[e, 1] += flip * d_npix1 - w_n * qy
                    e_an[e, 2] += flip * d_npix2 - w_n * qz
                    e_au[e, 0] += wu * qx
                    e_au[e, 1] += wu * qy
                    e_au[e, 2] += wu * qz
                    e_av[e, 0] += wv * qx
                    e_av[e, 1] += wv * qy
                    e_av[e, 2] += wv * qz
                    suffix += coef * dot_v
                    t_next = t_k

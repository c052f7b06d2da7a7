"""Naive per-pixel renderer.

Loops over every pixel and tests every primitive (no tiling, no footprint
culling), blending front-to-back in ascending view-space center depth. Slow
but direct; the tiled renderer is required to match it to 1e-6 per channel.
"""

from __future__ import annotations

import numpy as np

from ..geometry import Camera
from ..scene import SceneModel
from .common import (
    ALPHA_MAX,
    ALPHA_MIN,
    NEAR_PLANE,
    PARALLEL_EPS,
    TRANSMITTANCE_MIN,
    RenderOutput,
    splat_view_params,
)


def reference_render(scene: SceneModel, camera: Camera) -> RenderOutput:
    vp = splat_view_params(scene, camera)
    h, w = camera.height, camera.width
    d_f = scene.feature_dim
    order = vp.order
    c = vp.centers[order]
    a_u, a_v, a_n = vp.axis_u[order], vp.axis_v[order], vp.axis_n[order]
    s = vp.scales[order]
    o = vp.opacities[order]
    rgb = vp.colors[order]
    feat = vp.features[order]
    m = a_n[:, None, :] @ c[:, :, None]  # (K,1,1) plane offsets
    m = m[:, 0, 0]

    color = np.zeros((h, w, 3))
    feature = np.zeros((h, w, d_f))
    depth = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    weight = np.zeros((h, w))
    trans = np.ones((h, w))

    for i in range(h):
        for j in range(w):
            d = np.array([(j + 0.5 - camera.cx) / camera.fx,
                          (i + 0.5 - camera.cy) / camera.fy, 1.0])
            dnorm = np.linalg.norm(d)
            denom = a_n @ d
            ok = np.abs(denom) / dnorm >= PARALLEL_EPS
            t = np.zeros_like(m)
            np.divide(m, denom, out=t, where=ok)
            ok &= t > NEAR_PLANE
            q = t[:, None] * d[None, :] - c
            u = np.einsum("kj,kj->k", q, a_u) / s[:, 0]
            v = np.einsum("kj,kj->k", q, a_v) / s[:, 1]
            alpha = np.minimum(o * np.exp(-0.5 * (u * u + v * v)), ALPHA_MAX)
            ok &= alpha >= ALPHA_MIN
            idx = np.nonzero(ok)[0]
            if idx.size == 0:
                color[i, j] = scene.background
                continue
            a = alpha[idx]
            t_run = np.concatenate([[1.0], np.cumprod(1.0 - a)])
            # blending stops after the first update that drops T below cutoff
            below = np.nonzero(t_run[1:] < TRANSMITTANCE_MIN)[0]
            last = below[0] + 1 if below.size else idx.size
            idx, a = idx[:last], a[:last]
            coef = t_run[:last] * a
            flip = -np.sign(denom[idx])
            color[i, j] = coef @ rgb[idx]
            feature[i, j] = coef @ feat[idx]
            depth[i, j] = coef @ t[idx]
            normal[i, j] = coef @ (flip[:, None] * a_n[idx])
            weight[i, j] = coef.sum()
            trans[i, j] = t_run[last]
            color[i, j] += trans[i, j] * scene.background
    return RenderOutput(color, feature, depth, normal, weight, trans)

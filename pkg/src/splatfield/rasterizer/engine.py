"""Production tiled renderer: forward, exact backward, and depth-normals."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..geometry import Camera, rotation_grad_to_quat_grad
from ..scene import SceneModel, splat_colors_backward
from .common import (
    ALPHA_MIN,
    TILE,
    ParamGradients,
    RenderOutput,
    ViewParams,
    splat_pixel_bounds,
    splat_view_params,
)
from .kernels import backward_kernel, bin_tiles, forward_kernel


def _prepare(scene: SceneModel, camera: Camera):
    vp = splat_view_params(scene, camera)
    bounds, visible = splat_pixel_bounds(vp, camera)
    # cull primitives too transparent to ever pass the alpha cutoff
    r2max = np.full(scene.num_primitives, -1.0)
    ok = vp.opacities > ALPHA_MIN
    r2max[ok] = 2.0 * np.log(vp.opacities[ok] / ALPHA_MIN) + 1e-9
    visible = visible & ok
    n_tiles_x = (camera.width + TILE - 1) // TILE
    n_tiles_y = (camera.height + TILE - 1) // TILE
    offsets, entries = bin_tiles(vp.order, bounds, visible, n_tiles_x, n_tiles_y)
    return vp, r2max, offsets, entries, n_tiles_x


def render(scene: SceneModel, camera: Camera) -> RenderOutput:
    """Rasterize all channels; tiled equivalent of the naive blend."""
    vp, r2max, offsets, entries, n_tiles_x = _prepare(scene, camera)
    h, w = camera.height, camera.width
    out = RenderOutput(
        color=np.zeros((h, w, 3)),
        feature=np.zeros((h, w, scene.feature_dim)),
        depth=np.zeros((h, w)),
        normal=np.zeros((h, w, 3)),
        weight=np.zeros((h, w)),
        final_transmittance=np.ones((h, w)),
    )
    forward_kernel(
        offsets, entries, vp.centers, vp.axis_u, vp.axis_v, vp.axis_n,
        vp.scales, vp.opacities, r2max, vp.colors, vp.features,
        scene.background, camera.fx, camera.fy, camera.cx, camera.cy,
        h, w, n_tiles_x,
        out.color, out.feature, out.depth, out.normal, out.weight,
        out.final_transmittance,
    )
    return out


def render_backward(
    scene: SceneModel,
    camera: Camera,
    g_color=None,
    g_feature=None,
    g_depth=None,
    g_normal=None,
    g_weight=None,
    g_transmittance=None,
) -> ParamGradients:
    """Exact adjoint of :func:`render` for any subset of channel cotangents."""
    h, w = camera.height, camera.width
    d_f = scene.feature_dim

    def cot(g, shape, name):
        if g is None:
            return np.zeros(shape)
        g = np.ascontiguousarray(g, dtype=np.float64)
        if g.shape != shape:
            raise DimensionError(f"{name} cotangent must have shape {shape}")
        return g

    g_color = cot(g_color, (h, w, 3), "color")
    g_feature = cot(g_feature, (h, w, d_f), "feature")
    g_depth = cot(g_depth, (h, w), "depth")
    g_normal = cot(g_normal, (h, w, 3), "normal")
    g_weight = cot(g_weight, (h, w), "weight")
    g_transmittance = cot(g_transmittance, (h, w), "final_transmittance")

    vp, r2max, offsets, entries, n_tiles_x = _prepare(scene, camera)
    n_entries = entries.shape[0]
    e_center = np.zeros((n_entries, 3))
    e_au = np.zeros((n_entries, 3))
    e_av = np.zeros((n_entries, 3))
    e_an = np.zeros((n_entries, 3))
    e_ls = np.zeros((n_entries, 2))
    e_opac = np.zeros(n_entries)
    e_rgb = np.zeros((n_entries, 3))
    e_feat = np.zeros((n_entries, d_f))
    backward_kernel(
        offsets, entries, vp.centers, vp.axis_u, vp.axis_v, vp.axis_n,
        vp.scales, vp.opacities, r2max, vp.colors, vp.features,
        scene.background, camera.fx, camera.fy, camera.cx, camera.cy,
        h, w, n_tiles_x,
        g_color, g_feature, g_depth, g_normal, g_weight, g_transmittance,
        e_center, e_au, e_av, e_an, e_ls, e_opac, e_rgb, e_feat,
    )

    n = scene.num_primitives
    d_center_cam = np.zeros((n, 3))
    d_axes_cam = np.zeros((n, 3, 3))
    grads = ParamGradients.zeros(scene)
    d_rgb = np.zeros((n, 3))
    np.add.at(d_center_cam, entries, e_center)
    np.add.at(d_axes_cam[:, :, 0], entries, e_au)
    np.add.at(d_axes_cam[:, :, 1], entries, e_av)
    np.add.at(d_axes_cam[:, :, 2], entries, e_an)
    np.add.at(grads.log_scales, entries, e_ls)
    d_opac = np.zeros(n)
    np.add.at(d_opac, entries, e_opac)
    np.add.at(d_rgb, entries, e_rgb)
    np.add.at(grads.features, entries, e_feat)

    # camera-space -> world-space parameters
    r_wc = camera.rotation_matrix()
    grads.centers += d_center_cam @ r_wc
    d_frames = np.einsum("ij,njk->nik", r_wc.T, d_axes_cam)
    grads.rotations += rotation_grad_to_quat_grad(scene.rotations, d_frames)
    o = vp.opacities
    grads.opacity_logits += d_opac * o * (1.0 - o)
    d_sh, d_centers_color = splat_colors_backward(scene, camera.position(), d_rgb)
    grads.sh += d_sh
    grads.centers += d_centers_color
    grads.assert_finite()
    return grads


def _pixel_dirs(camera: Camera) -> np.ndarray:
    """(H, W, 3) camera-space ray directions through pixel centers, z = 1."""
    xs = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    ys = (np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    dirs = np.empty((camera.height, camera.width, 3))
    dirs[..., 0] = xs[None, :]
    dirs[..., 1] = ys[:, None]
    dirs[..., 2] = 1.0
    return dirs


def _axis_diff(p: np.ndarray, axis: int) -> np.ndarray:
    """Central differences with one-sided borders along a spatial axis."""
    g = np.empty_like(p)
    if axis == 1:  # x: columns
        g[:, 1:-1] = 0.5 * (p[:, 2:] - p[:, :-2])
        g[:, 0] = p[:, 1] - p[:, 0]
        g[:, -1] = p[:, -1] - p[:, -2]
    else:  # y: rows
        g[1:-1] = 0.5 * (p[2:] - p[:-2])
        g[0] = p[1] - p[0]
        g[-1] = p[-1] - p[-2]
    return g


def depth_to_normal(depth: np.ndarray, camera: Camera) -> np.ndarray:
    """Normals from the depth map via the cross product of point gradients.

    Pixels with non-positive depth (empty coverage) return the zero vector;
    normals are oriented toward the camera.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise DimensionError("depth map does not match the camera size")
    if camera.height < 2 or camera.width < 2:
        return np.zeros(depth.shape + (3,))
    dirs = _pixel_dirs(camera)
    pts = depth[..., None] * dirs
    gx = _axis_diff(pts, axis=1)
    gy = _axis_diff(pts, axis=0)
    n = np.cross(gx, gy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    out = np.zeros_like(n)
    np.divide(n, norm, out=out, where=norm > 1e-15)
    # orient toward the camera
    toward = np.sum(out * dirs, axis=-1, keepdims=True)
    out = np.where(toward > 0, -out, out)
    out[depth <= 0] = 0.0
    return out


def depth_to_normal_backward(depth: np.ndarray, camera: Camera,
                             d_normal: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`depth_to_normal` w.r.t. the depth map."""
    depth = np.asarray(depth, dtype=np.float64)
    d_normal = np.asarray(d_normal, dtype=np.float64)
    if camera.height < 2 or camera.width < 2:
        return np.zeros_like(depth)
    dirs = _pixel_dirs(camera)
    pts = depth[..., None] * dirs
    gx = _axis_diff(pts, axis=1)
    gy = _axis_diff(pts, axis=0)
    n = np.cross(gx, gy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    unit = np.zeros_like(n)
    np.divide(n, norm, out=unit, where=norm > 1e-15)
    toward = np.sum(unit * dirs, axis=-1, keepdims=True)
    flip = np.where(toward > 0, -1.0, 1.0)

    g = d_normal.copy()
    g[depth <= 0] = 0.0
    g = g * flip
    # through normalization: (g - unit <g, unit>) / |n|
    d_n = np.zeros_like(g)
    core = g - unit * np.sum(g * unit, axis=-1, keepdims=True)
    np.divide(core, norm, out=d_n, where=norm > 1e-15)
    # through the cross product
    d_gx = np.cross(gy, d_n)
    d_gy = np.cross(d_n, gx)
    # adjoint of the finite-difference stencils
    d_pts = np.zeros_like(pts)
    d_pts[:, 2:] += 0.5 * d_gx[:, 1:-1]
    d_pts[:, :-2] -= 0.5 * d_gx[:, 1:-1]
    d_pts[:, 1] += d_gx[:, 0]
    d_pts[:, 0] -= d_gx[:, 0]
    d_pts[:, -1] += d_gx[:, -1]
    d_pts[:, -2] -= d_gx[:, -1]
    d_pts[2:] += 0.5 * d_gy[1:-1]
    d_pts[:-2] -= 0.5 * d_gy[1:-1]
    d_pts[1] += d_gy[0]
    d_pts[0] -= d_gy[0]
    d_pts[-1] += d_gy[-1]
    d_pts[-2] -= d_gy[-1]
    return np.sum(d_pts * dirs, axis=-1)

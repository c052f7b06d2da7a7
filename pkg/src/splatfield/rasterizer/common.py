"""Shared rasterizer pieces: view-space precompute, footprints, and the
scalar ray-splat primitives that both renderers are built from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from ..geometry import Camera, quat_to_matrix
from ..scene import SceneModel, SplatPrimitive, sigmoid, splat_colors, splat_frame

NEAR_PLANE = 0.01
ALPHA_MAX = 0.999
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
PARALLEL_EPS = 1e-9
# footprint radius in kernel sigmas; alpha >= 1/255 requires
# rho <= sqrt(2 ln 255) ~ 3.33, so 3.4 keeps the bbox conservative
FOOTPRINT_SIGMA = 3.4
TILE = 16


@dataclass
class RenderOutput:
    """All blended channels of one rendered view."""

    color: np.ndarray                # (H, W, 3)
    feature: np.ndarray              # (H, W, D_f)
    depth: np.ndarray                # (H, W)
    normal: np.ndarray               # (H, W, 3)
    weight: np.ndarray               # (H, W)
    final_transmittance: np.ndarray  # (H, W)


@dataclass
class ParamGradients:
    """Gradients for every optimizable primitive field (stored shapes)."""

    centers: np.ndarray         # (N, 3)
    rotations: np.ndarray       # (N, 4) w.r.t. the raw quaternion
    log_scales: np.ndarray      # (N, 2)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray              # (N, n_sh, 3)
    features: np.ndarray        # (N, D_f)

    @staticmethod
    def zeros(scene: SceneModel) -> "ParamGradients":
        return ParamGradients(
            centers=np.zeros_like(scene.centers),
            rotations=np.zeros_like(scene.rotations),
            log_scales=np.zeros_like(scene.log_scales),
            opacity_logits=np.zeros_like(scene.opacity_logits),
            sh=np.zeros_like(scene.sh),
            features=np.zeros_like(scene.features),
        )

    def blocks(self) -> list[np.ndarray]:
        return [self.centers, self.rotations, self.log_scales,
                self.opacity_logits, self.sh, self.features]

    def assert_finite(self) -> None:
        for name, arr in zip(
            ("centers", "rotations", "log_scales", "opacity_logits", "sh", "features"),
            self.blocks(),
        ):
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite gradient in {name}")

    def scaled(self, s: float) -> "ParamGradients":
        return ParamGradients(*[b * s for b in self.blocks()])

    def add_(self, other: "ParamGradients") -> "ParamGradients":
        for mine, theirs in zip(self.blocks(), other.blocks()):
            mine += theirs
        return self


@dataclass
class ViewParams:
    """Per-splat camera-space quantities shared by forward and backward."""

    centers: np.ndarray   # (N, 3) camera-space centers
    axis_u: np.ndarray    # (N, 3)
    axis_v: np.ndarray    # (N, 3)
    axis_n: np.ndarray    # (N, 3)
    scales: np.ndarray    # (N, 2)
    opacities: np.ndarray  # (N,)
    colors: np.ndarray    # (N, 3) view-dependent RGB
    features: np.ndarray  # (N, D_f)
    order: np.ndarray     # (N,) splat ids in ascending depth, ties by id


def splat_view_params(scene: SceneModel, camera: Camera) -> ViewParams:
    r_wc = camera.rotation_matrix()
    t_wc = camera.world_to_camera.translation
    centers_cam = scene.centers @ r_wc.T + t_wc
    frames = quat_to_matrix(scene.rotations)          # (N, 3, 3)
    axes_cam = np.einsum("ij,njk->nik", r_wc, frames)
    z = centers_cam[:, 2]
    order = np.lexsort((np.arange(scene.num_primitives), z))
    return ViewParams(
        centers=np.ascontiguousarray(centers_cam),
        axis_u=np.ascontiguousarray(axes_cam[:, :, 0]),
        axis_v=np.ascontiguousarray(axes_cam[:, :, 1]),
        axis_n=np.ascontiguousarray(axes_cam[:, :, 2]),
        scales=scene.scales(),
        opacities=scene.opacities(),
        colors=splat_colors(scene, camera.position()),
        features=scene.features,
        order=np.ascontiguousarray(order),
    )


def splat_pixel_bounds(vp: ViewParams, camera: Camera):
    """Inclusive pixel-index bounds (x0, x1, y0, y1) of each splat's footprint.

    Returns (bounds (N, 4) int64, visible (N,) bool). A splat whose whole
    footprint parallelogram sits at or behind the near plane is invisible;
    one that straddles it falls back to the full image (the per-pixel depth
    test handles correctness).
    """
    n = vp.centers.shape[0]
    du = (FOOTPRINT_SIGMA * vp.scales[:, 0])[:, None] * vp.axis_u
    dv = (FOOTPRINT_SIGMA * vp.scales[:, 1])[:, None] * vp.axis_v
    corners = np.stack([
        vp.centers + du + dv,
        vp.centers + du - dv,
        vp.centers - du + dv,
        vp.centers - du - dv,
    ], axis=1)                                        # (N, 4, 3)
    z = corners[:, :, 2]
    visible = z.max(axis=1) > NEAR_PLANE
    straddles = visible & (z.min(axis=1) <= NEAR_PLANE)

    bounds = np.zeros((n, 4), dtype=np.int64)
    safe_z = np.maximum(z, NEAR_PLANE)
    px = camera.fx * corners[:, :, 0] / safe_z + camera.cx
    py = camera.fy * corners[:, :, 1] / safe_z + camera.cy
    x0 = np.floor(px.min(axis=1) - 0.5)
    x1 = np.ceil(px.max(axis=1) - 0.5)
    y0 = np.floor(py.min(axis=1) - 0.5)
    y1 = np.ceil(py.max(axis=1) - 0.5)
    x0[straddles], y0[straddles] = 0, 0
    x1[straddles], y1[straddles] = camera.width - 1, camera.height - 1
    bounds[:, 0] = np.clip(x0, 0, camera.width - 1)
    bounds[:, 1] = np.clip(x1, 0, camera.width - 1)
    bounds[:, 2] = np.clip(y0, 0, camera.height - 1)
    bounds[:, 3] = np.clip(y1, 0, camera.height - 1)
    visible &= (x1 >= 0) & (x0 <= camera.width - 1) & (y1 >= 0) & (y0 <= camera.height - 1)
    return bounds, visible


def pixel_ray(camera: Camera, x: float, y: float) -> np.ndarray:
    """Camera-space ray direction through the center of pixel (x, y), z = 1."""
    return np.array([
        (x + 0.5 - camera.cx) / camera.fx,
        (y + 0.5 - camera.cy) / camera.fy,
        1.0,
    ])


def ray_splat_intersect(camera: Camera, pixel, p: SplatPrimitive,
                        near: float = NEAR_PLANE):
    """Disk-local (u, v) and camera depth of a pixel ray's plane hit.

    Pixel coordinates are (x, y) indices; the ray passes through the pixel
    center. Returns None when the ray is parallel to the disk plane or the
    hit is at or in front of the near plane.
    """
    x, y = pixel
    if not (0.0 <= x + 0.5 <= camera.width and 0.0 <= y + 0.5 <= camera.height):
        raise DimensionError(f"pixel {pixel} outside a {camera.width}x{camera.height} image")
    d = pixel_ray(camera, x, y)
    c = camera.to_camera(p.center)
    r_wc = camera.rotation_matrix()
    u_w, v_w, n_w = splat_frame(p)
    a_u, a_v, a_n = r_wc @ u_w, r_wc @ v_w, r_wc @ n_w
    denom = float(a_n @ d)
    if abs(denom) / np.linalg.norm(d) < PARALLEL_EPS:
        return None
    t = float(a_n @ c) / denom
    if t <= near:
        return None
    q = t * d - c
    return float(q @ a_u / p.scale[0]), float(q @ a_v / p.scale[1]), t


def splat_alpha(p: SplatPrimitive, u: float, v: float) -> float:
    """Opacity-scaled Gaussian kernel value, clamped to 0.999."""
    g = np.exp(-0.5 * (u * u + v * v))
    return min(float(sigmoid(p.opacity_logit) * g), ALPHA_MAX)

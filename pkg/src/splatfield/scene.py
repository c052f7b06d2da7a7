"""Splat primitives and the optimizable scene container.

A primitive is an oriented elliptical Gaussian disk in 3D: pose (center +
unit quaternion), a 2-vector of axis scales, an opacity logit, a block of
spherical-harmonic color coefficients, and a compact semantic feature
vector. The scene stores all primitives struct-of-arrays for the
rasterizer, plus the semantic decoder and a background color.

Internal parameterization keeps every constraint unconstrained for the
optimizer: scales are stored as logs, opacity as a logit, quaternions are
renormalized after each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import quat_normalize, quat_to_matrix
from .semantics import SemanticDecoder


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


# Real spherical-harmonic basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
         1.0925484305920792, 0.5462742152960396)
SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
         0.3731763325901154, 0.4570457994644658, 1.445305721320277,
         0.5900435899266435)


def sh_coeff_count(degree: int) -> int:
    if degree < 0 or degree > 3:
        raise ValueError("SH degree must be in [0, 3]")
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis at unit directions; (N, 3) -> (N, n_sh)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    n_sh = sh_coeff_count(degree)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((n, n_sh), dtype=np.float64)
    out[:, 0] = SH_C0
    if degree >= 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[:, 4] = SH_C2[0] * xy
        out[:, 5] = -SH_C2[1] * yz
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = -SH_C2[3] * xz
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 9] = -SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = -SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = -SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = -SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_direction_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d direction, shape (N, n_sh, 3) (before unit-norm chain)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    n_sh = sh_coeff_count(degree)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros(n)
    g = np.zeros((n, n_sh, 3), dtype=np.float64)
    if degree >= 1:
        g[:, 1] = np.stack([zero, np.full(n, -SH_C1), zero], axis=-1)
        g[:, 2] = np.stack([zero, zero, np.full(n, SH_C1)], axis=-1)
        g[:, 3] = np.stack([np.full(n, -SH_C1), zero, zero], axis=-1)
    if degree >= 2:
        g[:, 4] = SH_C2[0] * np.stack([y, x, zero], axis=-1)
        g[:, 5] = -SH_C2[1] * np.stack([zero, z, y], axis=-1)
        g[:, 6] = SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=-1)
        g[:, 7] = -SH_C2[3] * np.stack([z, zero, x], axis=-1)
        g[:, 8] = SH_C2[4] * np.stack([2 * x, -2 * y, zero], axis=-1)
    if degree >= 3:
        g[:, 9] = -SH_C3[0] * np.stack([6 * x * y, 3 * x * x - 3 * y * y, zero], axis=-1)
        g[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=-1)
        g[:, 11] = -SH_C3[2] * np.stack(
            [-2 * x * y, 4 * z * z - x * x - 3 * y * y, 8 * y * z], axis=-1)
        g[:, 12] = SH_C3[3] * np.stack(
            [-6 * x * z, -6 * y * z, 6 * z * z - 3 * x * x - 3 * y * y], axis=-1)
        g[:, 13] = -SH_C3[4] * np.stack(
            [4 * z * z - 3 * x * x - y * y, -2 * x * y, 8 * x * z], axis=-1)
        g[:, 14] = SH_C3[5] * np.stack([2 * x * z, -2 * y * z, x * x - y * y], axis=-1)
        g[:, 15] = -SH_C3[6] * np.stack([3 * x * x - 3 * y * y, -6 * x * y, zero], axis=-1)
    return g


@dataclass(frozen=True)
class SplatPrimitive:
    """One oriented 2D Gaussian disk.

    ``scale`` holds the positive axis lengths (scene units); ``color`` is an
    (n_sh, 3) spherical-harmonic coefficient block; opacity is
    logistic(opacity_logit).
    """

    center: np.ndarray          # (3,)
    rotation: np.ndarray        # (4,) unit quaternion wxyz
    scale: np.ndarray           # (2,) positive
    opacity_logit: float
    color: np.ndarray           # (n_sh, 3)
    feature: np.ndarray         # (D_f,)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, np.float64).reshape(3))
        object.__setattr__(self, "rotation", quat_normalize(np.asarray(self.rotation, np.float64)))
        scale = np.asarray(self.scale, np.float64).reshape(2)
        if np.any(scale <= 0):
            raise ValueError("scale components must be strictly positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "color", np.atleast_2d(np.asarray(self.color, np.float64)))
        object.__setattr__(self, "feature", np.asarray(self.feature, np.float64).ravel())

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def splat_frame(p: SplatPrimitive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal disk frame (tangent_u, tangent_v, normal) of a primitive.

    The columns of the rotation matrix: tangents span the disk plane, the
    normal is the rotated z-axis. The quaternion is renormalized
    defensively.
    """
    r = quat_to_matrix(p.rotation)
    return r[:, 0].copy(), r[:, 1].copy(), r[:, 2].copy()


@dataclass
class SceneModel:
    """All splat parameters (struct-of-arrays) plus the semantic decoder."""

    centers: np.ndarray          # (N, 3)
    rotations: np.ndarray        # (N, 4)
    log_scales: np.ndarray       # (N, 2)
    opacity_logits: np.ndarray   # (N,)
    sh: np.ndarray               # (N, n_sh, 3)
    features: np.ndarray         # (N, D_f)
    decoder: SemanticDecoder
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).ravel()
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        n = self.centers.shape[0]
        if n < 1:
            raise ValueError("scene must contain at least one primitive")
        for name, arr, cols in (
            ("rotations", self.rotations, 4),
            ("log_scales", self.log_scales, 2),
        ):
            if arr.shape != (n, cols):
                raise ValueError(f"{name} must have shape ({n}, {cols})")
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise ValueError("sh must have shape (N, n_sh, 3)")
        sh_coeff_count(self.sh_degree)  # validates degree <= 3
        if self.features.shape[0] != n:
            raise ValueError("features must have N rows")
        if self.decoder.in_dim != self.feature_dim:
            raise ValueError(
                f"decoder input dim {self.decoder.in_dim} != feature dim {self.feature_dim}")

    @property
    def num_primitives(self) -> int:
        return self.centers.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def normalize_rotations(self) -> None:
        self.rotations = quat_normalize(self.rotations)

    def primitive(self, i: int) -> SplatPrimitive:
        return SplatPrimitive(
            center=self.centers[i],
            rotation=self.rotations[i],
            scale=np.exp(self.log_scales[i]),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.sh[i],
            feature=self.features[i],
        )

    def copy(self) -> "SceneModel":
        return SceneModel(
            centers=self.centers.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
            features=self.features.copy(),
            decoder=self.decoder.copy(),
            background=self.background.copy(),
        )

    def subset(self, indices) -> "SceneModel":
        """Scene restricted to the given primitive indices (decoder shared)."""
        idx = np.asarray(indices, dtype=np.int64)
        return SceneModel(
            centers=self.centers[idx],
            rotations=self.rotations[idx],
            log_scales=self.log_scales[idx],
            opacity_logits=self.opacity_logits[idx],
            sh=self.sh[idx],
            features=self.features[idx],
            decoder=self.decoder,
            background=self.background.copy(),
        )

    @staticmethod
    def from_primitives(
        prims: list[SplatPrimitive],
        decoder: SemanticDecoder,
        background=(0.0, 0.0, 0.0),
    ) -> "SceneModel":
        return SceneModel(
            centers=np.stack([p.center for p in prims]),
            rotations=np.stack([p.rotation for p in prims]),
            log_scales=np.log(np.stack([p.scale for p in prims])),
            opacity_logits=np.array([p.opacity_logit for p in prims]),
            sh=np.stack([p.color for p in prims]),
            features=np.stack([p.feature for p in prims]),
            decoder=decoder,
            background=np.asarray(background, dtype=np.float64),
        )


def splat_colors(scene: SceneModel, camera_position: np.ndarray) -> np.ndarray:
    """Per-splat RGB: logistic of the SH expansion along the view direction.

    The direction is taken from the camera center to each splat center, so
    color is constant per splat within a view (3DGS convention).
    """
    delta = scene.centers - np.asarray(camera_position, dtype=np.float64)
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    dirs = delta / np.maximum(norms, 1e-12)
    basis = sh_basis(dirs, scene.sh_degree)           # (N, n_sh)
    raw = np.einsum("nk,nkc->nc", basis, scene.sh)    # (N, 3)
    return sigmoid(raw)


def splat_colors_backward(
    scene: SceneModel, camera_position: np.ndarray, d_colors: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`splat_colors`.

    Returns (d_sh, d_centers): gradients w.r.t. the SH coefficients and the
    splat centers (the view direction depends on the center).
    """
    delta = scene.centers - np.asarray(camera_position, dtype=np.float64)
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    safe = np.maximum(norms, 1e-12)
    dirs = delta / safe
    degree = scene.sh_degree
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", basis, scene.sh)
    s = sigmoid(raw)
    d_raw = d_colors * s * (1.0 - s)                          # (N, 3)
    d_sh = basis[:, :, None] * d_raw[:, None, :]              # (N, n_sh, 3)
    # center gradient through the direction
    d_basis = np.einsum("nc,nkc->nk", d_raw, scene.sh)        # (N, n_sh)
    gb = sh_basis_direction_grad(dirs, degree)                # (N, n_sh, 3)
    d_dir = np.einsum("nk,nkd->nd", d_basis, gb)              # (N, 3)
    # dirs = delta / |delta|: J = (I - dir dir^T) / |delta|
    proj = d_dir - dirs * np.sum(d_dir * dirs, axis=1, keepdims=True)
    d_centers = proj / safe
    return d_sh, d_centers

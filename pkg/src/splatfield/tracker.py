"""Rigid-motion tracking of an extracted object against new observations.

The object's cumulative motion is an SE(3) transform optimized per frame by
plain gradient descent on a masked photometric L1 loss. Updates live in a
6-dim tangent (translation + rotation vector) applied as a left
perturbation, with quaternion renormalization as the retraction. Each frame
starts from the caller's motion prior composed with the current estimate
and runs a fixed small number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateRegionError, DimensionError
from .geometry import Camera, RigidTransform, compose, quat_from_rotvec, quat_multiply
from .query import ObjectExtract
from .rasterizer import render, render_backward
from .scene import SceneModel

TRANSLATION_LR = 1e-2
ROTATION_LR = 5e-2

# Residuals at or below single-precision storage resolution are noise, not
# photometric signal (observations round-trip through f32 buffers). The L1
# subgradient there is taken as zero (the minimum-norm element), otherwise
# sign() turns noise into full-magnitude gradients and an estimate sitting
# at the optimum gets kicked away by rounding in its own retraction or in
# the stored observation.
RESIDUAL_FLOOR = 1e-6


@dataclass
class TrackState:
    object: ObjectExtract
    current_transform: RigidTransform
    steps_per_frame: int = 10
    step_sizes: tuple = (TRANSLATION_LR, ROTATION_LR)

    @property
    def indices(self) -> np.ndarray:
        obj = self.object
        if isinstance(obj, ObjectExtract):
            return obj.primitive_indices
        return np.asarray(obj, dtype=np.int64)

    @staticmethod
    def start(obj) -> "TrackState":
        """Begin tracking an extracted object (or a bare index array)."""
        return TrackState(object=obj, current_transform=RigidTransform.identity())


def apply_motion(scene: SceneModel, object_indices, transform: RigidTransform) -> SceneModel:
    """New scene with member centers transformed and rotations left-composed."""
    idx = np.asarray(object_indices, dtype=np.int64)
    moved = scene.copy()
    moved.centers[idx] = transform.apply(moved.centers[idx])
    moved.rotations[idx] = quat_multiply(transform.rotation, moved.rotations[idx])
    return moved


def _perturb(transform: RigidTransform, delta: np.ndarray) -> RigidTransform:
    """Left-apply the 6-vector (translation, rotation-vector) tangent step."""
    dq = quat_from_rotvec(delta[3:])
    step = RigidTransform(dq, delta[:3])
    return compose(step, transform)


def tracking_loss(scene: SceneModel, object_indices, transform: RigidTransform,
                  observed: np.ndarray, mask: np.ndarray, camera: Camera):
    """Masked mean-L1 photometric loss and its 6-vector motion gradient."""
    mask = np.asarray(mask, dtype=bool)
    observed = np.asarray(observed, dtype=np.float64)
    if mask.shape != (camera.height, camera.width):
        raise DimensionError("mask shape must match the camera size")
    if observed.shape != (camera.height, camera.width, 3):
        raise DimensionError("observation must be HxWx3")
    count = int(mask.sum())
    if count == 0:
        raise DegenerateRegionError("tracking mask selects no pixels")
    idx = np.asarray(object_indices, dtype=np.int64)
    moved = apply_motion(scene, idx, transform)
    out = render(moved, camera)
    diff = out.color - observed
    loss = float(np.abs(diff[mask]).sum() / (count * 3))
    g_color = np.zeros_like(diff)
    masked = diff[mask]
    g_color[mask] = np.where(np.abs(masked) > RESIDUAL_FLOOR,
                             np.sign(masked), 0.0) / (count * 3)
    grads = render_backward(moved, camera, g_color=g_color)

    d_centers = grads.centers[idx]
    moved_centers = moved.centers[idx]
    g_t = d_centers.sum(axis=0)
    g_w = np.cross(moved_centers, d_centers).sum(axis=0)
    # rotation gradient through the member quaternions: q' = exp(dw) * q
    d_rot = grads.rotations[idx]
    q = moved.rotations[idx]
    for b in range(3):
        basis = np.zeros(4)
        basis[1 + b] = 1.0
        dq_db = 0.5 * quat_multiply(basis, q)
        g_w[b] += float(np.sum(d_rot * dq_db))
    return loss, np.concatenate([g_t, g_w])


def track_frame(state: TrackState, scene: SceneModel, observed: np.ndarray,
                mask: np.ndarray, camera: Camera,
                prior: RigidTransform | None = None) -> TrackState:
    """One frame of motion optimization; returns a new state, scene untouched."""
    prior = prior or RigidTransform.identity()
    transform = compose(prior, state.current_transform)
    lr_t, lr_w = state.step_sizes
    idx = state.indices
    for _ in range(state.steps_per_frame):
        _, grad = tracking_loss(scene, idx, transform, observed, mask, camera)
        delta = np.concatenate([-lr_t * grad[:3], -lr_w * grad[3:]])
        transform = _perturb(transform, delta)
    return replace(state, current_transform=transform)


def current_scene(state: TrackState, scene: SceneModel) -> SceneModel:
    """Scene with the tracked object moved to its current estimate."""
    return apply_motion(scene, state.indices, state.current_transform)

"""Quaternion algebra, rigid transforms, and pinhole cameras.

Conventions used across the package:

* quaternions are (w, x, y, z), unit norm, double precision;
* rigid transforms map points as ``R(q) @ x + t``;
* cameras follow the OpenCV pinhole model (x right, y down, z forward),
  pixel (i, j) is sampled at its center (j + 0.5, i + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q / |q|. Works on (..., 4) arrays."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b for (..., 4) arrays in (w, x, y, z) order."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; (..., 4) -> (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    row0 = np.stack([1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)], axis=-1)
    row1 = np.stack([2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)], axis=-1)
    row2 = np.stack([2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's branch selection)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        r = np.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array(
            [0.5 * r, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    return quat_normalize(q)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by quaternion q (..., 4)."""
    m = quat_to_matrix(q)
    return np.einsum("...ij,...j->...i", m, np.asarray(v, dtype=np.float64))


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    """Exponential map: axis-angle vector (3,) -> unit quaternion."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        q = np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
        return quat_normalize(q)
    axis = w / angle
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_matrix_jacobian(q: np.ndarray) -> np.ndarray:
    """d vec(R) / d q for a raw (possibly unnormalized) quaternion.

    Returns (4, 3, 3): component k is dR/dq_k, including the chain through
    the normalization q_hat = q / |q|.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    qh = q / norm
    w, x, y, z = qh

    # dR/dq_hat for each of the four components
    dw = 2.0 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=np.float64)
    dx = 2.0 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]], dtype=np.float64)
    dy = 2.0 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]], dtype=np.float64)
    dz = 2.0 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]], dtype=np.float64)
    d_hat = np.stack([dw, dx, dy, dz])  # (4, 3, 3)

    # chain through normalization: dq_hat/dq = (I - qh qh^T) / |q|
    proj = (np.eye(4) - np.outer(qh, qh)) / norm  # (4, 4): row i = dq_hat_i/dq ... transposed below
    # dR/dq_k = sum_i dR/dqh_i * dqh_i/dq_k
    return np.einsum("ijk,il->ljk", d_hat, proj)


def rotation_grad_to_quat_grad(q: np.ndarray, d_r: np.ndarray) -> np.ndarray:
    """Pull a rotation-matrix cotangent back to raw quaternion space.

    Batched: q is (N, 4) raw quaternions, d_r is (N, 3, 3) with d_r[i] =
    dL/dR(q_i); returns (N, 4) including the normalization chain.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    d_r = np.asarray(d_r, dtype=np.float64).reshape(-1, 3, 3)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qh = q / norm
    w, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dw = mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dx = mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dz = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    d_hat = np.stack([dw, dx, dy, dz], axis=1)  # (N, 4, 3, 3)

    g_hat = np.einsum("nijk,njk->ni", d_hat, d_r)  # dL/dq_hat
    # project through q_hat = q / |q|
    dot = np.sum(g_hat * qh, axis=1, keepdims=True)
    return (g_hat - qh * dot) / norm


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: unit quaternion rotation plus translation (scene units)."""

    rotation: np.ndarray  # (4,) unit quaternion, wxyz
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(np.asarray(self.rotation, np.float64)))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        r = quat_to_matrix(self.rotation)
        return pts @ r.T + self.translation

    def inverse(self) -> "RigidTransform":
        qinv = quat_conjugate(self.rotation)
        return RigidTransform(qinv, -quat_rotate(qinv, self.translation))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a after b: apply(compose(a, b), x) == apply(a, apply(b, x))."""
    return RigidTransform(
        quat_multiply(a.rotation, b.rotation),
        quat_rotate(a.rotation, b.translation) + a.translation,
    )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.world_to_camera.rotation)

    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.world_to_camera.inverse().translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.world_to_camera.apply(points)

    def project(self, points: np.ndarray, near: float = 1e-8) -> np.ndarray:
        """Project world points to pixel coordinates (perspective divide).

        Points with camera-space depth <= near are rejected with NaN pixels
        dropped: raises if any lie at/behind the optical center plane.
        """
        cam = np.atleast_2d(self.to_camera(points))
        z = cam[:, 2]
        if np.any(z <= near):
            raise ValueError("cannot project points at or behind the camera plane")
        u = self.fx * cam[:, 0] / z + self.cx
        v = self.fy * cam[:, 1] / z + self.cy
        out = np.stack([u, v], axis=-1)
        return out[0] if np.asarray(points).ndim == 1 else out


def look_at_camera(
    eye: np.ndarray,
    target: np.ndarray,
    fx: float,
    fy: float,
    width: int,
    height: int,
    up: np.ndarray = (0.0, 0.0, 1.0),
    cx: float | None = None,
    cy: float | None = None,
) -> Camera:
    """Camera at ``eye`` with +z toward ``target`` (OpenCV axes)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # forward parallel to up: pick another up
        upv = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, upv)
        rn = np.linalg.norm(right)
    right /= rn
    down = np.cross(fwd, right)
    r_wc = np.stack([right, down, fwd], axis=0)  # world -> camera rows
    q = matrix_to_quat(r_wc)
    t = -r_wc @ eye
    return Camera(
        fx=fx,
        fy=fy,
        cx=width / 2.0 if cx is None else cx,
        cy=height / 2.0 if cy is None else cy,
        width=width,
        height=height,
        world_to_camera=RigidTransform(q, t),
    )

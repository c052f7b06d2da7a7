"""Deterministic synthetic fixtures.

Everything the CLI's ``gen-fixtures`` subcommand and the test suite need:
a small reconstruction scene with a 40-image capture (39-view orbit plus
one fixed overhead shot), a planted three-object semantic scene whose
decoder maps each object's features exactly onto a known unit embedding,
a hull-completion variant with suppressed interior members, a tracking
sequence with commanded-vs-actual motion, and a large scene for timing.

All generators are pure functions of their seed.
"""

from __future__ import annotations

import numpy as np

from .geometry import Camera, RigidTransform, compose, look_at_camera, quat_from_rotvec
from .rasterizer import render
from .scene import SH_C0, SceneModel, logit, sh_coeff_count
from .semantics import FeatureMaps, SemanticDecoder

FIXTURE_SIZE = 64
FEATURE_DIM = 8
HIGH_DIM = 16

# Mask rule for synthetic captures: a pixel belongs to the group whose
# subset render carries the most weight there, if that weight is substantial.
MASK_WEIGHT_MIN = 0.3


def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _ball_points(rng, center, radius, n):
    """Uniform sample inside a ball."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return np.asarray(center, dtype=np.float64) + d * r[:, None]


def _dc_for_color(rgb):
    """SH DC coefficients that render exactly ``rgb`` under the logistic."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 1e-3, 1 - 1e-3)
    return logit(rgb) / SH_C0


def orbit_cameras(size: int = FIXTURE_SIZE, n_orbit: int = 39,
                  radius: float = 2.0, height: float = 0.9,
                  target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """Capture protocol: ``n_orbit`` views circling the target plus one
    fixed overhead view (40 cameras by default)."""
    target = np.asarray(target, dtype=np.float64)
    fx = 1.2 * size
    cams = []
    for i in range(n_orbit):
        ang = 2.0 * np.pi * i / n_orbit
        eye = target + np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(look_at_camera(eye, target, fx, fx, size, size))
    overhead = target + np.array([0.0, 0.0, radius + height])
    cams.append(look_at_camera(overhead, target, fx, fx, size, size, up=(0.0, 1.0, 0.0)))
    return cams


def _group_masks(scene: SceneModel, camera: Camera, groups) -> np.ndarray:
    """Label map from per-group subset renders: argmax weight, -1 where no
    group reaches MASK_WEIGHT_MIN."""
    weights = np.stack([render(scene.subset(g), camera).weight for g in groups])
    labels = np.argmax(weights, axis=0).astype(np.int32)
    labels[weights.max(axis=0) < MASK_WEIGHT_MIN] = -1
    return labels


def recon_fixture(seed: int = 0, size: int = FIXTURE_SIZE):
    """Known 20-primitive scene plus its 40-image capture.

    Returns (scene, cameras, images, fmaps, groups, seed_points): the
    ground-truth scene, the capture cameras, rendered float images, one
    FeatureMaps per view (three object labels), the per-group primitive
    indices, and jittered center samples for initializing a fit.
    """
    rng = np.random.default_rng(seed)
    group_centers = np.array([[-0.25, -0.15, 0.0], [0.25, -0.1, 0.05], [0.0, 0.28, -0.05]])
    # moderate saturation keeps the SH dc coefficients within the distance a
    # short fit can actually travel from a mid-gray start
    palette = np.array([[0.68, 0.42, 0.38], [0.38, 0.52, 0.68], [0.66, 0.62, 0.40]])
    sizes = (7, 7, 6)
    centers, sh, feats, groups = [], [], [], []
    start = 0
    n_sh = sh_coeff_count(1)
    for g, (c, n) in enumerate(zip(group_centers, sizes)):
        centers.append(c + rng.normal(0.0, 0.07, size=(n, 3)))
        block = np.zeros((n, n_sh, 3))
        block[:, 0, :] = _dc_for_color(palette[g] + rng.normal(0.0, 0.04, size=(n, 3)))
        block[:, 1:, :] = rng.normal(0.0, 0.05, size=(n, n_sh - 1, 3))
        sh.append(block)
        feats.append(rng.normal(0.0, 0.1, size=(n, FEATURE_DIM)))
        groups.append(np.arange(start, start + n))
        start += n
    n_total = start
    scene = SceneModel(
        centers=np.concatenate(centers),
        rotations=_random_quats(rng, n_total),
        log_scales=np.log(rng.uniform(0.08, 0.14, size=(n_total, 2))),
        opacity_logits=logit(rng.uniform(0.55, 0.75, size=n_total)),
        sh=np.concatenate(sh),
        features=np.concatenate(feats),
        decoder=SemanticDecoder.create(FEATURE_DIM, 64, HIGH_DIM, seed=seed),
    )
    cameras = orbit_cameras(size=size)
    # orthonormal per-object target embeddings
    q, _ = np.linalg.qr(rng.normal(size=(HIGH_DIM, len(sizes))))
    object_features = {g: q[:, g] for g in range(len(sizes))}
    images, fmaps = [], []
    for cam in cameras:
        images.append(render(scene, cam).color)
        masks = _group_masks(scene, cam, groups)
        raw = np.zeros(masks.shape + (HIGH_DIM,))
        for g, vec in object_features.items():
            raw[masks == g] = vec
        fmaps.append(FeatureMaps(raw=raw, masks=masks, object_features=object_features))
    seed_points = np.repeat(scene.centers, 10, axis=0) + rng.normal(0.0, 0.01, (n_total * 10, 3))
    return scene, cameras, images, fmaps, groups, seed_points


def _planted_decoder(rng) -> tuple[SemanticDecoder, np.ndarray]:
    """Decoder whose local/global heads send feature a*e_j exactly to the
    j-th column of an orthonormal embedding matrix.

    Hidden layer is the identity, so nonnegative features pass the ReLU
    untouched; both output heads share the same embedding.
    """
    q, _ = np.linalg.qr(rng.normal(size=(HIGH_DIM, FEATURE_DIM)))
    dec = SemanticDecoder(
        w1=np.eye(FEATURE_DIM),
        b1=np.zeros(FEATURE_DIM),
        w2=np.vstack([q, q]),
        b2=np.zeros(2 * HIGH_DIM),
    )
    return dec, q


def _assemble(rng, centers, colors, feats, scale_range=(0.015, 0.03),
              decoder=None) -> SceneModel:
    n = centers.shape[0]
    n_sh = sh_coeff_count(1)
    sh = np.zeros((n, n_sh, 3))
    sh[:, 0, :] = _dc_for_color(colors)
    return SceneModel(
        centers=centers,
        rotations=_random_quats(rng, n),
        log_scales=np.log(rng.uniform(*scale_range, size=(n, 2))),
        opacity_logits=np.full(n, logit(0.9)),
        sh=sh,
        features=feats,
        decoder=decoder if decoder is not None
        else SemanticDecoder.create(FEATURE_DIM, 64, HIGH_DIM, seed=0),
    )


def _scatter_background(rng, n, object_centers, clearance=0.12):
    """Points in the work box kept away from the planted objects."""
    pts = []
    while len(pts) < n:
        p = rng.uniform(-0.5, 0.5, size=3)
        if min(np.linalg.norm(p - c) for c in object_centers) >= clearance:
            pts.append(p)
    return np.array(pts)


OBJECT_BALL_RADIUS = 0.035
OBJECT_MEMBERS = 200
FEATURE_GAIN = 3.0


def semantic_fixture(seed: int = 0, n_objects: int = 3):
    """Planted multi-object scene for end-to-end query checks.

    Each object is a dense ball of primitives whose features are a scaled
    one-hot; the planted decoder maps them exactly onto that object's unit
    embedding, and background features decode to the zero vector (zero
    similarity to everything). Returns (scene, truth) where truth[label]
    has the member indices, exact centroid, and the query embedding.
    """
    rng = np.random.default_rng(seed)
    object_centers = np.array([[-0.3, -0.2, 0.0], [0.3, -0.15, 0.05], [0.0, 0.3, -0.05]])[:n_objects]
    palette = np.array([[0.9, 0.35, 0.3], [0.3, 0.55, 0.9], [0.95, 0.85, 0.35]])[:n_objects]
    dec, emb = _planted_decoder(rng)
    centers, colors, feats = [], [], []
    truth = {}
    start = 0
    for j in range(n_objects):
        pts = _ball_points(rng, object_centers[j], OBJECT_BALL_RADIUS, OBJECT_MEMBERS)
        centers.append(pts)
        colors.append(np.tile(palette[j], (OBJECT_MEMBERS, 1)))
        f = np.zeros((OBJECT_MEMBERS, FEATURE_DIM))
        f[:, j] = FEATURE_GAIN
        feats.append(f)
        truth[j] = {
            "indices": np.arange(start, start + OBJECT_MEMBERS),
            "centroid": pts.mean(axis=0),
            "embedding": emb[:, j],
        }
        start += OBJECT_MEMBERS
    n_bg = 80
    bg = _scatter_background(rng, n_bg, object_centers)
    centers.append(bg)
    colors.append(np.tile([0.5, 0.5, 0.5], (n_bg, 1)))
    feats.append(np.zeros((n_bg, FEATURE_DIM)))
    scene = _assemble(rng, np.concatenate(centers), np.concatenate(colors),
                      np.concatenate(feats), decoder=dec)
    return scene, truth


SUPPRESSED_FRACTION = 0.1


def hull_fixture(seed: int = 0):
    """Single planted object with 10% of its members' features zeroed.

    The suppressed members are the ones nearest the object center, so they
    sit strictly inside the convex hull of the surviving members and a
    hull-completion pass should recover all of them. Returns
    (scene, member_indices, suppressed_indices, query_embedding).
    """
    scene, truth = semantic_fixture(seed=seed, n_objects=1)
    members = truth[0]["indices"]
    d = np.linalg.norm(scene.centers[members] - truth[0]["centroid"], axis=1)
    n_drop = int(round(SUPPRESSED_FRACTION * members.size))
    suppressed = members[np.argsort(d)[:n_drop]]
    scene.features[suppressed] = 0.0
    return scene, members, suppressed, truth[0]["embedding"]


TRACK_FRAMES = 20
TRACK_TRANSLATION = 0.005     # commanded per-frame translation (scene units)
TRACK_ROTATION_DEG = 5.0      # commanded per-frame rotation


def tracking_fixture(seed: int = 0, n_frames: int = TRACK_FRAMES, size: int = FIXTURE_SIZE,
                     slip_t: float = 0.0, slip_r_deg: float = 0.0):
    """Rigid-motion sequence with commanded and actual per-frame deltas.

    A compact object moves 5 mm + 5° per frame. By default the motion
    executes exactly as commanded, so a tracker fed the command as its
    prior starts each frame at the optimum and must only hold it. With
    nonzero ``slip_t``/``slip_r_deg`` the actual motion deviates from the
    command by that much per frame, leaving a residual to recover.
    Returns (scene, object_indices, camera, commanded, actual) where the
    last two are per-frame incremental transforms.
    """
    rng = np.random.default_rng(seed)
    obj_center = np.array([0.0, 0.0, 0.05])
    n_obj, n_bg = 50, 30
    obj_pts = _ball_points(rng, obj_center, 0.06, n_obj)
    ring_ang = rng.uniform(0.0, 2.0 * np.pi, n_bg)
    bg_pts = np.stack([0.4 * np.cos(ring_ang), 0.4 * np.sin(ring_ang),
                       rng.uniform(-0.1, 0.1, n_bg)], axis=1)
    colors = np.vstack([np.tile([0.85, 0.4, 0.3], (n_obj, 1)),
                        np.tile([0.4, 0.45, 0.5], (n_bg, 1))])
    feats = np.zeros((n_obj + n_bg, FEATURE_DIM))
    feats[:n_obj, 0] = FEATURE_GAIN
    scene = _assemble(rng, np.vstack([obj_pts, bg_pts]), colors, feats,
                      scale_range=(0.025, 0.04))
    camera = look_at_camera(np.array([0.7, -0.7, 0.6]), obj_center,
                            1.2 * size, 1.2 * size, size, size)
    axis = np.array([0.2, 0.3, 1.0])
    axis /= np.linalg.norm(axis)
    direction = np.array([1.0, 0.4, 0.2])
    direction /= np.linalg.norm(direction)
    commanded, actual = [], []
    for _ in range(n_frames):
        cmd = RigidTransform(quat_from_rotvec(np.deg2rad(TRACK_ROTATION_DEG) * axis),
                             TRACK_TRANSLATION * direction)
        commanded.append(cmd)
        if slip_t > 0.0 or slip_r_deg > 0.0:
            slip = RigidTransform(
                quat_from_rotvec(rng.normal(0.0, np.deg2rad(slip_r_deg), 3)),
                rng.normal(0.0, slip_t, 3))
            actual.append(compose(slip, cmd))
        else:
            actual.append(cmd)
    return scene, np.arange(n_obj), camera, commanded, actual


def perf_scene(n: int = 10000, seed: int = 0) -> SceneModel:
    """Large random scene for render timing."""
    rng = np.random.default_rng(seed)
    n_sh = sh_coeff_count(1)
    sh = rng.normal(0.0, 0.3, size=(n, n_sh, 3))
    return SceneModel(
        centers=rng.uniform(-0.5, 0.5, size=(n, 3)),
        rotations=_random_quats(rng, n),
        log_scales=np.log(rng.uniform(0.01, 0.04, size=(n, 2))),
        opacity_logits=logit(rng.uniform(0.3, 0.9, size=n)),
        sh=sh,
        features=rng.normal(0.0, 0.2, size=(n, FEATURE_DIM)),
        decoder=SemanticDecoder.create(FEATURE_DIM, 64, HIGH_DIM, seed=seed),
    )

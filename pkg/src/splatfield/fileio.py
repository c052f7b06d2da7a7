"""Deterministic binary and JSON artifact formats.

All binary files are little-endian with a 4-byte ASCII magic:

* ``S2GS`` scene: header (version, primitive count, D_f, SH degree),
  background RGB, flat float32 primitive records in field order (center,
  rotation, scale, opacity_logit, color, feature), then decoder layers.
* ``S2GB`` channel buffer: H, W, C header then float32 data.
* ``S2GF`` feature maps: raw map, label map, object feature table.
* ``S2GQ`` query embedding: a single float32 vector.
* ``S2GD`` policy dataset: (obs, action-sequence) sample records.
* ``S2GP`` policy: network weights, normalization stats, schedule size.

Nothing here embeds timestamps, so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError, FormatError
from .geometry import Camera, RigidTransform
from .scene import SceneModel, sh_coeff_count
from .semantics import FeatureMaps, SemanticDecoder

SCENE_MAGIC = b"S2GS"
BUFFER_MAGIC = b"S2GB"
FEATURES_MAGIC = b"S2GF"
QUERY_MAGIC = b"S2GQ"
DATASET_MAGIC = b"S2GD"
POLICY_MAGIC = b"S2GP"
SCENE_VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _expect_magic(f, magic: bytes, path) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def _write_f32(f, arr) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(f, count: int, what: str) -> np.ndarray:
    return np.frombuffer(_read_exact(f, 4 * count, what), dtype="<f4").astype(np.float64)


# ---------------------------------------------------------------- scene


def save_scene(scene: SceneModel, path) -> None:
    n = scene.num_primitives
    n_sh = scene.sh.shape[1]
    with open(path, "wb") as f:
        f.write(SCENE_MAGIC)
        f.write(struct.pack("<IIII", SCENE_VERSION, n, scene.feature_dim, scene.sh_degree))
        _write_f32(f, scene.background)
        records = np.concatenate(
            [
                scene.centers,
                scene.rotations,
                scene.scales(),
                scene.opacity_logits[:, None],
                scene.sh.reshape(n, n_sh * 3),
                scene.features,
            ],
            axis=1,
        )
        _write_f32(f, records)
        dec = scene.decoder
        f.write(struct.pack("<I", 2))
        for w, b in ((dec.w1, dec.b1), (dec.w2, dec.b2)):
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            _write_f32(f, w)
            _write_f32(f, b)


def load_scene(path) -> SceneModel:
    with open(path, "rb") as f:
        _expect_magic(f, SCENE_MAGIC, path)
        version, n, d_f, degree = struct.unpack("<IIII", _read_exact(f, 16, "scene header"))
        if version != SCENE_VERSION:
            raise FormatError(f"{path}: unsupported scene version {version}")
        if n < 1:
            raise FormatError(f"{path}: empty scene")
        if degree > 3:
            raise FormatError(f"{path}: SH degree {degree} out of range")
        background = _read_f32(f, 3, "background")
        n_sh = sh_coeff_count(degree)
        rec_len = 3 + 4 + 2 + 1 + n_sh * 3 + d_f
        records = _read_f32(f, n * rec_len, "primitive records").reshape(n, rec_len)
        (n_layers,) = struct.unpack("<I", _read_exact(f, 4, "decoder layer count"))
        if n_layers != 2:
            raise FormatError(f"{path}: decoder must have 2 layers, found {n_layers}")
        layers = []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<II", _read_exact(f, 8, "decoder layer shape"))
            w = _read_f32(f, rows * cols, "decoder weights").reshape(rows, cols)
            b = _read_f32(f, rows, "decoder bias")
            layers.append((w, b))
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after scene payload")
    decoder = SemanticDecoder(layers[0][0], layers[0][1], layers[1][0], layers[1][1])
    c0 = 0
    centers = records[:, c0:c0 + 3]; c0 += 3
    rotations = records[:, c0:c0 + 4]; c0 += 4
    scales = records[:, c0:c0 + 2]; c0 += 2
    if np.any(scales <= 0):
        raise FormatError(f"{path}: non-positive scale in record")
    logits = records[:, c0]; c0 += 1
    sh = records[:, c0:c0 + n_sh * 3].reshape(n, n_sh, 3); c0 += n_sh * 3
    features = records[:, c0:c0 + d_f]
    return SceneModel(
        centers=centers,
        rotations=rotations,
        log_scales=np.log(scales),
        opacity_logits=logits,
        sh=sh,
        features=features,
        decoder=decoder,
        background=background,
    )


# ---------------------------------------------------------------- camera


def save_camera(camera: Camera, path) -> None:
    data = {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
        "rotation": list(camera.world_to_camera.rotation),
        "translation": list(camera.world_to_camera.translation),
    }
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_camera(path) -> Camera:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid camera JSON ({e})") from e
    try:
        return Camera(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
            world_to_camera=RigidTransform(
                np.asarray(data["rotation"], dtype=np.float64),
                np.asarray(data["translation"], dtype=np.float64),
            ),
        )
    except KeyError as e:
        raise FormatError(f"{path}: camera JSON missing key {e}") from e


# ---------------------------------------------------------------- channel buffers


def save_buffer(array: np.ndarray, path) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError("channel buffers must be HxW or HxWxC")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(BUFFER_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        _write_f32(f, arr)


def load_buffer(path) -> np.ndarray:
    with open(path, "rb") as f:
        _expect_magic(f, BUFFER_MAGIC, path)
        h, w, c = struct.unpack("<III", _read_exact(f, 12, "buffer header"))
        data = _read_f32(f, h * w * c, "buffer data").reshape(h, w, c)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after buffer payload")
    return data[:, :, 0] if c == 1 else data


def save_png(image: np.ndarray, path) -> None:
    """8-bit PNG export of a [0,1] color or grayscale image."""
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized).save(path)


def load_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return img


# ---------------------------------------------------------------- feature maps


def save_feature_maps(fmaps: FeatureMaps, path) -> None:
    h, w, d = fmaps.raw.shape
    labels = sorted(fmaps.object_features)
    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        f.write(struct.pack("<IIII", h, w, d, len(labels)))
        _write_f32(f, fmaps.raw)
        f.write(np.ascontiguousarray(fmaps.masks, dtype="<i4").tobytes())
        for label in labels:
            f.write(struct.pack("<i", label))
            _write_f32(f, fmaps.object_features[label])


def load_feature_maps(path) -> FeatureMaps:
    with open(path, "rb") as f:
        _expect_magic(f, FEATURES_MAGIC, path)
        h, w, d, n_labels = struct.unpack("<IIII", _read_exact(f, 16, "feature header"))
        raw = _read_f32(f, h * w * d, "raw features").reshape(h, w, d)
        masks = np.frombuffer(
            _read_exact(f, 4 * h * w, "label map"), dtype="<i4"
        ).reshape(h, w).astype(np.int32)
        table = {}
        for _ in range(n_labels):
            (label,) = struct.unpack("<i", _read_exact(f, 4, "label id"))
            table[label] = _read_f32(f, d, "object feature")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after feature payload")
    return FeatureMaps(raw=raw, masks=masks, object_features=table)


# ---------------------------------------------------------------- query embedding


def save_embedding(vector: np.ndarray, path) -> None:
    vec = np.asarray(vector, dtype=np.float64).ravel()
    with open(path, "wb") as f:
        f.write(QUERY_MAGIC)
        f.write(struct.pack("<I", vec.size))
        _write_f32(f, vec)


def load_embedding(path) -> np.ndarray:
    with open(path, "rb") as f:
        _expect_magic(f, QUERY_MAGIC, path)
        (dim,) = struct.unpack("<I", _read_exact(f, 4, "embedding header"))
        vec = _read_f32(f, dim, "embedding")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after embedding")
    return vec


# ---------------------------------------------------------------- policy dataset


def save_dataset(observations: np.ndarray, action_seqs: np.ndarray, path) -> None:
    """Samples are rows: observations (M, obs_dim), action_seqs (M, H, A)."""
    obs = np.asarray(observations, dtype=np.float64)
    acts = np.asarray(action_seqs, dtype=np.float64)
    if obs.ndim != 2 or acts.ndim != 3 or obs.shape[0] != acts.shape[0]:
        raise DimensionError("dataset arrays must be (M, obs_dim) and (M, H, A)")
    m, horizon, action_dim = acts.shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIII", m, horizon, action_dim, obs.shape[1]))
        for i in range(m):
            _write_f32(f, obs[i])
            _write_f32(f, acts[i])


def load_dataset(path):
    with open(path, "rb") as f:
        _expect_magic(f, DATASET_MAGIC, path)
        m, horizon, action_dim, obs_dim = struct.unpack(
            "<IIII", _read_exact(f, 16, "dataset header"))
        obs = np.empty((m, obs_dim))
        acts = np.empty((m, horizon, action_dim))
        for i in range(m):
            obs[i] = _read_f32(f, obs_dim, "observation")
            acts[i] = _read_f32(f, horizon * action_dim, "action sequence").reshape(
                horizon, action_dim)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after dataset payload")
    return obs, acts


# ---------------------------------------------------------------- manifest


def sha256_file(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, inputs: list, config: dict, artifacts: list) -> None:
    import hashlib

    out_dir = Path(out_dir)
    config_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    manifest = {
        "inputs": [
            {"path": str(p), "sha256": sha256_file(p)} for p in inputs
        ],
        "config": config,
        "config_sha256": hashlib.sha256(config_blob).hexdigest(),
        "artifacts": [
            {"path": str(Path(a).relative_to(out_dir)), "sha256": sha256_file(a)}
            for a in artifacts
        ],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

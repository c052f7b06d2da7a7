"""Command-line frontend.

One ``splatfield`` executable with a subcommand per pipeline stage plus
fixture generation. Every subcommand reads an optional UTF-8 ``key=value``
config file, applies ``--set key=value`` overrides, rejects unknown keys,
writes a resolved-config snapshot and a manifest (input hashes, config
hash, artifact hashes) into its output directory, and exits nonzero with
a JSON error object on stderr when something goes wrong.

The worker thread cap (``--threads`` or the SPLATFIELD_THREADS variable)
is deliberately not part of the config snapshot: outputs are bit-identical
for any thread count, so it is a runtime knob, not an experiment input.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import figures, fixtures
from .errors import ConfigError, DomainError, FormatError, SplatfieldError
from .fileio import (load_buffer, load_camera, load_dataset, load_embedding,
                     load_feature_maps, load_png, load_scene, save_buffer,
                     save_camera, save_dataset, save_embedding,
                     save_feature_maps, save_png, save_scene, write_manifest)
from .geometry import RigidTransform, compose
from .metrics import metrics_report
from .policy import (SHIFTED_DOMAIN, TRAIN_DOMAIN, PolicyTrainConfig,
                     evaluate, generate_demos, load_policy, save_policy,
                     squared_cosine_schedule, train_policy)
from .query import QueryConfig, extract_object
from .rasterizer import render
from .tracker import TrackState, apply_motion, current_scene, track_frame
from .trainer import TrainConfig, fit, init_scene


# ------------------------------------------------------------- run config


class _Required:
    """Marker for config keys that have no default."""

    def __init__(self, kind=str):
        self.kind = kind


def _parse_kv_text(text: str, source: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}")


def resolve_config(spec: dict, args) -> dict:
    """Defaults <- config file <- --set overrides <- named flags."""
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw.update(_parse_kv_text(path.read_text(encoding="utf-8"), str(path)))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    for flag in ("out", "seed"):
        val = getattr(args, flag, None)
        if val is not None:
            raw[flag] = str(val)
    for flag, key in getattr(args, "flag_keys", ()):
        val = getattr(args, flag, None)
        if val is not None:
            raw[key] = str(val)

    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {}
    for key, default in spec.items():
        if key in raw:
            kind = default.kind if isinstance(default, _Required) else type(default)
            cfg[key] = _coerce(key, raw[key], kind)
        elif isinstance(default, _Required):
            raise ConfigError(f"missing required config key {key!r}")
        else:
            cfg[key] = default
    return cfg


def _start_run(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    (out / "config.resolved").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def _finish_run(out: Path, inputs: list, cfg: dict, artifacts: list) -> None:
    artifacts = [out / "config.resolved"] + list(artifacts)
    write_manifest(out, inputs, cfg, artifacts)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(path, payload):
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _transform_to_json(t: RigidTransform) -> dict:
    return {"rotation": list(map(float, t.rotation)),
            "translation": list(map(float, t.translation))}


def _transform_from_json(d: dict) -> RigidTransform:
    try:
        return RigidTransform(np.asarray(d["rotation"], dtype=np.float64),
                              np.asarray(d["translation"], dtype=np.float64))
    except KeyError as e:
        raise FormatError(f"transform JSON missing key {e}") from e


def _load_image(path):
    path = Path(path)
    if path.suffix == ".png":
        return load_png(path)
    return load_buffer(path)


def _parse_indices(text: str, n: int, key: str) -> list:
    if text == "all":
        return list(range(n))
    picks = []
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part[1:]:
                lo, _, hi = part.partition("-")
                picks.extend(range(int(lo), int(hi) + 1))
            else:
                picks.append(int(part))
        except ValueError:
            raise ConfigError(f"config key {key!r}: bad index list entry {part!r}")
    for i in picks:
        if not 0 <= i < n:
            raise ConfigError(f"config key {key!r}: index {i} out of range [0, {n})")
    return picks


def _domain(name: str):
    if name == "train":
        return TRAIN_DOMAIN
    if name == "shifted":
        return SHIFTED_DOMAIN
    raise DomainError(f"unknown domain {name!r} (expected 'train' or 'shifted')")


# ---------------------------------------------------------- gen-fixtures

FIXTURE_PARTS = ("recon", "semantic", "hull", "track", "perf", "demos")

SPEC_GEN_FIXTURES = {
    "out": _Required(),
    "seed": 0,
    "size": 64,
    "which": "all",
    "demo_task": "push",
    "demo_source": "state",
    "demo_episodes": 20,
}


def _gen_recon(out: Path, seed: int, size: int) -> list:
    sub = out / "recon"
    for d in ("cameras", "views", "previews", "features"):
        (sub / d).mkdir(parents=True, exist_ok=True)
    scene, cameras, images, fmaps, groups, seed_pts = fixtures.recon_fixture(seed, size)
    arts = []
    save_scene(scene, sub / "scene.s2gs")
    arts.append(sub / "scene.s2gs")
    for i, (cam, img, fm) in enumerate(zip(cameras, images, fmaps)):
        paths = [sub / "cameras" / f"cam_{i:02d}.json",
                 sub / "views" / f"view_{i:02d}.s2gb",
                 sub / "previews" / f"view_{i:02d}.png",
                 sub / "features" / f"features_{i:02d}.s2gf"]
        save_camera(cam, paths[0])
        save_buffer(img, paths[1])
        save_png(img, paths[2])
        save_feature_maps(fm, paths[3])
        arts.extend(paths)
    save_buffer(seed_pts[:, :, None], sub / "seed_points.s2gb")
    arts.append(sub / "seed_points.s2gb")
    arts.append(_write_json(sub / "groups.json",
                            {str(g): idx.tolist() for g, idx in enumerate(groups)}))
    return arts


def _gen_semantic(out: Path, seed: int) -> list:
    sub = out / "semantic"
    (sub / "queries").mkdir(parents=True, exist_ok=True)
    scene, truth = fixtures.semantic_fixture(seed)
    arts = []
    save_scene(scene, sub / "scene.s2gs")
    arts.append(sub / "scene.s2gs")
    payload = {}
    for label, info in truth.items():
        qpath = sub / "queries" / f"query_{label}.s2gq"
        save_embedding(info["embedding"], qpath)
        arts.append(qpath)
        payload[str(label)] = {
            "indices": info["indices"].tolist(),
            "centroid": info["centroid"].tolist(),
        }
    arts.append(_write_json(sub / "truth.json", payload))
    return arts


def _gen_hull(out: Path, seed: int) -> list:
    sub = out / "hull"
    sub.mkdir(parents=True, exist_ok=True)
    scene, members, suppressed, embedding = fixtures.hull_fixture(seed)
    save_scene(scene, sub / "scene.s2gs")
    save_embedding(embedding, sub / "query.s2gq")
    meta = _write_json(sub / "members.json", {
        "members": members.tolist(), "suppressed": suppressed.tolist()})
    return [sub / "scene.s2gs", sub / "query.s2gq", meta]


def _gen_track(out: Path, seed: int, size: int) -> list:
    sub = out / "track"
    for d in ("frames", "masks"):
        (sub / d).mkdir(parents=True, exist_ok=True)
    scene, idx, camera, commanded, actual = fixtures.tracking_fixture(seed, size=size)
    arts = []
    save_scene(scene, sub / "scene.s2gs")
    # render observations from the reloaded scene so the sequence is exactly
    # consistent with the artifact a tracking run will load (file storage
    # quantizes to f32)
    scene = load_scene(sub / "scene.s2gs")
    save_camera(camera, sub / "camera.json")
    arts += [sub / "scene.s2gs", sub / "camera.json"]
    arts.append(_write_json(sub / "object.json", {"indices": idx.tolist()}))
    cum = RigidTransform.identity()
    truth = []
    for k, (cmd, act) in enumerate(zip(commanded, actual)):
        cum = compose(act, cum)
        moved = apply_motion(scene, idx, cum)
        fpath = sub / "frames" / f"frame_{k:02d}.s2gb"
        mpath = sub / "masks" / f"mask_{k:02d}.s2gb"
        save_buffer(render(moved, camera).color, fpath)
        mask = render(moved.subset(idx), camera).weight > 0.3
        save_buffer(mask.astype(np.float64), mpath)
        arts += [fpath, mpath]
        truth.append(_transform_to_json(act))
    arts.append(_write_json(sub / "priors.json",
                            [_transform_to_json(c) for c in commanded]))
    arts.append(_write_json(sub / "truth.json", truth))
    return arts


def _gen_demos(out: Path, seed: int, task: str, source: str, episodes: int) -> list:
    sub = out / "demos"
    sub.mkdir(parents=True, exist_ok=True)
    obs, chunks = generate_demos(task, source, n_episodes=episodes, seed=seed)
    path = sub / f"{task}_{source}.s2gd"
    save_dataset(obs, chunks, path)
    return [path]


def cmd_gen_fixtures(args) -> int:
    cfg = resolve_config(SPEC_GEN_FIXTURES, args)
    parts = FIXTURE_PARTS if cfg["which"] == "all" else tuple(
        p.strip() for p in cfg["which"].split(","))
    for p in parts:
        if p not in FIXTURE_PARTS:
            raise ConfigError(
                f"config key 'which': unknown fixture {p!r} "
                f"(choose from {', '.join(FIXTURE_PARTS)})")
    out = _start_run(cfg)
    arts = []
    if "recon" in parts:
        arts += _gen_recon(out, cfg["seed"], cfg["size"])
    if "semantic" in parts:
        arts += _gen_semantic(out, cfg["seed"])
    if "hull" in parts:
        arts += _gen_hull(out, cfg["seed"])
    if "track" in parts:
        arts += _gen_track(out, cfg["seed"], cfg["size"])
    if "perf" in parts:
        (out / "perf").mkdir(exist_ok=True)
        save_scene(fixtures.perf_scene(seed=cfg["seed"]), out / "perf" / "scene.s2gs")
        arts.append(out / "perf" / "scene.s2gs")
    if "demos" in parts:
        arts += _gen_demos(out, cfg["seed"], cfg["demo_task"],
                           cfg["demo_source"], cfg["demo_episodes"])
    _finish_run(out, [], cfg, arts)
    print(f"generated {len(arts)} fixture artifacts under {out}")
    return 0


# ------------------------------------------------------------------- fit

SPEC_FIT = {
    "capture": _Required(),
    "out": _Required(),
    "seed": 0,
    "steps": 2000,
    "n_primitives": 50,
    "views": "all",
    "lambda_dssim": TrainConfig.lambda_dssim,
    "lambda_local": TrainConfig.lambda_local,
    "lambda_feature": TrainConfig.lambda_feature,
    "lambda_normal": TrainConfig.lambda_normal,
    "lr_centers": TrainConfig.lr_centers,
    "lr_centers_final_scale": TrainConfig.lr_centers_final_scale,
    "lr_rotations": TrainConfig.lr_rotations,
    "lr_scales": TrainConfig.lr_scales,
    "lr_opacity": TrainConfig.lr_opacity,
    "lr_color": TrainConfig.lr_color,
    "lr_features": TrainConfig.lr_features,
    "lr_decoder": TrainConfig.lr_decoder,
}


def _load_capture(capture: Path):
    views_dir = capture / "views"
    if not views_dir.is_dir():
        raise FormatError(f"{capture}: not a capture directory (no views/)")
    view_files = sorted(views_dir.glob("view_*.s2gb"))
    if not view_files:
        raise FormatError(f"{capture}: capture contains no views")
    entries, paths = [], []
    for vf in view_files:
        stem = vf.stem.split("_")[1]
        cam_path = capture / "cameras" / f"cam_{stem}.json"
        feat_path = capture / "features" / f"features_{stem}.s2gf"
        for p in (cam_path, feat_path):
            if not p.exists():
                raise FormatError(f"{capture}: missing {p.name} for view {stem}")
        entries.append((load_camera(cam_path), load_buffer(vf),
                        load_feature_maps(feat_path)))
        paths += [cam_path, vf, feat_path]
    return entries, paths


def cmd_fit(args) -> int:
    cfg = resolve_config(SPEC_FIT, args)
    out = _start_run(cfg)
    capture = Path(cfg["capture"])
    entries, input_paths = _load_capture(capture)
    picks = _parse_indices(cfg["views"], len(entries), "views")
    views = [entries[i] for i in picks]
    seed_path = capture / "seed_points.s2gb"
    seed_points = None
    if seed_path.exists():
        seed_points = load_buffer(seed_path).reshape(-1, 3)
        input_paths.append(seed_path)
    train_cfg = TrainConfig(
        steps=cfg["steps"], seed=cfg["seed"],
        **{k: cfg[k] for k in SPEC_FIT
           if k.startswith(("lambda_", "lr_"))})
    init = init_scene(cfg["n_primitives"], seed_points=seed_points,
                      bounds=((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)),
                      d_f=fixtures.FEATURE_DIM, seed=cfg["seed"])
    fitted = fit(views, train_cfg, init)
    save_scene(fitted, out / "scene.s2gs")
    history = fitted.loss_history
    arts = [out / "scene.s2gs",
            _write_csv(out / "loss.csv", ["step", "loss"], list(enumerate(history))),
            figures.loss_curve(history, out / "loss_curve.png")]
    _finish_run(out, input_paths, cfg, arts)
    print(f"fit {cfg['n_primitives']} primitives on {len(views)} views; "
          f"final loss {history[-1]:.5f}" if history else "fit: zero steps")
    return 0


# ---------------------------------------------------------------- render

SPEC_RENDER = {
    "scene": _Required(),
    "camera": _Required(),
    "out": _Required(),
    "seed": 0,
}


def cmd_render(args) -> int:
    cfg = resolve_config(SPEC_RENDER, args)
    out = _start_run(cfg)
    scene = load_scene(cfg["scene"])
    camera = load_camera(cfg["camera"])
    result = render(scene, camera)
    channels = {
        "color": result.color,
        "feature": result.feature,
        "depth": result.depth,
        "normal": result.normal,
        "weight": result.weight,
        "transmittance": result.final_transmittance,
    }
    arts = []
    for name, data in channels.items():
        path = out / f"{name}.s2gb"
        save_buffer(data, path)
        arts.append(path)
    save_png(result.color, out / "color.png")
    arts.append(out / "color.png")
    _finish_run(out, [Path(cfg["scene"]), Path(cfg["camera"])], cfg, arts)
    print(f"rendered {scene.num_primitives} primitives at "
          f"{camera.width}x{camera.height} -> {out}")
    return 0


# ----------------------------------------------------------------- query

SPEC_QUERY = {
    "scene": _Required(),
    "embedding": _Required(),
    "out": _Required(),
    "seed": 0,
    "similarity_threshold": QueryConfig.similarity_threshold,
    "dbscan_eps": QueryConfig.dbscan_eps,
    "dbscan_min_samples": QueryConfig.dbscan_min_samples,
    "hull_tolerance": QueryConfig.hull_tolerance,
}


def cmd_query(args) -> int:
    cfg = resolve_config(SPEC_QUERY, args)
    out = _start_run(cfg)
    scene = load_scene(cfg["scene"])
    vec = load_embedding(cfg["embedding"])
    qcfg = QueryConfig(
        similarity_threshold=cfg["similarity_threshold"],
        dbscan_eps=cfg["dbscan_eps"],
        dbscan_min_samples=cfg["dbscan_min_samples"],
        hull_tolerance=cfg["hull_tolerance"],
    )
    obj = extract_object(scene, vec, qcfg)
    report = {
        "primitive_indices": obj.primitive_indices.tolist(),
        "centroid": obj.centroid.tolist(),
        "extent": obj.extent.tolist(),
        "hull_degenerate": bool(obj.hull_degenerate),
        "cluster_sizes": [int(c) for c in obj.cluster_sizes],
        "noise_count": int(obj.noise_count),
    }
    arts = [
        _write_json(out / "extract.json", report),
        _write_csv(out / "members.csv", ["index", "x", "y", "z"],
                   [[int(i)] + scene.centers[i].tolist()
                    for i in obj.primitive_indices]),
        figures.extract_scatter(scene.centers, obj.primitive_indices,
                                obj.centroid, out / "extract.png"),
    ]
    _finish_run(out, [Path(cfg["scene"]), Path(cfg["embedding"])], cfg, arts)
    print(f"extracted {obj.primitive_indices.size} primitives; "
          f"centroid {np.round(obj.centroid, 4).tolist()}")
    return 0


# ----------------------------------------------------------------- track

SPEC_TRACK = {
    "scene": _Required(),
    "object": _Required(),
    "camera": _Required(),
    "frames": _Required(),
    "masks": "",
    "priors": "",
    "out": _Required(),
    "seed": 0,
    "steps_per_frame": 10,
    "step_translation": 1e-2,
    "step_rotation": 5e-2,
}


def _object_indices(path: Path) -> np.ndarray:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid object JSON ({e})") from e
    for key in ("indices", "primitive_indices"):
        if key in data:
            return np.asarray(data[key], dtype=np.int64)
    raise FormatError(f"{path}: object JSON needs 'indices' or 'primitive_indices'")


def cmd_track(args) -> int:
    cfg = resolve_config(SPEC_TRACK, args)
    out = _start_run(cfg)
    scene = load_scene(cfg["scene"])
    camera = load_camera(cfg["camera"])
    indices = _object_indices(Path(cfg["object"]))
    frames_dir = Path(cfg["frames"])
    frame_files = sorted(frames_dir.glob("frame_*.s2gb"))
    if not frame_files:
        raise FormatError(f"{frames_dir}: no frame_*.s2gb files")
    masks_dir = Path(cfg["masks"]) if cfg["masks"] else frames_dir.parent / "masks"
    priors = None
    inputs = [Path(cfg["scene"]), Path(cfg["object"]), Path(cfg["camera"])]
    if cfg["priors"]:
        priors_path = Path(cfg["priors"])
        priors = [_transform_from_json(d) for d in json.loads(
            priors_path.read_text(encoding="utf-8"))]
        if len(priors) < len(frame_files):
            raise FormatError(
                f"{priors_path}: {len(priors)} priors for {len(frame_files)} frames")
        inputs.append(priors_path)

    state = TrackState(object=indices, current_transform=RigidTransform.identity(),
                       steps_per_frame=cfg["steps_per_frame"],
                       step_sizes=(cfg["step_translation"], cfg["step_rotation"]))
    rows = []
    for k, fpath in enumerate(frame_files):
        mpath = masks_dir / f"mask_{fpath.stem.split('_')[1]}.s2gb"
        if not mpath.exists():
            raise FormatError(f"missing mask for frame {fpath.name}: {mpath}")
        observed = load_buffer(fpath)
        mask = load_buffer(mpath) > 0.5
        prior = priors[k] if priors else None
        state = track_frame(state, scene, observed, mask, camera, prior=prior)
        t = state.current_transform
        rows.append([k] + t.translation.tolist() + t.rotation.tolist())
        inputs += [fpath, mpath]
    save_scene(current_scene(state, scene), out / "final_scene.s2gs")
    header = ["frame", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
    series = {axis: [r[1 + j] for r in rows] for j, axis in enumerate("xyz")}
    arts = [
        out / "final_scene.s2gs",
        _write_csv(out / "tracks.csv", header, rows),
        _write_json(out / "tracks.json",
                    [dict(zip(header, row)) for row in rows]),
        figures.series_plot(series, out / "tracking.png", ylabel="translation",
                            title="cumulative object translation"),
    ]
    _finish_run(out, inputs, cfg, arts)
    final = state.current_transform
    print(f"tracked {len(rows)} frames; final translation "
          f"{np.round(final.translation, 4).tolist()}")
    return 0


# ---------------------------------------------------------- train-policy

SPEC_TRAIN_POLICY = {
    "dataset": _Required(),
    "out": _Required(),
    "seed": 0,
    "steps": PolicyTrainConfig.steps,
    "batch_size": PolicyTrainConfig.batch_size,
    "lr": PolicyTrainConfig.lr,
    "lr_floor_ratio": PolicyTrainConfig.lr_floor_ratio,
    "ema_decay": PolicyTrainConfig.ema_decay,
    "hidden": "256,256",
}


def cmd_train_policy(args) -> int:
    cfg = resolve_config(SPEC_TRAIN_POLICY, args)
    out = _start_run(cfg)
    obs, acts = load_dataset(cfg["dataset"])
    try:
        hidden = tuple(int(h) for h in cfg["hidden"].split(","))
    except ValueError:
        raise ConfigError(f"config key 'hidden': bad layer list {cfg['hidden']!r}")
    tcfg = PolicyTrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"],
                             lr=cfg["lr"], hidden=hidden, seed=cfg["seed"],
                             lr_floor_ratio=cfg["lr_floor_ratio"],
                             ema_decay=cfg["ema_decay"])
    net = train_policy(obs, acts, squared_cosine_schedule(), tcfg)
    save_policy(net, out / "policy.s2gp")
    history = net.loss_history
    arts = [out / "policy.s2gp",
            _write_csv(out / "loss.csv", ["step", "loss"], list(enumerate(history))),
            figures.loss_curve(history, out / "loss_curve.png",
                               title="noise-prediction loss")]
    _finish_run(out, [Path(cfg["dataset"])], cfg, arts)
    print(f"trained policy on {obs.shape[0]} samples for {cfg['steps']} steps"
          + (f"; final loss {history[-1]:.4f}" if history else ""))
    return 0


# ----------------------------------------------------------- eval-policy

SPEC_EVAL_POLICY = {
    "policy": _Required(),
    "out": _Required(),
    "seed": 0,
    "task": "push",
    "obs_source": "state",
    "episodes": 50,
    "domain": "train",
}


def cmd_eval_policy(args) -> int:
    cfg = resolve_config(SPEC_EVAL_POLICY, args)
    out = _start_run(cfg)
    net = load_policy(cfg["policy"])
    report = evaluate(net, squared_cosine_schedule(), cfg["task"],
                      cfg["obs_source"], n_episodes=cfg["episodes"],
                      seed=cfg["seed"], domain=_domain(cfg["domain"]))
    arts = [
        _write_json(out / "report.json", report),
        _write_csv(out / "episodes.csv", ["episode", "success", "steps"],
                   [[o["episode"], int(o["success"]), o["steps"]]
                    for o in report["outcomes"]]),
        figures.success_bars(
            {f"{cfg['task']}/{cfg['domain']}": report["success_rate"]},
            out / "success.png",
            title=f"{cfg['obs_source']} policy"),
    ]
    _finish_run(out, [Path(cfg["policy"])], cfg, arts)
    print(f"success_rate {report['success_rate']:.3f} over "
          f"{cfg['episodes']} episodes ({cfg['task']}, {cfg['domain']} domain)")
    return 0


# --------------------------------------------------------------- metrics

SPEC_METRICS = {
    "image": _Required(),
    "reference": _Required(),
    "out": _Required(),
    "seed": 0,
}


def cmd_metrics(args) -> int:
    cfg = resolve_config(SPEC_METRICS, args)
    out = _start_run(cfg)
    img = _load_image(cfg["image"])
    ref = _load_image(cfg["reference"])
    report = metrics_report(img, ref)
    payload = report.to_dict()
    rows = [["psnr", payload["psnr"]], ["ssim", payload["ssim"]]]
    rows += [[f"psnr_ch{c}", v] for c, v in enumerate(payload["psnr_channels"])]
    rows += [[f"ssim_ch{c}", v] for c, v in enumerate(payload["ssim_channels"])]

    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
    for ax, (data, name) in zip(axes, [(img, "image"), (ref, "reference")]):
        ax.imshow(np.clip(data, 0, 1))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    diff = np.abs(np.asarray(img, float) - ref)
    if diff.ndim == 3:
        diff = diff.mean(axis=-1)
    im = axes[2].imshow(diff, cmap="magma")
    axes[2].set_title("|difference|", fontsize=9)
    axes[2].axis("off")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    fig.suptitle(f"PSNR {payload['psnr']:.2f} dB   SSIM {payload['ssim']:.4f}")
    fig.tight_layout()
    fig.savefig(out / "metrics.png", dpi=120)
    plt.close(fig)

    arts = [_write_json(out / "metrics.json", payload),
            _write_csv(out / "metrics.csv", ["metric", "value"], rows),
            out / "metrics.png"]
    _finish_run(out, [Path(cfg["image"]), Path(cfg["reference"])], cfg, arts)
    print(f"psnr {payload['psnr']:.3f} dB, ssim {payload['ssim']:.4f}")
    return 0


# ------------------------------------------------------------ entrypoint


def _add_common(sp, spec, extra_flags=()):
    sp.add_argument("--config", help="key=value config file (UTF-8)")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key; repeatable")
    sp.add_argument("--out", help="output directory (config key 'out')")
    sp.add_argument("--seed", type=int, help="global seed (config key 'seed')")
    sp.add_argument("--threads", type=int, dest="threads_sub",
                    help="cap worker threads; outputs are identical for any value")
    flag_keys = []
    for flag, key, kwargs in extra_flags:
        sp.add_argument(f"--{flag}", **kwargs)
        flag_keys.append((flag.replace("-", "_"), key))
    sp.set_defaults(spec=spec, flag_keys=tuple(flag_keys))
    keys = ", ".join(f"{k}={v if not isinstance(v, _Required) else '<required>'}"
                     for k, v in spec.items())
    sp.description = (sp.description or "") + f"\nConfig keys: {keys}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="splatfield",
        description="Semantic Gaussian-splat scenes: fitting, rendering, "
                    "open-vocabulary extraction, tracking, and diffusion policies.")
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads (default: $SPLATFIELD_THREADS or all "
                        "cores); outputs are identical for any value")
    sub = p.add_subparsers(dest="command", required=True)

    table = [
        ("fit", cmd_fit, SPEC_FIT, "fit a scene to a capture directory", ()),
        ("render", cmd_render, SPEC_RENDER, "render all channels of a scene", ()),
        ("query", cmd_query, SPEC_QUERY,
         "extract the object matching a query embedding", ()),
        ("track", cmd_track, SPEC_TRACK,
         "track rigid object motion through a frame sequence", ()),
        ("train-policy", cmd_train_policy, SPEC_TRAIN_POLICY,
         "train the diffusion action policy on a demo dataset", ()),
        ("eval-policy", cmd_eval_policy, SPEC_EVAL_POLICY,
         "run seeded evaluation episodes for a trained policy",
         (("policy", "policy", {"help": "policy file (.s2gp)"}),
          ("task", "task", {"help": "push | pick | stack"}),
          ("obs", "obs_source", {"help": "state | s2gs | pixels"}),
          ("episodes", "episodes", {"type": int, "help": "episode count"}),
          ("domain", "domain", {"help": "train | shifted"}))),
        ("metrics", cmd_metrics, SPEC_METRICS,
         "PSNR/SSIM between an image and a reference", ()),
        ("gen-fixtures", cmd_gen_fixtures, SPEC_GEN_FIXTURES,
         "write deterministic synthetic fixtures", ()),
    ]
    for name, func, spec, help_text, extra in table:
        sp = sub.add_parser(name, help=help_text, description=help_text,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(sp, spec, extra)
        sp.set_defaults(func=func)
    return p


def _apply_threads(value: int | None) -> None:
    if value is None:
        env = os.environ.get("SPLATFIELD_THREADS")
        value = int(env) if env else None
    if value is not None:
        if value < 1:
            raise ConfigError("thread count must be >= 1")
        import numba

        numba.set_num_threads(value)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads_sub if args.threads_sub is not None else args.threads
        _apply_threads(threads)
        return args.func(args)
    except SplatfieldError as e:
        payload = {"error": type(e).__name__, "message": str(e),
                   "exit_code": e.exit_code}
        print(json.dumps(payload), file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as e:
        payload = {"error": "MissingInput", "message": str(e), "exit_code": 1}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

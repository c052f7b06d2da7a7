"""Scene fitting: appearance/normal/semantic losses and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError
from .geometry import Camera
from .metrics import ssim_with_grad
from .rasterizer import (
    ParamGradients,
    RenderOutput,
    depth_to_normal,
    depth_to_normal_backward,
    render,
    render_backward,
)
from .scene import SceneModel, logit
from .semantics import FeatureMaps, SemanticDecoder, semantic_loss_with_grad
from .optim import Adam

WEIGHT_CUTOFF = 1e-3


@dataclass
class TrainConfig:
    lambda_dssim: float = 0.2
    lambda_local: float = 0.5
    lambda_feature: float = 0.1
    lambda_normal: float = 0.05
    steps: int = 7000
    lr_centers: float = 1.6e-4
    lr_centers_final_scale: float = 0.01
    lr_rotations: float = 1e-3
    lr_scales: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_features: float = 2.5e-3
    lr_decoder: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_dssim", "lambda_local", "lambda_feature", "lambda_normal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


def appearance_loss(rendered: np.ndarray, target: np.ndarray,
                    lambda_dssim: float = 0.2) -> float:
    return appearance_loss_with_grad(rendered, target, lambda_dssim)[0]


def appearance_loss_with_grad(rendered: np.ndarray, target: np.ndarray,
                              lambda_dssim: float = 0.2):
    """(1-λ)·L1 + λ·(1-SSIM)/2 and its gradient w.r.t. the rendered image."""
    r = np.asarray(rendered, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise DimensionError(f"image shapes differ: {r.shape} vs {t.shape}")
    diff = r - t
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_dssim) * l1
    if lambda_dssim > 0.0:
        s, d_s = ssim_with_grad(r, t)
        loss += lambda_dssim * 0.5 * (1.0 - s)
        grad -= lambda_dssim * 0.5 * d_s
    return loss, grad


def normal_loss(out: RenderOutput, camera: Camera) -> float:
    return normal_loss_with_grad(out, camera)[0]


def normal_loss_with_grad(out: RenderOutput, camera: Camera):
    """Weighted misalignment of blended normals vs depth normals.

    Sum over pixels with weight >= 1e-3 of w·(1 − N̂·N_d), normalized by the
    summed weight. Returns (loss, d_normal, d_depth, d_weight).
    """
    h, w = out.weight.shape
    d_normal = np.zeros_like(out.normal)
    d_depth = np.zeros_like(out.depth)
    d_weight = np.zeros_like(out.weight)
    valid = out.weight >= WEIGHT_CUTOFF
    if not valid.any():
        return 0.0, d_normal, d_depth, d_weight

    nd = depth_to_normal(out.depth, camera)
    norm = np.linalg.norm(out.normal, axis=2, keepdims=True)
    unit = np.zeros_like(out.normal)
    np.divide(out.normal, norm, out=unit, where=norm > 1e-12)
    dots = np.sum(unit * nd, axis=2)
    per_pixel = 1.0 - dots
    w_sum = float(out.weight[valid].sum())
    loss = float((out.weight[valid] * per_pixel[valid]).sum() / w_sum)

    d_weight[valid] = (per_pixel[valid] - loss) / w_sum
    scale = np.where(valid, out.weight, 0.0) / w_sum
    d_unit = -scale[:, :, None] * nd
    # through the normalization of the blended normal
    core = d_unit - unit * np.sum(d_unit * unit, axis=2, keepdims=True)
    np.divide(core, norm, out=d_normal, where=norm > 1e-12)
    d_nd = -scale[:, :, None] * unit
    d_depth = depth_to_normal_backward(out.depth, camera, d_nd)
    return loss, d_normal, d_depth, d_weight


def total_loss(scene: SceneModel, camera: Camera, target_image: np.ndarray,
               feature_maps: FeatureMaps, config: TrainConfig | None = None):
    """Full training objective with gradients.

    Returns (loss, term dict, ParamGradients, decoder gradient list).
    """
    cfg = config or TrainConfig()
    out = render(scene, camera)
    l_rgb, g_color = appearance_loss_with_grad(out.color, target_image, cfg.lambda_dssim)
    l_f, g_feature, dec_grads = semantic_loss_with_grad(
        scene.decoder, out.feature, feature_maps, cfg.lambda_local)
    l_n, g_normal, g_depth, g_weight = normal_loss_with_grad(out, camera)
    loss = l_rgb + cfg.lambda_feature * l_f + cfg.lambda_normal * l_n
    grads = render_backward(
        scene, camera,
        g_color=g_color,
        g_feature=cfg.lambda_feature * g_feature,
        g_depth=cfg.lambda_normal * g_depth,
        g_normal=cfg.lambda_normal * g_normal,
        g_weight=cfg.lambda_normal * g_weight,
    )
    dec_grads = [cfg.lambda_feature * g for g in dec_grads]
    terms = {"appearance": l_rgb, "feature": l_f, "normal": l_n}
    return loss, terms, grads, dec_grads


def fit(views: list, config: TrainConfig, init: SceneModel) -> SceneModel:
    """Optimize a scene against (camera, image, feature-maps) views.

    Deterministic given (views, config.seed, init); quaternions are
    renormalized after every step; returns a new scene (init untouched).
    """
    if not views:
        raise ValueError("fit requires at least one view")
    scene = init.copy()
    if config.steps == 0:
        return scene
    dec = scene.decoder
    params = [scene.centers, scene.rotations, scene.log_scales,
              scene.opacity_logits, scene.sh, scene.features,
              dec.w1, dec.b1, dec.w2, dec.b2]
    lrs = [config.lr_centers, config.lr_rotations, config.lr_scales,
           config.lr_opacity, config.lr_color, config.lr_features,
           config.lr_decoder, config.lr_decoder, config.lr_decoder,
           config.lr_decoder]
    opt = Adam(params, lrs)
    rng = np.random.default_rng(config.seed)
    order = []
    history = []
    for step in range(config.steps):
        if not order:
            order = list(rng.permutation(len(views)))
        camera, image, fmaps = views[order.pop()]
        loss, terms, grads, dec_grads = total_loss(scene, camera, image, fmaps, config)
        if not np.isfinite(loss):
            bad = [name for name, val in terms.items() if not np.isfinite(val)]
            raise FloatingPointError(
                f"non-finite loss at step {step}: offending term(s) {bad or ['unknown']}")
        opt.lrs[0] = config.lr_centers * config.lr_centers_final_scale ** (
            step / max(config.steps - 1, 1))
        opt.step(grads.blocks() + dec_grads)
        scene.normalize_rotations()
        history.append(loss)
    scene.loss_history = history
    return scene


def init_scene(
    n: int,
    seed_points: np.ndarray | None = None,
    bounds: tuple | None = None,
    d_f: int = 8,
    sh_degree: int = 1,
    seed: int = 0,
    background=(0.0, 0.0, 0.0),
    decoder: SemanticDecoder | None = None,
) -> SceneModel:
    """Fresh scene for fitting: centers from seed points or a uniform box.

    Scales start at each center's mean nearest-neighbor distance, opacity
    at logit(0.1), color at mid-gray, features near zero.
    """
    rng = np.random.default_rng(seed)
    if seed_points is not None:
        pts = np.asarray(seed_points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] >= n:
            centers = pts[rng.choice(pts.shape[0], size=n, replace=False)]
        else:
            picks = pts[rng.integers(0, pts.shape[0], size=n)]
            centers = picks + rng.normal(0.0, 0.01, size=(n, 3))
    elif bounds is not None:
        lo, hi = np.asarray(bounds[0], np.float64), np.asarray(bounds[1], np.float64)
        centers = rng.uniform(lo, hi, size=(n, 3))
    else:
        raise ValueError("init_scene needs seed_points or bounds")

    if n > 1:
        dists, _ = cKDTree(centers).query(centers, k=2)
        nn = dists[:, 1]
        nn = np.where(nn > 1e-6, nn, max(float(np.mean(nn)), 1e-3))
    else:
        nn = np.array([0.1])
    rotations = rng.normal(size=(n, 4))
    sh = np.zeros((n, (sh_degree + 1) ** 2, 3))
    return SceneModel(
        centers=centers,
        rotations=rotations / np.linalg.norm(rotations, axis=1, keepdims=True),
        log_scales=np.log(np.stack([nn, nn], axis=1)),
        opacity_logits=np.full(n, float(logit(0.1))),
        sh=sh,
        features=rng.normal(0.0, 0.01, size=(n, d_f)),
        decoder=decoder if decoder is not None else SemanticDecoder.create(
            in_dim=d_f, seed=seed),
        background=background,
    )

"""Hierarchical semantic targets, the feature decoder, and the distillation loss.

Per-image semantics arrive as a raw high-dimensional feature map plus an
integer label map (−1 = unlabeled) and a per-label object embedding table.
Two pixelwise targets are derived from them:

* global: every pixel of a labeled region gets the renormalized mean of the
  raw features over that region;
* local: every labeled pixel gets its label's object embedding verbatim.

Rendered low-dimensional splat features are lifted back to the
high-dimensional space by a 2-layer MLP with two L2-normalized heads, and
trained with a cosine-distance loss against both targets (local term
weighted 0.5). Unlabeled pixels are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRegionError, DimensionError, MissingLabelError

LOCAL_WEIGHT = 0.5


def l2_normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unit-normalize along an axis; exactly-zero vectors stay zero."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    out = np.zeros_like(v)
    np.divide(v, n, out=out, where=n > 0)
    return out


def feature_distance(f1: np.ndarray, f2: np.ndarray) -> float:
    """Cosine distance 1 − f1·f2 / (‖f1‖‖f2‖), in [0, 2]."""
    f1 = np.asarray(f1, dtype=np.float64).ravel()
    f2 = np.asarray(f2, dtype=np.float64).ravel()
    n1, n2 = np.linalg.norm(f1), np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateRegionError("feature_distance requires nonzero vectors")
    return float(1.0 - np.dot(f1, f2) / (n1 * n2))


def build_global_target(raw: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Region-mean features, renormalized; unlabeled pixels get zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    masks = np.asarray(masks)
    if raw.shape[:2] != masks.shape:
        raise DimensionError(
            f"raw map {raw.shape[:2]} and label map {masks.shape} disagree")
    out = np.zeros_like(raw)
    for label in np.unique(masks):
        if label < 0:
            continue
        sel = masks == label
        mean = raw[sel].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise DegenerateRegionError(
                f"region {int(label)} has a zero-mean feature vector")
        out[sel] = mean / norm
    return out


def build_local_target(object_features: dict, masks: np.ndarray,
                       d_high: int | None = None) -> np.ndarray:
    """Per-label embedding lookup; unlabeled pixels get zeros."""
    masks = np.asarray(masks)
    labels = [int(l) for l in np.unique(masks) if l >= 0]
    for label in labels:
        if label not in object_features:
            raise MissingLabelError(f"label {label} has no object feature entry")
    if d_high is None:
        if labels:
            d_high = len(np.asarray(object_features[labels[0]]).ravel())
        elif object_features:
            d_high = len(np.asarray(next(iter(object_features.values()))).ravel())
        else:
            raise DimensionError("cannot infer feature dimension from empty table")
    out = np.zeros(masks.shape + (d_high,), dtype=np.float64)
    for label in labels:
        vec = np.asarray(object_features[label], dtype=np.float64).ravel()
        if vec.shape[0] != d_high:
            raise DimensionError(
                f"object feature for label {label} has dim {vec.shape[0]}, expected {d_high}")
        out[masks == label] = vec
    return out


@dataclass
class FeatureMaps:
    """Ingested per-image semantics plus the derived distillation targets."""

    raw: np.ndarray                 # (H, W, D_high)
    masks: np.ndarray               # (H, W) int, -1 = unlabeled
    object_features: dict           # label -> (D_high,) unit vector
    global_target: np.ndarray = field(default=None)
    local_target: np.ndarray = field(default=None)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.int32)
        if self.raw.ndim != 3:
            raise DimensionError("raw feature map must be H×W×D_high")
        if self.masks.shape != self.raw.shape[:2]:
            raise DimensionError("mask map shape must match the raw map")
        self.object_features = {
            int(k): np.asarray(v, dtype=np.float64).ravel()
            for k, v in self.object_features.items()
        }
        if self.global_target is None:
            self.global_target = build_global_target(self.raw, self.masks)
        if self.local_target is None:
            self.local_target = build_local_target(
                self.object_features, self.masks, self.raw.shape[2])

    @property
    def d_high(self) -> int:
        return self.raw.shape[2]

    @property
    def valid(self) -> np.ndarray:
        return self.masks >= 0


def _he_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))


@dataclass
class SemanticDecoder:
    """2-layer perceptron D_f → hidden → 2·D_high with ReLU, two unit heads."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).ravel()
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).ravel()
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[0] != self.b2.shape[0]:
            raise DimensionError("bias shapes must match weight rows")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise DimensionError("layer widths disagree")
        if self.w2.shape[0] % 2 != 0:
            raise DimensionError("output layer must split into two equal heads")
        if not (np.all(np.isfinite(self.w1)) and np.all(np.isfinite(self.b1))
                and np.all(np.isfinite(self.w2)) and np.all(np.isfinite(self.b2))):
            raise ValueError("decoder weights must be finite")

    @staticmethod
    def create(in_dim: int = 8, hidden: int = 64, high_dim: int = 16,
               seed: int = 0) -> "SemanticDecoder":
        rng = np.random.default_rng(seed)
        return SemanticDecoder(
            w1=_he_init(rng, hidden, in_dim),
            b1=np.zeros(hidden),
            w2=_he_init(rng, 2 * high_dim, hidden),
            b2=np.zeros(2 * high_dim),
        )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def high_dim(self) -> int:
        return self.w2.shape[0] // 2

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.w1, self.b1, self.w2, self.b2 = [np.asarray(p, np.float64) for p in params]

    def copy(self) -> "SemanticDecoder":
        return SemanticDecoder(self.w1.copy(), self.b1.copy(),
                               self.w2.copy(), self.b2.copy())

    def forward_raw(self, f: np.ndarray):
        """Pre-normalization heads; returns (local_raw, global_raw, hidden)."""
        f = np.atleast_2d(np.asarray(f, dtype=np.float64))
        if f.shape[1] != self.in_dim:
            raise DimensionError(
                f"decoder expects {self.in_dim}-dim features, got {f.shape[1]}")
        h = np.maximum(f @ self.w1.T + self.b1, 0.0)
        out = h @ self.w2.T + self.b2
        d = self.high_dim
        return out[:, :d], out[:, d:], h


def decode(dec: SemanticDecoder, f: np.ndarray):
    """Lift low-dim features to the two unit-normalized high-dim heads.

    Accepts a single vector or a batch; returns (f_l, f_g) matching the
    input's leading shape.
    """
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    l_raw, g_raw, _ = dec.forward_raw(np.atleast_2d(f))
    f_l = l2_normalize(l_raw)
    f_g = l2_normalize(g_raw)
    if single:
        return f_l[0], f_g[0]
    return f_l, f_g


def semantic_loss(decoded_l, decoded_g, local_target, global_target, valid_mask,
                  local_weight: float = LOCAL_WEIGHT):
    """Mean cosine-distance loss over valid pixels; local term weighted 0.5.

    Pixels where either side of a term has zero norm contribute 0 to that
    term. Returns (loss, had_valid_pixels).
    """
    valid = np.asarray(valid_mask, dtype=bool).ravel()
    if not valid.any():
        return 0.0, False
    dl = np.asarray(decoded_l, np.float64).reshape(valid.size, -1)[valid]
    dg = np.asarray(decoded_g, np.float64).reshape(valid.size, -1)[valid]
    tl = np.asarray(local_target, np.float64).reshape(valid.size, -1)[valid]
    tg = np.asarray(global_target, np.float64).reshape(valid.size, -1)[valid]

    def term(pred, target):
        pn = np.linalg.norm(pred, axis=1)
        tn = np.linalg.norm(target, axis=1)
        ok = (pn > 0) & (tn > 0)
        cos = np.zeros(pred.shape[0])
        cos[ok] = np.sum(pred[ok] * target[ok], axis=1) / (pn[ok] * tn[ok])
        dist = np.where(ok, 1.0 - cos, 0.0)
        return dist

    per_pixel = term(dg, tg) + local_weight * term(dl, tl)
    return float(per_pixel.mean()), True


def semantic_loss_with_grad(dec: SemanticDecoder, feature_map: np.ndarray,
                            fmaps: FeatureMaps,
                            local_weight: float = LOCAL_WEIGHT):
    """Distillation loss with gradients.

    ``feature_map`` is the rendered (H, W, D_f) low-dimensional map. Returns
    (loss, d_feature_map, decoder_param_grads). Both heads are decoded from
    the same features; gradients flow through ReLU, normalization, and the
    cosine terms. Unlabeled pixels get zero gradient.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    h_img, w_img, d_f = fm.shape
    valid = fmaps.valid.ravel()
    zeros = [np.zeros_like(p) for p in dec.params()]
    if not valid.any():
        return 0.0, np.zeros_like(fm), zeros

    flat = fm.reshape(-1, d_f)[valid]
    tl = fmaps.local_target.reshape(-1, fmaps.d_high)[valid]
    tg = fmaps.global_target.reshape(-1, fmaps.d_high)[valid]
    m = flat.shape[0]

    l_raw, g_raw, hidden = dec.forward_raw(flat)

    def head_term(raw, target, weight):
        """Loss contribution and d/d raw for one normalized head."""
        rn = np.linalg.norm(raw, axis=1, keepdims=True)
        tn = np.linalg.norm(target, axis=1, keepdims=True)
        ok = (rn[:, 0] > 0) & (tn[:, 0] > 0)
        unit_r = np.zeros_like(raw)
        unit_t = np.zeros_like(target)
        np.divide(raw, rn, out=unit_r, where=rn > 0)
        np.divide(target, tn, out=unit_t, where=tn > 0)
        cos = np.sum(unit_r * unit_t, axis=1)
        loss = weight * np.where(ok, 1.0 - cos, 0.0).sum() / m
        # d(1-cos)/d raw = -(t̂ - (r̂·t̂) r̂)/‖raw‖ per pixel, mean-scaled
        d_raw = -(unit_t - unit_r * cos[:, None])
        np.divide(d_raw, rn, out=d_raw, where=rn > 0)
        d_raw[~ok] = 0.0
        return loss, (weight / m) * d_raw

    loss_g, d_g_raw = head_term(g_raw, tg, 1.0)
    loss_l, d_l_raw = head_term(l_raw, tl, local_weight)
    loss = float(loss_g + loss_l)

    d_out = np.concatenate([d_l_raw, d_g_raw], axis=1)       # (m, 2*D_high)
    d_w2 = d_out.T @ hidden
    d_b2 = d_out.sum(axis=0)
    d_hidden = (d_out @ dec.w2) * (hidden > 0)
    d_w1 = d_hidden.T @ flat
    d_b1 = d_hidden.sum(axis=0)
    d_flat = d_hidden @ dec.w1

    d_fm = np.zeros((h_img * w_img, d_f))
    d_fm[valid] = d_flat
    return loss, d_fm.reshape(h_img, w_img, d_f), [d_w1, d_b1, d_w2, d_b2]

"""Conditional noise-prediction network for the diffusion policy.

A small MLP maps (flattened noisy action sequence, sinusoidal step
embedding, observation) to a noise estimate with the action-sequence
shape. Observations and actions are affinely normalized to roughly
[-1, 1]; the stats ride along with the network so a saved policy is
self-contained. Forward and backward are hand-rolled numpy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, FormatError
from ..fileio import _read_exact

POLICY_MAGIC = b"S2GP"
POLICY_VERSION = 1
EMBED_DIM = 16
HIDDEN = (256, 256)


def _write_f64(f, arr) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(f, count: int, what: str) -> np.ndarray:
    return np.frombuffer(_read_exact(f, 8 * count, what), dtype="<f8").astype(np.float64)


def step_embedding(k: np.ndarray, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer step indices; (B,) -> (B, dim)."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


@dataclass
class Normalizer:
    """Affine map x -> (x - center) / half_range, fitted from data."""

    center: np.ndarray
    half_range: np.ndarray

    @staticmethod
    def identity(dim: int) -> "Normalizer":
        return Normalizer(np.zeros(dim), np.ones(dim))

    @staticmethod
    def fit(data: np.ndarray, floor_ratio: float = 0.0) -> "Normalizer":
        """Fit per-dim ranges; `floor_ratio` bounds how much a narrow dim can
        be stretched relative to the widest one, so dims that happened to be
        constant in the data cannot blow up on unseen inputs."""
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        center = 0.5 * (lo + hi)
        half = np.maximum(0.5 * (hi - lo), 1e-6)
        if floor_ratio > 0.0 and half.size:
            half = np.maximum(half, floor_ratio * half.max())
        return Normalizer(center, half)

    def encode(self, x):
        return (np.asarray(x, dtype=np.float64) - self.center) / self.half_range

    def decode(self, x):
        return np.asarray(x, dtype=np.float64) * self.half_range + self.center


@dataclass
class PolicyNet:
    horizon: int
    action_dim: int
    obs_dim: int
    weights: list        # [(W, b), ...] with W shaped (fan_in, fan_out)
    action_norm: Normalizer
    obs_norm: Normalizer
    embed_dim: int = EMBED_DIM
    loss_history: list = field(default_factory=list)

    @staticmethod
    def create(horizon: int, action_dim: int, obs_dim: int,
               hidden=HIDDEN, seed: int = 0) -> "PolicyNet":
        rng = np.random.default_rng(seed)
        act = horizon * action_dim
        sizes = [act + EMBED_DIM + obs_dim, *hidden, act]
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            weights.append((w, np.zeros(fan_out)))
        return PolicyNet(horizon, action_dim, obs_dim, weights,
                         Normalizer.identity(act), Normalizer.identity(obs_dim))

    @property
    def flat_action_dim(self) -> int:
        return self.horizon * self.action_dim

    def params(self) -> list:
        out = []
        for w, b in self.weights:
            out.extend([w, b])
        return out

    def _stack_input(self, a_flat, k, obs):
        a_flat = np.atleast_2d(np.asarray(a_flat, dtype=np.float64))
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if a_flat.shape[1] != self.flat_action_dim:
            raise DimensionError("action input width mismatch")
        if obs.shape[1] != self.obs_dim:
            raise DimensionError("observation width mismatch")
        emb = step_embedding(k, self.embed_dim)
        if emb.shape[0] == 1 and a_flat.shape[0] > 1:
            emb = np.repeat(emb, a_flat.shape[0], axis=0)
        obs_n = self.obs_norm.encode(obs)
        return np.concatenate([a_flat, emb, obs_n], axis=1)

    def forward(self, a_flat, k, obs):
        """Noise prediction; actions are already in normalized space."""
        x = self._stack_input(a_flat, k, obs)
        for i, (w, b) in enumerate(self.weights):
            x = x @ w + b
            if i < len(self.weights) - 1:
                x, _ = _silu(x)
        return x

    def forward_cached(self, a_flat, k, obs):
        """Forward pass keeping activations for backward."""
        x = self._stack_input(a_flat, k, obs)
        cache = [x]
        sigmas = []
        for i, (w, b) in enumerate(self.weights):
            z = x @ w + b
            if i < len(self.weights) - 1:
                x, s = _silu(z)
                sigmas.append((z, s))
            else:
                x = z
            cache.append(x)
        return x, (cache, sigmas)

    def backward(self, ctx, d_out):
        """Gradients for every (W, b) given d loss / d output."""
        cache, sigmas = ctx
        grads = []
        g = np.asarray(d_out, dtype=np.float64)
        for i in reversed(range(len(self.weights))):
            w, _ = self.weights[i]
            x_in = cache[i]
            if i < len(self.weights) - 1:
                z, s = sigmas[i]
                g = g * (s * (1.0 + z * (1.0 - s)))
            grads.append((x_in.T @ g, g.sum(axis=0)))
            g = g @ w.T
        grads.reverse()
        flat = []
        for gw, gb in grads:
            flat.extend([gw, gb])
        return flat


def save_policy(net: PolicyNet, path) -> None:
    with open(path, "wb") as f:
        f.write(POLICY_MAGIC)
        f.write(struct.pack("<IIIII", POLICY_VERSION, net.horizon,
                            net.action_dim, net.obs_dim, net.embed_dim))
        f.write(struct.pack("<I", len(net.weights)))
        for w, _ in net.weights:
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for stats in (net.action_norm, net.obs_norm):
            _write_f64(f, stats.center)
            _write_f64(f, stats.half_range)
        for w, b in net.weights:
            _write_f64(f, w)
            _write_f64(f, b)


def load_policy(path) -> PolicyNet:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "policy magic")
        if magic != POLICY_MAGIC:
            raise FormatError(f"{path}: not a policy file")
        version, horizon, action_dim, obs_dim, embed_dim = struct.unpack(
            "<IIIII", _read_exact(f, 20, "policy header"))
        if version != POLICY_VERSION:
            raise FormatError(f"{path}: unsupported policy version {version}")
        n_layers = struct.unpack("<I", _read_exact(f, 4, "layer count"))[0]
        shapes = [struct.unpack("<II", _read_exact(f, 8, "layer shape"))
                  for _ in range(n_layers)]
        act = horizon * action_dim
        action_norm = Normalizer(_read_f64(f, act, "action center"),
                                 _read_f64(f, act, "action range"))
        obs_norm = Normalizer(_read_f64(f, obs_dim, "obs center"),
                              _read_f64(f, obs_dim, "obs range"))
        weights = []
        for rows, cols in shapes:
            w = _read_f64(f, rows * cols, "layer weight").reshape(rows, cols)
            b = _read_f64(f, cols, "layer bias")
            weights.append((w, b))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    net = PolicyNet(horizon, action_dim, obs_dim, weights, action_norm,
                    obs_norm, embed_dim=embed_dim)
    if net.weights[0][0].shape[0] != act + embed_dim + obs_dim:
        raise FormatError(f"{path}: inconsistent layer dimensions")
    return net

"""DDPM forward/reverse processes and policy training.

The reverse step follows the standard noise-prediction form: the network
output is subtracted with coefficient gamma_k, the result rescaled by
alpha_k, and Gaussian noise sigma_k * z added except at the final step.
Training regresses the injected noise with MSE over uniformly sampled
steps. Everything runs in the network's normalized action space; only
`sample` converts back to raw actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from ..optim import Adam
from .network import Normalizer, PolicyNet
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class PolicyObservation:
    s: np.ndarray   # object-centric spatial feature(s)
    q: np.ndarray   # end-effector state

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.s, dtype=np.float64).ravel(),
                               np.asarray(self.q, dtype=np.float64).ravel()])


def _obs_vector(obs) -> np.ndarray:
    if isinstance(obs, PolicyObservation):
        return obs.vector()
    return np.asarray(obs, dtype=np.float64).ravel()


def forward_noise(a0, k: int, eps, sched: NoiseSchedule):
    """Noisy action at step k: sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps."""
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise DimensionError("action and noise shapes differ")
    k = sched.check_step(k)
    return np.sqrt(sched.alpha_bar[k]) * a0 + np.sqrt(sched.beta_bar[k]) * eps


def invert_forward_noise(a_k, k: int, eps, sched: NoiseSchedule):
    """Recover a0 from a noisy action when the true noise is known."""
    k = sched.check_step(k)
    a_k = np.asarray(a_k, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return (a_k - np.sqrt(sched.beta_bar[k]) * eps) / np.sqrt(sched.alpha_bar[k])


def denoise_step(a_k, k: int, obs, net: PolicyNet, sched: NoiseSchedule,
                 rng: np.random.Generator):
    """One reverse step a_k -> a_{k-1}; deterministic at k = 1."""
    k = sched.check_step(k)
    a_k = np.asarray(a_k, dtype=np.float64)
    eps_hat = net.forward(a_k.reshape(1, -1), np.array([k]),
                          _obs_vector(obs).reshape(1, -1)).reshape(a_k.shape)
    mean = sched.alpha[k] * (a_k - sched.gamma[k] * eps_hat)
    if k == 1:
        return mean
    return mean + sched.sigma[k] * rng.standard_normal(a_k.shape)


def sample(net: PolicyNet, sched: NoiseSchedule, obs,
           rng: np.random.Generator) -> np.ndarray:
    """Full reverse pass from Gaussian noise; returns (horizon, action_dim).

    Each step rewrites the reverse mean around the net's implied clean-action
    estimate and clips that estimate to the normalizer box. Unclipped this is
    algebraically identical to `denoise_step`; the clip keeps the chain inside
    the region the net was trained on, which matters because the schedule's
    final beta is large and the first reverse steps amplify prediction error.
    """
    o = _obs_vector(obs).reshape(1, -1)
    a = rng.standard_normal(net.flat_action_dim)
    ab = sched.alpha_bar
    for k in range(sched.K, 0, -1):
        eps_hat = net.forward(a.reshape(1, -1), np.array([k]), o).ravel()
        x0 = (a - np.sqrt(sched.beta_bar[k]) * eps_hat) / np.sqrt(ab[k])
        np.clip(x0, -1.0, 1.0, out=x0)
        beta = sched.betas[k]
        a = (np.sqrt(ab[k - 1]) * beta / (1.0 - ab[k])) * x0 \
            + (np.sqrt(1.0 - beta) * (1.0 - ab[k - 1]) / (1.0 - ab[k])) * a
        if k > 1:
            a = a + sched.sigma[k] * rng.standard_normal(a.shape)
    raw = net.action_norm.decode(a)
    return raw.reshape(net.horizon, net.action_dim)


@dataclass
class PolicyTrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    hidden: tuple = (256, 256)
    seed: int = 0
    # cosine decay floor as a fraction of lr, and weight averaging; both help
    # the sampled actions considerably at longer step counts
    lr_floor_ratio: float = 0.01
    ema_decay: float = 0.999

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("invalid policy training configuration")
        if not 0.0 < self.lr_floor_ratio <= 1.0:
            raise ConfigError("lr_floor_ratio must be in (0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must be in [0, 1)")


def train_policy(observations: np.ndarray, action_seqs: np.ndarray,
                 sched: NoiseSchedule, config: PolicyTrainConfig | None = None,
                 batch_schedule=None) -> PolicyNet:
    """Fit the noise-prediction net to expert (observation, action-chunk) pairs.

    `batch_schedule` optionally fixes the minibatch indices per step,
    bypassing the index draw (the rest of the rng stream is unchanged).
    """
    config = config or PolicyTrainConfig()
    obs = np.asarray(observations, dtype=np.float64)
    acts = np.asarray(action_seqs, dtype=np.float64)
    if obs.ndim != 2 or acts.ndim != 3 or obs.shape[0] != acts.shape[0]:
        raise DimensionError("expected observations (M, obs_dim), actions (M, H, A)")
    if obs.shape[0] == 0:
        raise DimensionError("training dataset is empty")
    m, horizon, action_dim = acts.shape
    net = PolicyNet.create(horizon, action_dim, obs.shape[1],
                           hidden=config.hidden, seed=config.seed)
    net.action_norm = Normalizer.fit(acts.reshape(m, -1))
    net.obs_norm = Normalizer.fit(obs, floor_ratio=0.5)
    acts_n = net.action_norm.encode(acts.reshape(m, -1))

    params = net.params()
    opt = Adam(params, [config.lr] * len(params))
    base_lrs = list(opt.lrs)
    ema = [p.copy() for p in params]
    rng = np.random.default_rng(config.seed)
    for step in range(config.steps):
        frac = step / max(config.steps - 1, 1)
        scale = config.lr_floor_ratio \
            + (1.0 - config.lr_floor_ratio) * 0.5 * (1.0 + np.cos(np.pi * frac))
        opt.lrs = [lr * scale for lr in base_lrs]
        if batch_schedule is not None:
            idx = np.asarray(batch_schedule[step], dtype=np.int64)
        else:
            idx = rng.integers(0, m, config.batch_size)
        ks = rng.integers(1, sched.K + 1, idx.size)
        eps = rng.standard_normal((idx.size, horizon * action_dim))
        a0 = acts_n[idx]
        coef_sig = np.sqrt(sched.alpha_bar[ks])[:, None]
        coef_noise = np.sqrt(sched.beta_bar[ks])[:, None]
        a_k = coef_sig * a0 + coef_noise * eps
        pred, ctx = net.forward_cached(a_k, ks, obs[idx])
        diff = pred - eps
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"policy training loss became non-finite at step {step}")
        grads = net.backward(ctx, 2.0 * diff / diff.size)
        opt.step(grads)
        for e, p in zip(ema, params):
            e *= config.ema_decay
            e += (1.0 - config.ema_decay) * p
        net.loss_history.append(loss)
    for p, e in zip(params, ema):
        p[...] = e
    return net

"""Noise schedule for the diffusion policy.

Squared-cosine cumulative signal level with the usual per-step clipping so
the last steps stay numerically sane. Index convention: step k runs 1..K,
and alpha_bar[0] == 1 is the clean-data level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

BETA_CLIP = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    alpha_bar: np.ndarray          # (K+1,) cumulative signal, index by k
    betas: np.ndarray              # (K+1,) per-step noise, betas[0] unused
    alpha: np.ndarray = field(init=False)   # reverse outer coefficient 1/sqrt(1-beta_k)
    gamma: np.ndarray = field(init=False)   # noise-prediction coefficient
    sigma: np.ndarray = field(init=False)   # reverse noise scale, sigma[1] == 0

    def __post_init__(self):
        ab, b = self.alpha_bar, self.betas
        if ab.shape != (self.K + 1,) or b.shape != (self.K + 1,):
            raise DomainError("schedule arrays must have K + 1 entries")
        if ab[0] != 1.0 or np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise DomainError("alpha_bar must decrease from 1 and stay in (0, 1]")
        step_alpha = 1.0 - b
        alpha = np.zeros(self.K + 1)
        gamma = np.zeros(self.K + 1)
        sigma = np.zeros(self.K + 1)
        alpha[1:] = 1.0 / np.sqrt(step_alpha[1:])
        gamma[1:] = b[1:] / np.sqrt(1.0 - ab[1:])
        # posterior variance; exactly zero at k = 1 because alpha_bar[0] = 1
        sigma[1:] = np.sqrt(b[1:] * (1.0 - ab[:-1]) / (1.0 - ab[1:]))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma", sigma)

    @property
    def beta_bar(self) -> np.ndarray:
        """Cumulative noise level 1 - alpha_bar."""
        return 1.0 - self.alpha_bar

    def check_step(self, k: int) -> int:
        k = int(k)
        if not 1 <= k <= self.K:
            raise DomainError(f"diffusion step {k} outside [1, {self.K}]")
        return k


def squared_cosine_schedule(K: int = 100, offset: float = COSINE_OFFSET) -> NoiseSchedule:
    if K < 1:
        raise DomainError("schedule needs at least one step")
    k = np.arange(K + 1, dtype=np.float64)
    f = np.cos((k / K + offset) / (1.0 + offset) * (np.pi / 2.0)) ** 2
    raw = f / f[0]
    betas = np.zeros(K + 1)
    betas[1:] = np.minimum(1.0 - raw[1:] / raw[:-1], BETA_CLIP)
    alpha_bar = np.ones(K + 1)
    alpha_bar[1:] = np.cumprod(1.0 - betas[1:])
    return NoiseSchedule(K=K, alpha_bar=alpha_bar, betas=betas)

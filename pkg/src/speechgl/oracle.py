"""Monte-Carlo and brute-force checks of the subband derivations.

Speech and noise DFT coefficients are drawn as independent circular complex
Gaussians.  Expected losses are sample means over those draws; optimal gains
are found by grid search over the Monte-Carlo Lagrangian, independently of
the closed forms in :mod:`speechgl.estimators`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError
from .losses import LossParams


@dataclass(frozen=True)
class GaussianPrior:
    speech_var: float
    noise_var: float

    def __post_init__(self):
        if self.speech_var <= 0 or self.noise_var <= 0:
            raise InvalidConfigError("prior variances must be positive")

    @property
    def xi(self) -> float:
        return self.speech_var / self.noise_var

    @classmethod
    def from_snr(cls, xi: float, noise_var: float = 1.0) -> "GaussianPrior":
        return cls(speech_var=xi * noise_var, noise_var=noise_var)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_samples: int

    @classmethod
    def of(cls, x: np.ndarray) -> "McEstimate":
        n = x.size
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(x)), se, n)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


def circular_gaussian(rng: np.random.Generator, var: float, n: int) -> np.ndarray:
    """``n`` draws with ``E|z|^2 = var``."""
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _draw(prior: GaussianPrior, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    S = circular_gaussian(rng, prior.speech_var, n)
    D = circular_gaussian(rng, prior.noise_var, n)
    return S, D


def _check_m(m: float, n: int) -> None:
    if not 0.0 <= m <= 1.0:
        raise InvalidConfigError(f"gain must lie in [0, 1], got {m}")
    if n < 1:
        raise InvalidConfigError(f"need at least one sample, got {n}")


def mc_expected_losses(prior: GaussianPrior, m: float, params: LossParams, n: int, seed=0
                       ) -> tuple[McEstimate, McEstimate]:
    """Sample means of the generalized distortion and residual-noise terms at gain ``m``."""
    _check_m(m, n)
    S, D = _draw(prior, int(n), seed)
    g, a = params.gamma, params.alpha
    js = np.abs((1.0 - m**a) * np.abs(S) ** a) ** g
    jd = np.abs(m**a * np.abs(D) ** a) ** g
    return McEstimate.of(js), McEstimate.of(jd)


def _golden_min(f, lo: float, hi: float, tol: float = 1e-7) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def brute_force_optimal_gain(prior: GaussianPrior, mu: float, gamma: float, alpha: float,
                             grid_size: int = 1000, n: int = 1_000_000, seed=0) -> float:
    """Minimize the Monte-Carlo Lagrangian ``E{J_s} + mu E{J_d}`` over M in [0, 1].

    Every candidate gain is scored on the same draws.  Because both terms
    factor as (function of M) x (sample moment), the moments are computed
    once and the grid search is exact for the sampled objective.
    """
    if grid_size < 100:
        raise InvalidConfigError("grid_size must be >= 100")
    S, D = _draw(prior, int(n), seed)
    p = alpha * gamma
    mom_s = float(np.mean(np.abs(S) ** p))
    mom_d = float(np.mean(np.abs(D) ** p))

    def lagrangian(m):
        m = np.asarray(m, dtype=np.float64)
        return np.abs(1.0 - m**alpha) ** gamma * mom_s + mu * m**p * mom_d

    grid = np.linspace(0.0, 1.0, int(grid_size))
    i = int(np.argmin(lagrangian(grid)))
    step = grid[1] - grid[0]
    lo, hi = max(0.0, grid[i] - step), min(1.0, grid[i] + step)
    best = _golden_min(lambda m: float(lagrangian(m)), lo, hi)
    return best if lagrangian(best) <= lagrangian(grid[i]) else float(grid[i])


@dataclass(frozen=True)
class DecompositionReport:
    m: float
    prior: GaussianPrior
    total: McEstimate
    distortion: McEstimate
    residual: McEstimate
    cross: McEstimate

    @property
    def passed(self) -> bool:
        return abs(self.cross.mean) <= 3.0 * self.cross.stderr


def verify_decomposition(prior: GaussianPrior, m: float, n: int = 1_000_000, seed=0) -> DecompositionReport:
    """Check E|S - m(S+D)|^2 = E|(1-m)S|^2 + E|mD|^2 by sampling."""
    _check_m(m, n)
    S, D = _draw(prior, int(n), seed)
    jx = np.abs(S - m * (S + D)) ** 2
    js = np.abs((1.0 - m) * S) ** 2
    jd = np.abs(m * D) ** 2
    return DecompositionReport(
        m=m,
        prior=prior,
        total=McEstimate.of(jx),
        distortion=McEstimate.of(js),
        residual=McEstimate.of(jd),
        cross=McEstimate.of(jx - js - jd),
    )

"""Oracle a priori SNR and the closed-form parametric Wiener gain family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, ShapeError, SingularParameterError
from .spectral import GainMask, MagnitudeSpectrogram

DEFAULT_SNR_FLOOR = 1e-12


@dataclass(frozen=True)
class GainParams:
    mu: float = 1.0
    gamma: float = 2.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise InvalidConfigError(f"mu must be >= 0, got {self.mu}")
        if self.alpha <= 0:
            raise InvalidConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.gamma <= 1:
            raise SingularParameterError(
                f"closed-form gain needs gamma > 1 (c1 = alpha*gamma/(2*gamma-2)), got {self.gamma}"
            )

    @property
    def c1(self) -> float:
        return self.alpha * self.gamma / (2.0 * self.gamma - 2.0)

    @property
    def c2(self) -> float:
        return 1.0 / self.alpha


@dataclass(frozen=True, eq=False)
class SnrField:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("a priori SNR must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def a_priori_snr(
    clean: MagnitudeSpectrogram,
    noise: MagnitudeSpectrogram,
    floor: float = DEFAULT_SNR_FLOOR,
) -> SnrField:
    """Instantaneous oracle SNR ``|S|^2 / max(|D|^2, floor)`` per bin."""
    if clean.shape != noise.shape:
        raise ShapeError(f"clean {clean.shape} vs noise {noise.shape}")
    if floor < 0:
        raise InvalidConfigError("floor must be >= 0")
    ps = clean.values**2
    pd = np.maximum(noise.values**2, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(pd > 0, ps / np.where(pd > 0, pd, 1.0), np.where(ps > 0, np.inf, 0.0))
    return SnrField(xi)


def _ratio(num: np.ndarray, offset: float) -> np.ndarray:
    # num / (offset + num); the 0/0 case (no signal, no penalty) passes everything
    den = num + offset
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)


def wiener_gain(snr: SnrField, mu: float = 1.0) -> GainMask:
    if mu < 0:
        raise InvalidConfigError(f"mu must be >= 0, got {mu}")
    return GainMask(np.clip(_ratio(snr.values, float(mu)), 0.0, 1.0))


def parametric_gain(snr: SnrField, params: GainParams) -> GainMask:
    """``(xi^c1 / (mu^(2 c1 c2 - 1) + xi^c1))^c2``.

    Reduces to :func:`wiener_gain` at gamma=2, alpha=1.
    """
    c1, c2 = params.c1, params.c2
    offset = float(params.mu) ** (2.0 * c1 * c2 - 1.0)
    base = _ratio(np.power(snr.values, c1), offset)
    return GainMask(np.clip(np.power(base, c2), 0.0, 1.0))

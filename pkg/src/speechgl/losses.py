"""Training losses over gain masks, each returning a value and d(loss)/d(mask).

Magnitude-domain losses are averaged over all (frame, bin) cells rather than
summed; both terms of a composite loss share the normalization, so the
per-bin minimizers and the meaning of ``mu`` do not depend on utterance
length.  Time-domain losses (TMSE, SI-SDR) are backpropagated through the
fixed synthesis with :func:`~speechgl.spectral.istft_adjoint`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, InvalidConfigError, ShapeError
from .spectral import (
    ComplexSpectrogram,
    Waveform,
    istft,
    istft_adjoint,
)

SI_SDR_CAP_DB = 60.0


def db_to_amplitude(db: float) -> float:
    """``10**(db/20)``; ``-inf`` maps to 0."""
    return 0.0 if db == -math.inf else 10.0 ** (db / 20.0)


@dataclass(frozen=True)
class LossParams:
    gamma: float = 2.0
    alpha: float = 1.0
    mu: float = 1.0
    beta0: float = 0.1

    def __post_init__(self):
        if self.gamma < 1:
            raise InvalidConfigError(f"gamma must be >= 1, got {self.gamma}")
        if self.alpha <= 0:
            raise InvalidConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.mu < 0:
            raise InvalidConfigError(f"mu must be >= 0, got {self.mu}")
        if not 0.0 <= self.beta0 <= 1.0:
            raise InvalidConfigError(f"beta0 must lie in [0, 1], got {self.beta0}")

    @classmethod
    def from_db(cls, gamma=2.0, alpha=1.0, mu=1.0, beta0_db=-20.0) -> "LossParams":
        return cls(gamma=gamma, alpha=alpha, mu=mu, beta0=db_to_amplitude(beta0_db))


@dataclass(frozen=True, eq=False)
class LossResult:
    value: float
    grad_mask: np.ndarray


def _values(x) -> np.ndarray:
    v = x.values if hasattr(x, "values") else np.asarray(x)
    return v if np.iscomplexobj(v) else np.asarray(v, dtype=np.float64)


def _check(*arrays) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def _power_deriv(m: np.ndarray, p: float) -> np.ndarray:
    """d(m**p)/dm, kept finite at m = 0 when p < 1."""
    if p == 1.0:
        return np.ones_like(m)
    with np.errstate(divide="ignore"):
        d = p * np.power(m, p - 1.0)
    return np.where(np.isfinite(d), d, 0.0)


def loss_speech_distortion(clean_mag, mask, params: LossParams) -> LossResult:
    """Mean of ``((1 - M**alpha) |S|**alpha) ** gamma``."""
    S, M = _values(clean_mag), _values(mask)
    _check(S, M)
    g, a = params.gamma, params.alpha
    Sa = np.power(S, a)
    base = (1.0 - np.power(M, a)) * Sa
    n = M.size
    value = float(np.sum(np.power(base, g)) / n)
    outer = g * np.power(base, g - 1.0)
    grad = outer * (-_power_deriv(M, a) * Sa) / n
    return LossResult(value, grad)


def loss_residual_noise_controlled(noise_mag, mask, params: LossParams) -> LossResult:
    """Mean of ``| (M|D|)**(alpha*gamma) - (beta0|D|)**(alpha*gamma) |``.

    Uses the zero subgradient where the residual exactly meets its target.
    """
    D, M = _values(noise_mag), _values(mask)
    _check(D, M)
    p = params.alpha * params.gamma
    diff = np.power(M * D, p) - np.power(params.beta0 * D, p)
    n = M.size
    value = float(np.sum(np.abs(diff)) / n)
    grad = np.sign(diff) * _power_deriv(M, p) * np.power(D, p) / n
    return LossResult(value, grad)


def loss_generalized(clean_mag, noise_mag, mask, params: LossParams) -> LossResult:
    js = loss_speech_distortion(clean_mag, mask, params)
    jd = loss_residual_noise_controlled(noise_mag, mask, params)
    return LossResult(js.value + params.mu * jd.value, js.grad_mask + params.mu * jd.grad_mask)


def loss_components(clean_mag, noise_mag, mask, mu: float) -> LossResult:
    """Components loss: mean ``((1-M)|S|)**2 + mu (M|D|)**2``."""
    S, D, M = _values(clean_mag), _values(noise_mag), _values(mask)
    _check(S, D, M)
    n = M.size
    e = (1.0 - M) * S
    r = M * D
    value_s = float(np.sum(np.power(e, 2.0)) / n)
    value_d = float(np.sum(np.abs(np.power(r, 2.0))) / n)
    grad_s = 2.0 * e * (-S) / n
    grad_d = np.sign(np.power(r, 2.0)) * (2.0 * M) * np.power(D, 2.0) / n
    return LossResult(value_s + mu * value_d, grad_s + mu * grad_d)


def loss_mse_magnitude(clean_mag, noisy_mag, mask) -> LossResult:
    """Mean of ``(|S| - M|X|)**2``."""
    S, X, M = _values(clean_mag), _values(noisy_mag), _values(mask)
    _check(S, X, M)
    n = M.size
    e = S - M * X
    return LossResult(float(np.sum(e * e) / n), -2.0 * e * X / n)


def _mask_grad(grad_spec: ComplexSpectrogram, noisy_spec: ComplexSpectrogram) -> np.ndarray:
    # Y = M * X with real M: dL/dM = Re(G) Re(X) + Im(G) Im(X)
    G, X = grad_spec.values, noisy_spec.values
    return G.real * X.real + G.imag * X.imag


def _aligned(clean_wave: Waveform, enhanced_spec: ComplexSpectrogram) -> tuple[np.ndarray, np.ndarray]:
    est = istft(enhanced_spec).samples
    ref = clean_wave.samples
    if est.size != ref.size:
        raise ShapeError(f"synthesized {est.size} samples, reference has {ref.size}")
    return ref, est


def time_mse_spec_grad(clean_wave: Waveform, enhanced_spec: ComplexSpectrogram) -> tuple[float, ComplexSpectrogram]:
    """TMSE value and its gradient with respect to the enhanced spectrogram."""
    ref, est = _aligned(clean_wave, enhanced_spec)
    err = est - ref
    value = float(np.mean(err * err))
    g = 2.0 * err / err.size
    return value, istft_adjoint(g, enhanced_spec.config, enhanced_spec.length)


def loss_time_mse(clean_wave: Waveform, enhanced_spec: ComplexSpectrogram,
                  noisy_spec: ComplexSpectrogram | None = None) -> LossResult:
    """Mean squared sample error after synthesis.

    ``grad_mask`` is taken with respect to a real mask applied to
    ``noisy_spec``; when omitted, the enhanced spectrogram itself plays the
    noisy role (gradient at a unit mask).
    """
    value, gspec = time_mse_spec_grad(clean_wave, enhanced_spec)
    if noisy_spec is None:
        noisy_spec = enhanced_spec
    return LossResult(value, _mask_grad(gspec, noisy_spec))


def si_sdr_db(reference: np.ndarray, estimate: np.ndarray, cap: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant SDR in dB, saturated at ``cap``."""
    return _si_sdr(np.asarray(reference, float), np.asarray(estimate, float), cap)[0]


def _si_sdr(s: np.ndarray, est: np.ndarray, cap: float):
    if s.size != est.size:
        raise ShapeError(f"reference has {s.size} samples, estimate {est.size}")
    ss = float(s @ s)
    if ss == 0.0:
        raise DegenerateSignalError("reference signal has zero energy")
    proj = float(est @ s)
    target = (proj / ss) * s
    resid = target - est
    t2 = float(target @ target)
    r2 = float(resid @ resid)
    if t2 == 0.0:
        raise DegenerateSignalError("estimate is orthogonal to the reference")
    if r2 == 0.0 or 10.0 * math.log10(t2 / r2) >= cap:
        return cap, None
    value = 10.0 * math.log10(t2 / r2)
    # t2 = proj^2/ss, r2 = |est|^2 - t2
    dt2 = 2.0 * proj / ss * s
    dr2 = 2.0 * est - dt2
    grad = (10.0 / math.log(10.0)) * (dt2 / t2 - dr2 / r2)
    return value, grad


def loss_si_sdr(clean_wave: Waveform, enhanced_spec: ComplexSpectrogram,
                noisy_spec: ComplexSpectrogram | None = None) -> LossResult:
    """Negative SI-SDR; at or above the 60 dB cap the value is -60 with zero gradient."""
    ref, est = _aligned(clean_wave, enhanced_spec)
    value, grad = _si_sdr(ref, est, SI_SDR_CAP_DB)
    if noisy_spec is None:
        noisy_spec = enhanced_spec
    if grad is None:
        return LossResult(-value, np.zeros(noisy_spec.shape))
    gspec = istft_adjoint(-grad, enhanced_spec.config, enhanced_spec.length)
    return LossResult(-value, _mask_grad(gspec, noisy_spec))


def decompose_complex_mse(clean_spec, noise_spec, mask) -> tuple[float, float, float]:
    """Split ``sum |S - M X|^2`` into distortion, residual noise and cross term.

    The three returned sums add up to the complex-spectrum squared error
    exactly (up to rounding); the cross term vanishes only in expectation.
    """
    S, D, M = _values(clean_spec), _values(noise_spec), _values(mask)
    _check(S, D, M)
    e = (1.0 - M) * S
    r = M * D
    distortion = float(np.sum(np.abs(e) ** 2))
    residual = float(np.sum(np.abs(r) ** 2))
    # S - M X = e - r
    cross = float(np.sum(-2.0 * np.real(e * np.conj(r))))
    return distortion, residual, cross


def complex_mse(clean_spec, noise_spec, mask) -> float:
    S, D, M = _values(clean_spec), _values(noise_spec), _values(mask)
    return float(np.sum(np.abs(S - M * (S + D)) ** 2))

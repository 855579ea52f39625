"""Objective scores: shadow-filtered NA/SA, SDR and SI-SDR (all in dB)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, NoSpeechError, ShapeError
from .losses import SI_SDR_CAP_DB, si_sdr_db
from .spectral import ComplexSpectrogram, GainMask, Waveform

ATTENUATION_CAP_DB = 100.0
SDR_CAP_DB = 100.0
ACTIVITY_THRESHOLD_DB = -40.0


def _vals(x):
    return x.values if hasattr(x, "values") else np.asarray(x)


def _ratio_db(num: float, den: float, cap: float) -> float:
    if den <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(num / den))


def noise_attenuation(noise_spec: ComplexSpectrogram, mask: GainMask) -> float:
    """``10 log10(sum|D|^2 / sum|M D|^2)``; 100 dB when nothing survives the mask."""
    D, M = _vals(noise_spec), _vals(mask)
    if D.shape != M.shape:
        raise ShapeError(f"noise {D.shape} vs mask {M.shape}")
    p = np.abs(D) ** 2
    return _ratio_db(float(np.sum(p)), float(np.sum(M * M * p)), ATTENUATION_CAP_DB)


def speech_active_frames(clean_spec, threshold_db: float = ACTIVITY_THRESHOLD_DB) -> np.ndarray:
    """Frames whose energy is within ``threshold_db`` of the loudest frame."""
    e = np.sum(np.abs(_vals(clean_spec)) ** 2, axis=1)
    peak = float(np.max(e)) if e.size else 0.0
    if peak <= 0.0:
        return np.zeros(e.shape, dtype=bool)
    return e > peak * 10.0 ** (threshold_db / 10.0)


def speech_attenuation(clean_spec: ComplexSpectrogram, mask: GainMask,
                       threshold_db: float = ACTIVITY_THRESHOLD_DB) -> float:
    S, M = _vals(clean_spec), _vals(mask)
    if S.shape != M.shape:
        raise ShapeError(f"clean {S.shape} vs mask {M.shape}")
    active = speech_active_frames(S, threshold_db)
    if not active.any():
        raise NoSpeechError("no speech-active frames")
    p = np.abs(S[active]) ** 2
    return _ratio_db(float(np.sum(p)), float(np.sum(M[active] ** 2 * p)), ATTENUATION_CAP_DB)


def _samples(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def sdr(clean_wave: Waveform, enhanced_wave: Waveform) -> float:
    s, e = _samples(clean_wave), _samples(enhanced_wave)
    if s.size != e.size:
        raise ShapeError(f"reference has {s.size} samples, estimate {e.size}")
    ss = float(s @ s)
    if ss == 0.0:
        raise DegenerateSignalError("reference signal has zero energy")
    err = s - e
    return _ratio_db(ss, float(err @ err), SDR_CAP_DB)


def si_sdr_metric(clean_wave: Waveform, enhanced_wave: Waveform) -> float:
    return si_sdr_db(_samples(clean_wave), _samples(enhanced_wave), SI_SDR_CAP_DB)


@dataclass(frozen=True)
class Scores:
    na: float
    sa: float
    sdr: float
    si_sdr: float


def score_utterance(clean_spec: ComplexSpectrogram, noise_spec: ComplexSpectrogram,
                    mask: GainMask, clean_wave: Waveform, enhanced_wave: Waveform) -> Scores:
    return Scores(
        na=noise_attenuation(noise_spec, mask),
        sa=speech_attenuation(clean_spec, mask),
        sdr=sdr(clean_wave, enhanced_wave),
        si_sdr=si_sdr_metric(clean_wave, enhanced_wave),
    )

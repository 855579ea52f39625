"""Time-frequency plumbing: waveforms, STFT analysis/synthesis and masking.

Conventions:

* forward DFT is unnormalized (``np.fft.rfft``), inverse carries ``1/fft_len``;
* frame ``l`` starts at sample ``l * hop``; the signal is zero-padded at the
  tail only, so the first and last ``frame_len - hop`` samples are "edge"
  samples whose overlap-add envelope is incomplete;
* synthesis divides the overlap-add by the summed analysis*synthesis window
  envelope, floored so that edge samples are never blown up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptySignalError, InvalidConfigError, ShapeError

# envelope floor, relative to the interior COLA constant
_ENVELOPE_FLOOR = 0.1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "samples", _readonly(x))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate)


class Window(str, Enum):
    HANN = "hann"
    SQRT_HANN = "sqrt_hann"


def make_window(kind: Window | str, n: int) -> np.ndarray:
    """Periodic window of length ``n``."""
    kind = Window(kind)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if kind is Window.HANN:
        return hann
    return np.sqrt(hann)


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    hop: int = 256
    fft_len: int = 512
    window: Window = Window.SQRT_HANN

    def __post_init__(self):
        object.__setattr__(self, "window", Window(self.window))
        if not 0 < self.hop <= self.frame_len <= self.fft_len:
            raise InvalidConfigError(
                f"need 0 < hop <= frame_len <= fft_len, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_len={self.fft_len}"
            )
        sums = self._overlap_sums()
        if np.ptp(sums) > 1e-10 * np.max(sums):
            raise InvalidConfigError(
                f"{self.window.value} window with frame_len={self.frame_len}, "
                f"hop={self.hop} violates constant overlap-add"
            )

    @classmethod
    def for_rate(cls, sample_rate: int, frame_ms: float = 32.0, window="sqrt_hann") -> "StftConfig":
        """32 ms frames with 50% overlap at the given rate."""
        n = int(round(sample_rate * frame_ms / 1000.0))
        n += n % 2
        return cls(frame_len=n, hop=n // 2, fft_len=n, window=window)

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def analysis_window(self) -> np.ndarray:
        return make_window(self.window, self.frame_len)

    synthesis_window = analysis_window

    def _overlap_sums(self) -> np.ndarray:
        w2 = self.analysis_window * self.synthesis_window
        n_over = math.ceil(self.frame_len / self.hop)
        padded = np.zeros(n_over * self.hop)
        padded[: self.frame_len] = w2
        return padded.reshape(n_over, self.hop).sum(axis=0)

    @property
    def cola_constant(self) -> float:
        return float(np.mean(self._overlap_sums()))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise EmptySignalError(
                f"signal of {n_samples} samples is shorter than one frame ({self.frame_len})"
            )
        return -(-(n_samples - self.frame_len) // self.hop) + 1

    def padded_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_len

    def interior(self, n_samples: int) -> slice:
        """Samples whose overlap-add envelope is complete."""
        edge = self.frame_len - self.hop
        return slice(edge, max(edge, n_samples - edge))

    def to_dict(self) -> dict:
        return {
            "frame_len": self.frame_len,
            "hop": self.hop,
            "fft_len": self.fft_len,
            "window": self.window.value,
        }


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """``values[l, k]`` is bin ``k`` of frame ``l``; ``length`` is the source signal length."""

    values: np.ndarray
    config: StftConfig
    length: int
    sample_rate: int = 16000

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[1] != self.config.n_bins:
            raise ShapeError(f"expected (L, {self.config.n_bins}) values, got {v.shape}")
        if v.shape[0] != self.config.n_frames(self.length):
            raise ShapeError(f"{v.shape[0]} frames inconsistent with length {self.length}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def magnitude(self) -> "MagnitudeSpectrogram":
        return MagnitudeSpectrogram(np.abs(self.values), self.config)

    def with_values(self, values) -> "ComplexSpectrogram":
        return ComplexSpectrogram(values, self.config, self.length, self.sample_rate)


@dataclass(frozen=True, eq=False)
class MagnitudeSpectrogram:
    values: np.ndarray
    config: StftConfig | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"magnitude spectrogram must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("magnitudes must be finite and nonnegative")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class GainMask:
    values: np.ndarray = field()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def constant(cls, value: float, shape) -> "GainMask":
        return cls(np.full(shape, float(value)))


def _frame(x: np.ndarray, config: StftConfig, n_frames: int) -> np.ndarray:
    idx = np.arange(config.frame_len)[None, :] + config.hop * np.arange(n_frames)[:, None]
    return x[idx]


def _envelope(config: StftConfig, n_frames: int) -> np.ndarray:
    w2 = config.analysis_window * config.synthesis_window
    env = np.zeros(config.padded_length(n_frames))
    for l in range(n_frames):
        env[l * config.hop : l * config.hop + config.frame_len] += w2
    return np.maximum(env, _ENVELOPE_FLOOR * config.cola_constant)


def stft(wave: Waveform, config: StftConfig | None = None) -> ComplexSpectrogram:
    config = config or StftConfig.for_rate(wave.sample_rate)
    n = len(wave)
    L = config.n_frames(n)
    x = np.zeros(config.padded_length(L))
    x[:n] = wave.samples
    frames = _frame(x, config, L) * config.analysis_window
    values = np.fft.rfft(frames, n=config.fft_len, axis=1)
    return ComplexSpectrogram(values, config, n, wave.sample_rate)


def istft(spec: ComplexSpectrogram) -> Waveform:
    config = spec.config
    L = spec.shape[0]
    frames = np.fft.irfft(spec.values, n=config.fft_len, axis=1)[:, : config.frame_len]
    frames = frames * config.synthesis_window
    out = np.zeros(config.padded_length(L))
    for l in range(L):
        out[l * config.hop : l * config.hop + config.frame_len] += frames[l]
    out /= _envelope(config, L)
    return Waveform(out[: spec.length], spec.sample_rate)


def istft_adjoint(grad_wave: Waveform | np.ndarray, config: StftConfig, length: int | None = None) -> ComplexSpectrogram:
    """Adjoint of :func:`istft` under the real inner product on (Re, Im).

    Pulls a gradient with respect to the synthesized waveform back to a
    gradient with respect to the spectrogram that produced it.
    """
    if isinstance(grad_wave, Waveform):
        g, rate = grad_wave.samples, grad_wave.sample_rate
    else:
        g, rate = np.asarray(grad_wave, dtype=np.float64), 16000
    if g.ndim != 1:
        raise ShapeError("gradient waveform must be 1-D")
    if length is not None and g.size != length:
        raise ShapeError(f"gradient has {g.size} samples, synthesis produces {length}")
    n = g.size
    L = config.n_frames(n)
    padded = np.zeros(config.padded_length(L))
    padded[:n] = g
    padded /= _envelope(config, L)
    frames = _frame(padded, config, L) * config.synthesis_window
    values = np.fft.rfft(frames, n=config.fft_len, axis=1)
    # irfft counts interior bins twice (Hermitian mirror) and DC/Nyquist once
    weight = np.full(config.n_bins, 2.0)
    weight[0] = 1.0
    if config.fft_len % 2 == 0:
        weight[-1] = 1.0
    values *= weight / config.fft_len
    return ComplexSpectrogram(values, config, n, rate)


def apply_mask(noisy: ComplexSpectrogram, mask: GainMask) -> ComplexSpectrogram:
    """Scale every bin by the mask, keeping the noisy phase."""
    if noisy.shape != mask.shape:
        raise ShapeError(f"spectrogram {noisy.shape} vs mask {mask.shape}")
    return noisy.with_values(noisy.values * mask.values)

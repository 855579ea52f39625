"""16-bit PCM mono WAV input/output."""

from __future__ import annotations

import os
import wave

import numpy as np

from .errors import AudioIOError, UnsupportedWavError, WavFormatError
from .spectral import Waveform

FULL_SCALE = 32767


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and quantize to int16."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.round(x * FULL_SCALE).astype("<i2")


def from_pcm16(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float64) / FULL_SCALE


def write_pcm16(path, pcm: np.ndarray, sample_rate: int) -> None:
    try:
        # open the file first: a failed wave.open(path) leaves a half-built writer behind
        with open(os.fspath(path), "wb") as raw, wave.open(raw, "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(int(sample_rate))
            fh.writeframes(np.asarray(pcm, dtype="<i2").tobytes())
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


def read_pcm16(path) -> tuple[np.ndarray, int]:
    try:
        fh = wave.open(os.fspath(path), "rb")
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc
    except (wave.Error, EOFError) as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedWavError(f"{path}: only PCM is supported ({msg})") from exc
        raise WavFormatError(f"{path}: not a RIFF/WAVE file ({msg or 'empty'})") from exc
    with fh:
        if fh.getnchannels() != 1:
            raise UnsupportedWavError(f"{path}: {fh.getnchannels()} channels, expected mono")
        if fh.getsampwidth() != 2:
            raise UnsupportedWavError(f"{path}: {8 * fh.getsampwidth()}-bit samples, expected 16-bit")
        rate = fh.getframerate()
        data = fh.readframes(fh.getnframes())
    return np.frombuffer(data, dtype="<i2").copy(), rate


def write_wav(path, wave_: Waveform) -> None:
    write_pcm16(path, to_pcm16(wave_.samples), wave_.sample_rate)


def read_wav(path) -> Waveform:
    pcm, rate = read_pcm16(path)
    return Waveform(from_pcm16(pcm), rate)

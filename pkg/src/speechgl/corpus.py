"""Synthetic desk-scale corpus: speech-like signals, noises, SNR mixing, dataset builds.

Manifest format (TOML)::

    sample_rate = 16000
    duration_s = 2.5          # defaults for every mix, overridable per entry
    leading_pause_s = 0.5

    [splits]
    train = [
      { id = "train-000", speech_seed = 1, noise_kind = "white", seed = 5001, snr_db = -5.0 },
      ...
    ]

A built dataset directory holds ``manifest.toml`` (verbatim copy),
``index.csv`` (one row per utterance) and ``<split>/<id>.{clean,noise,noisy}.wav``.
Stored triples satisfy ``noisy == clean + noise`` exactly on the int16 grid.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DatasetError, DegenerateSignalError, InvalidConfigError
from .spectral import Waveform
from .wavio import read_pcm16, from_pcm16, to_pcm16, write_pcm16

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_SAMPLE_RATE = 16000
PEAK_LEVEL = 0.5
# joint rescale applied to a stored triple whose mix would exceed this peak
STORE_PEAK = 0.95
ACTIVITY_FRAME_S = 0.032
MIN_SILENT_SHARE = 1.0 / 3.0
ACTIVITY_THRESHOLD_DB = -40.0
INDEX_FIELDS = ["id", "split", "snr_db", "noise_kind", "noise_seed", "speech_seed",
                "duration_s", "leading_pause_s", "store_gain"]


class NoiseKind(str, Enum):
    WHITE = "white"
    PINK = "pink"
    MODULATED = "modulated"
    BABBLE = "multitone-babble"


@dataclass(frozen=True)
class MixSpec:
    id: str
    snr_db: float
    noise_kind: NoiseKind
    seed: int
    speech_seed: int
    duration_s: float = 2.5
    leading_pause_s: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))
        if self.duration_s <= 0:
            raise InvalidConfigError(f"{self.id}: duration_s must be > 0")
        if self.leading_pause_s < 0:
            raise InvalidConfigError(f"{self.id}: leading_pause_s must be >= 0")


# ---------------------------------------------------------------------------
# generators


def _smooth_track(rng, n: int, fs: int, lo: float, hi: float, rate_hz: float) -> np.ndarray:
    """Random curve in [lo, hi] with knots every 1/rate_hz seconds, cosine-interpolated."""
    step = max(1, int(fs / rate_hz))
    n_knots = n // step + 2
    knots = rng.uniform(lo, hi, n_knots)
    t = np.arange(n) / step
    i = t.astype(int)
    frac = 0.5 - 0.5 * np.cos(np.pi * (t - i))
    return knots[i] * (1.0 - frac) + knots[i + 1] * frac


def _syllable_envelope(rng, n: int, fs: int) -> np.ndarray:
    """Words made of raised-cosine syllables, separated by silent pauses.

    Redrawn until at least a third of the samples are silent.
    """
    while True:
        env = _draw_envelope(rng, n, fs)
        if np.mean(env == 0.0) >= MIN_SILENT_SHARE:
            return env


def _draw_envelope(rng, n: int, fs: int) -> np.ndarray:
    env = np.zeros(n)
    pos = 0
    while pos < n:
        word_end = min(n, pos + int(rng.uniform(0.25, 0.6) * fs))
        while pos < word_end:
            syl = int(rng.uniform(0.12, 0.25) * fs)
            seg = min(syl, word_end - pos)
            shape = np.sin(np.pi * (np.arange(seg) + 0.5) / syl) ** 0.7
            env[pos : pos + seg] = shape * rng.uniform(0.5, 1.0)
            pos += seg
        pos += int(rng.uniform(0.22, 0.45) * fs)
    return env


MAX_F0_HZ = 300.0


def harmonic_count(sample_rate: int) -> int:
    """Largest partial count keeping every harmonic of a 300 Hz F0 below 0.45 * sample_rate."""
    return int(math.ceil(0.45 * sample_rate / MAX_F0_HZ)) - 1


def synth_speech(seed: int, duration_s: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Voiced-speech stand-in: a gliding harmonic complex through moving formants.

    Partials stay below 0.45 * sample_rate for any fundamental in [100, 300] Hz.
    """
    if duration_s < 1.0:
        raise InvalidConfigError("synth_speech needs duration_s >= 1")
    fs = int(sample_rate)
    n = int(round(duration_s * fs))
    rng = np.random.default_rng([seed, 0x5EEC])
    base = rng.uniform(110.0, 240.0)
    f0 = np.clip(base * _smooth_track(rng, n, fs, 0.8, 1.25, 3.0), 100.0, MAX_F0_HZ)
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    n_harm = harmonic_count(fs)
    formants = [
        (_smooth_track(rng, n, fs, 300.0, 900.0, 5.0), 90.0),
        (_smooth_track(rng, n, fs, 900.0, 2400.0, 5.0), 140.0),
        (_smooth_track(rng, n, fs, 2400.0, 3500.0, 4.0), 220.0),
    ]
    out = np.zeros(n)
    for h in range(1, n_harm + 1):
        f = h * f0
        amp = 0.02 * (1000.0 / (f + 1000.0))
        for centre, bw in formants:
            amp = amp + 1.0 / (1.0 + ((f - centre) / bw) ** 2) * (1000.0 / (centre + 500.0))
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    out *= _syllable_envelope(rng, n, fs)
    peak = np.max(np.abs(out))
    return Waveform(out * (PEAK_LEVEL / peak), fs)


def _unit_rms(x: np.ndarray) -> np.ndarray:
    return x / math.sqrt(float(np.mean(x * x)))


def synth_noise(kind: NoiseKind | str, seed: int, duration_s: float,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Unit-RMS noise of the given kind (white noise is raw N(0, 1))."""
    try:
        kind = NoiseKind(kind)
    except ValueError:
        raise InvalidConfigError(f"unknown noise kind {kind!r}") from None
    fs = int(sample_rate)
    n = int(round(duration_s * fs))
    rng = np.random.default_rng([seed, 0x0015E])
    if kind is NoiseKind.WHITE:
        return Waveform(rng.standard_normal(n), fs)
    if kind is NoiseKind.PINK:
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / fs)
        shape = np.zeros_like(f)
        shape[1:] = 1.0 / np.sqrt(f[1:])
        return Waveform(_unit_rms(np.fft.irfft(spec * shape, n=n)), fs)
    if kind is NoiseKind.MODULATED:
        t = np.arange(n) / fs
        am = 1.0 + 0.8 * np.sin(2.0 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
        return Waveform(_unit_rms(rng.standard_normal(n) * am), fs)
    streams = rng.integers(0, 2**31, size=8)
    total = sum(synth_speech(int(s), max(duration_s, 1.0), fs).samples[:n] for s in streams)
    return Waveform(_unit_rms(total), fs)


# ---------------------------------------------------------------------------
# mixing


def active_samples(speech: np.ndarray, sample_rate: int,
                   threshold_db: float = ACTIVITY_THRESHOLD_DB) -> np.ndarray:
    """Boolean per-sample mask of speech-active frames (non-overlapping 32 ms)."""
    flen = max(1, int(round(ACTIVITY_FRAME_S * sample_rate)))
    n_frames = -(-speech.size // flen)
    padded = np.zeros(n_frames * flen)
    padded[: speech.size] = speech
    e = np.sum(padded.reshape(n_frames, flen) ** 2, axis=1)
    peak = float(e.max())
    active = e > peak * 10.0 ** (threshold_db / 10.0) if peak > 0 else np.zeros(n_frames, bool)
    return np.repeat(active, flen)[: speech.size]


def active_power(speech: np.ndarray, sample_rate: int) -> float:
    act = active_samples(speech, sample_rate)
    return float(np.mean(speech[act] ** 2)) if act.any() else 0.0


def measure_snr(speech: Waveform, noise: Waveform) -> float:
    return 10.0 * math.log10(active_power(speech.samples, speech.sample_rate) /
                             float(np.mean(noise.samples**2)))


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float) -> tuple[Waveform, Waveform]:
    """Scale the noise so active-speech power over noise power equals ``snr_db``.

    Returns ``(noisy, scaled_noise)``; the noise is trimmed to the speech length.
    """
    if speech.sample_rate != noise.sample_rate:
        raise InvalidConfigError("speech and noise sample rates differ")
    if len(noise) < len(speech):
        raise InvalidConfigError("noise is shorter than speech")
    s = speech.samples
    d = noise.samples[: s.size]
    ps = active_power(s, speech.sample_rate)
    pd = float(np.mean(d * d))
    if ps == 0.0 or pd == 0.0:
        raise DegenerateSignalError("speech and noise must both carry energy")
    scale = 0.0 if snr_db == math.inf else math.sqrt(ps / (pd * 10.0 ** (snr_db / 10.0)))
    scaled = d * scale
    return Waveform(s + scaled, speech.sample_rate), Waveform(scaled, speech.sample_rate)


def synth_mix(mix: MixSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> tuple[Waveform, Waveform, Waveform]:
    """Float (clean, scaled noise, noisy) for one manifest entry."""
    fs = int(sample_rate)
    pause = int(round(mix.leading_pause_s * fs))
    speech = synth_speech(mix.speech_seed, mix.duration_s - mix.leading_pause_s, fs)
    clean = Waveform(np.concatenate([np.zeros(pause), speech.samples]), fs)
    noise = synth_noise(mix.noise_kind, mix.seed, len(clean) / fs, fs)
    noisy, scaled = mix_at_snr(clean, noise, mix.snr_db)
    return clean, scaled, noisy


def quantize_triple(clean: Waveform, noise: Waveform) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """int16 (clean, noise, noisy) with ``noisy == clean + noise`` exactly.

    The pair is jointly attenuated when the mix would clip; the SNR is kept.
    """
    peak = float(np.max(np.abs(clean.samples + noise.samples)))
    gain = min(1.0, STORE_PEAK / peak) if peak > 0 else 1.0
    c = to_pcm16(clean.samples * gain).astype(np.int32)
    d = to_pcm16(noise.samples * gain).astype(np.int32)
    x = c + d
    if np.any(np.abs(x) > 32767):
        raise DatasetError("quantized mix exceeds int16 range")
    return c.astype("<i2"), d.astype("<i2"), x.astype("<i2"), gain


# ---------------------------------------------------------------------------
# manifests and datasets


@dataclass(frozen=True)
class Manifest:
    sample_rate: int
    splits: dict[str, list[MixSpec]]
    text: str = ""

    def all_mixes(self):
        for split, mixes in self.splits.items():
            for mix in mixes:
                yield split, mix


def parse_manifest(text: str) -> Manifest:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise DatasetError(f"manifest is not valid TOML: {exc}") from exc
    defaults = {k: doc[k] for k in ("duration_s", "leading_pause_s") if k in doc}
    splits = {}
    seen = set()
    for name, entries in doc.get("splits", {}).items():
        mixes = []
        for entry in entries:
            try:
                mix = MixSpec(**{**defaults, **entry})
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"bad manifest entry {entry}: {exc}") from exc
            if mix.id in seen:
                raise DatasetError(f"duplicate utterance id {mix.id!r}")
            seen.add(mix.id)
            mixes.append(mix)
        splits[name] = mixes
    if not splits:
        raise DatasetError("manifest defines no splits")
    return Manifest(int(doc.get("sample_rate", DEFAULT_SAMPLE_RATE)), splits, text)


def load_manifest(path) -> Manifest:
    if str(path) == "desk":
        return parse_manifest(desk_manifest_text())
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text)


def desk_manifest_text() -> str:
    return resources.files("speechgl").joinpath("data/desk_manifest.toml").read_text()


def build_dataset(manifest: Manifest, out_dir) -> Path:
    """Synthesize every manifest entry to ``out_dir``; reruns are byte-identical."""
    out = Path(out_dir)
    rows = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for split, mix in manifest.all_mixes():
            clean, noise, _ = synth_mix(mix, manifest.sample_rate)
            c, d, x, gain = quantize_triple(clean, noise)
            (out / split).mkdir(exist_ok=True)
            for tag, pcm in (("clean", c), ("noise", d), ("noisy", x)):
                write_pcm16(out / split / f"{mix.id}.{tag}.wav", pcm, manifest.sample_rate)
            row = asdict(mix)
            row.update(split=split, noise_kind=mix.noise_kind.value, noise_seed=mix.seed,
                       store_gain=repr(gain))
            rows.append({k: row[k] for k in INDEX_FIELDS})
        (out / "manifest.toml").write_text(manifest.text)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=INDEX_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        (out / "index.csv").write_text(buf.getvalue())
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out}: {exc}") from exc
    return out


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    split: str
    snr_db: float
    noise_kind: str
    clean: Waveform
    noise: Waveform
    noisy: Waveform


def load_split(dataset_dir, split: str) -> list[Utterance]:
    root = Path(dataset_dir)
    index = root / "index.csv"
    if not index.exists():
        raise DatasetError(f"{root} has no index.csv (not a built dataset)")
    with index.open(newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["split"] == split]
    if not rows:
        raise DatasetError(f"split {split!r} is empty or missing in {root}")
    utts = []
    for r in rows:
        waves = {}
        for tag in ("clean", "noise", "noisy"):
            path = root / split / f"{r['id']}.{tag}.wav"
            if not path.exists():
                raise DatasetError(f"missing {path}")
            pcm, rate = read_pcm16(path)
            waves[tag] = Waveform(from_pcm16(pcm), rate)
        utts.append(Utterance(r["id"], split, float(r["snr_db"]), r["noise_kind"], **waves))
    return utts


def default_data_root() -> Path:
    return Path(os.environ.get("SPEECHGL_DATA_ROOT", "data"))

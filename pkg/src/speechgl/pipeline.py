"""End-to-end glue: experiment configs, enhancement modes, evaluation and sweeps.

Experiment config (TOML), shared by ``train`` and ``eval --sweep``::

    dataset = "data/desk"        # default: $SPEECHGL_DATA_ROOT/desk
    out_dir = "runs/gl"
    train_split = "train"
    eval_split = "test"

    [stft]
    frame_len = 512
    hop = 256
    fft_len = 512
    window = "sqrt_hann"

    [model]
    context = 5
    hidden_sizes = [256, 256]
    activation = "elu"

    [train]
    epochs = 30
    batch_size = 4
    learning_rate = 1e-3
    seed = 0

    [loss]
    kind = "gl"                  # gl | cl | mse | tmse | sisdr
    gamma = 2.0
    alpha = 1.0
    mu = 1.0
    beta0_db = -20.0             # -inf gives beta0 = 0

    [sweep]                      # only read by eval --sweep
    gamma = [2.0]
    beta0_db = [-10.0, -20.0, -30.0]
    mu = [1.0]
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Utterance, default_data_root, load_split
from .errors import InvalidConfigError, SpeechGLError
from .estimators import GainParams, a_priori_snr, parametric_gain, wiener_gain
from .losses import LossParams, db_to_amplitude
from .metrics import Scores, score_utterance, sdr
from .model import MaskNet, TrainConfig, TrainItem, TrainResult, load_checkpoint, train
from .spectral import ComplexSpectrogram, GainMask, StftConfig, Waveform, apply_mask, istft, stft

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

REPORT_FIELDS = ["id", "snr_db", "noise_kind", "NA", "SA", "SDR", "SI-SDR"]
SWEEP_FIELDS = ["gamma", "beta0_db", "mu", "NA", "SA", "SDR", "SI-SDR", "final_loss"]
LOSS_LOG_FIELDS = ["epoch", "loss"]
AGGREGATE_ID = "mean"


@dataclass(frozen=True)
class ModelConfig:
    context: int = 5
    hidden_sizes: tuple[int, ...] = (256, 256)
    activation: str = "elu"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Path = field(default_factory=lambda: default_data_root() / "desk")
    out_dir: Path = Path("runs/default")
    train_split: str = "train"
    eval_split: str = "test"
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    beta0_db: float = -20.0
    sweep: dict = field(default_factory=dict)

    def with_loss(self, **changes) -> "ExperimentConfig":
        """Copy with loss parameters replaced; ``beta0_db`` is accepted in dB."""
        beta0_db = changes.pop("beta0_db", self.beta0_db)
        lp = self.train.loss_params
        lp = replace(lp, **changes, beta0=db_to_amplitude(beta0_db))
        return replace(self, train=replace(self.train, loss_params=lp), beta0_db=beta0_db)


_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "seed"}


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        loss = dict(doc.get("loss", {}))
        kind = loss.pop("kind", "gl")
        beta0_db = float(loss.pop("beta0_db", -20.0))
        unknown = set(loss) - {"gamma", "alpha", "mu"}
        if unknown:
            raise InvalidConfigError(f"unknown [loss] keys: {sorted(unknown)}")
        lp = LossParams.from_db(beta0_db=beta0_db, **loss)
        tr = dict(doc.get("train", {}))
        unknown = set(tr) - _TRAIN_KEYS
        if unknown:
            raise InvalidConfigError(f"unknown [train] keys: {sorted(unknown)}")
        train_cfg = TrainConfig(loss=kind, loss_params=lp, **tr)
        model = ModelConfig(**doc.get("model", {}))
        model = replace(model, hidden_sizes=tuple(model.hidden_sizes))
        kwargs = {}
        if "dataset" in doc:
            kwargs["dataset"] = Path(doc["dataset"])
        if "out_dir" in doc:
            kwargs["out_dir"] = Path(doc["out_dir"])
        for key in ("train_split", "eval_split"):
            if key in doc:
                kwargs[key] = doc[key]
        return ExperimentConfig(
            stft=StftConfig(**doc.get("stft", {})),
            model=model,
            train=train_cfg,
            beta0_db=beta0_db,
            sweep=dict(doc.get("sweep", {})),
            **kwargs,
        )
    except TypeError as exc:
        raise InvalidConfigError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfigError(f"{path}: invalid TOML: {exc}") from exc


# ---------------------------------------------------------------------------
# data preparation


@dataclass(frozen=True, eq=False)
class PreparedUtterance:
    utt: Utterance
    noisy: ComplexSpectrogram
    clean: ComplexSpectrogram
    noise: ComplexSpectrogram

    def as_train_item(self) -> TrainItem:
        return TrainItem(self.noisy, self.clean, self.noise, self.utt.clean)


def prepare(utts: Iterable[Utterance], config: StftConfig) -> list[PreparedUtterance]:
    return [
        PreparedUtterance(u, stft(u.noisy, config), stft(u.clean, config), stft(u.noise, config))
        for u in utts
    ]


# ---------------------------------------------------------------------------
# masks

MaskFn = Callable[[PreparedUtterance], GainMask]


def oracle_mask_fn(mode: str, mu: float = 1.0, gamma: float = 2.0, alpha: float = 1.0) -> MaskFn:
    """Mask from oracle clean/noise spectra: ``wiener``, ``parametric`` or ``identity``."""
    if mode == "identity":
        return lambda p: GainMask.constant(1.0, p.noisy.shape)
    if mode == "wiener":
        def fn(p):
            return wiener_gain(a_priori_snr(p.clean.magnitude(), p.noise.magnitude()), mu)
        return fn
    if mode == "parametric":
        params = GainParams(mu=mu, gamma=gamma, alpha=alpha)

        def fn(p):
            return parametric_gain(a_priori_snr(p.clean.magnitude(), p.noise.magnitude()), params)
        return fn
    raise InvalidConfigError(f"unknown oracle mode {mode!r}")


def model_mask_fn(net: MaskNet) -> MaskFn:
    return lambda p: net.predict(p.noisy.magnitude())


def resolve_mode(mode: str, mu=1.0, gamma=2.0, alpha=1.0) -> tuple[MaskFn, bool]:
    """Mask function for a CLI mode string, and whether it needs oracle components."""
    if mode.startswith("model:"):
        return model_mask_fn(load_checkpoint(mode.split(":", 1)[1])), False
    return oracle_mask_fn(mode, mu, gamma, alpha), mode != "identity"


def enhance(noisy_spec: ComplexSpectrogram, mask: GainMask) -> Waveform:
    return istft(apply_mask(noisy_spec, mask))


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalRow:
    id: str
    snr_db: float
    noise_kind: str
    scores: Scores
    sdr_noisy: float

    def as_dict(self) -> dict:
        s = self.scores
        return {"id": self.id, "snr_db": self.snr_db, "noise_kind": self.noise_kind,
                "NA": s.na, "SA": s.sa, "SDR": s.sdr, "SI-SDR": s.si_sdr}


def evaluate(prepared: Sequence[PreparedUtterance], mask_fn: MaskFn) -> list[EvalRow]:
    rows = []
    for p in prepared:
        mask = mask_fn(p)
        enhanced = enhance(p.noisy, mask)
        scores = score_utterance(p.clean, p.noise, mask, p.utt.clean, enhanced)
        rows.append(EvalRow(p.utt.id, p.utt.snr_db, p.utt.noise_kind, scores,
                            sdr(p.utt.clean, p.utt.noisy)))
    return rows


def aggregate(rows: Sequence[EvalRow]) -> Scores:
    return Scores(
        na=float(np.mean([r.scores.na for r in rows])),
        sa=float(np.mean([r.scores.sa for r in rows])),
        sdr=float(np.mean([r.scores.sdr for r in rows])),
        si_sdr=float(np.mean([r.scores.si_sdr for r in rows])),
    )


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def _csv_text(fieldnames, rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in fieldnames})
    return buf.getvalue()


def report_csv(rows: Sequence[EvalRow]) -> str:
    agg = aggregate(rows)
    mean = {"id": AGGREGATE_ID, "snr_db": float(np.mean([r.snr_db for r in rows])), "noise_kind": "all",
            "NA": agg.na, "SA": agg.sa, "SDR": agg.sdr, "SI-SDR": agg.si_sdr}
    return _csv_text(REPORT_FIELDS, [*(r.as_dict() for r in rows), mean])


def loss_log_csv(history: Sequence[float]) -> str:
    return _csv_text(LOSS_LOG_FIELDS, ({"epoch": i, "loss": repr(v)} for i, v in enumerate(history)))


# ---------------------------------------------------------------------------
# training runs


def new_net(cfg: ExperimentConfig) -> MaskNet:
    m = cfg.model
    return MaskNet.create(cfg.stft.n_bins, m.context, m.hidden_sizes, m.activation, seed=cfg.train.seed)


def train_on(cfg: ExperimentConfig, prepared: Sequence[PreparedUtterance],
             on_epoch=None) -> TrainResult:
    items = [p.as_train_item() for p in prepared]
    return train(new_net(cfg), items, cfg.train, on_epoch=on_epoch)


def load_prepared(cfg: ExperimentConfig, split: str) -> list[PreparedUtterance]:
    return prepare(load_split(cfg.dataset, split), cfg.stft)


@dataclass(frozen=True)
class SweepPoint:
    gamma: float
    beta0_db: float
    mu: float
    scores: Scores
    final_loss: float

    def as_dict(self) -> dict:
        s = self.scores
        return {"gamma": self.gamma, "beta0_db": self.beta0_db, "mu": self.mu,
                "NA": s.na, "SA": s.sa, "SDR": s.sdr, "SI-SDR": s.si_sdr,
                "final_loss": self.final_loss}


def sweep_grid(cfg: ExperimentConfig) -> list[tuple[float, float, float]]:
    lp = cfg.train.loss_params
    gammas = cfg.sweep.get("gamma", [lp.gamma])
    betas = cfg.sweep.get("beta0_db", [cfg.beta0_db])
    mus = cfg.sweep.get("mu", [lp.mu])
    return [(float(g), float(b), float(m)) for g in gammas for b in betas for m in mus]


def run_sweep(cfg: ExperimentConfig, train_set: Sequence[PreparedUtterance],
              eval_set: Sequence[PreparedUtterance], log=None) -> list[SweepPoint]:
    """Train one model per (gamma, beta0_db, mu) grid point and score it on ``eval_set``."""
    points = []
    for gamma, beta0_db, mu in sweep_grid(cfg):
        run_cfg = cfg.with_loss(gamma=gamma, mu=mu, beta0_db=beta0_db)
        result = train_on(run_cfg, train_set)
        scores = aggregate(evaluate(eval_set, model_mask_fn(result.net)))
        point = SweepPoint(gamma, beta0_db, mu, scores, result.history[-1] if result.history else math.nan)
        if log:
            log(point)
        points.append(point)
    return points


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    return _csv_text(SWEEP_FIELDS, (p.as_dict() for p in points))


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SpeechGLError(f"cannot create {p}: {exc}") from exc
    return p

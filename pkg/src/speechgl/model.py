"""Causal per-frame mask estimator with hand-written backprop and Adam.

The network maps a stack of the current and ``context - 1`` previous
log-compressed noisy magnitude frames to one sigmoid gain per bin.  Nothing
later than frame ``l`` reaches the prediction for frame ``l``.

Checkpoint layout (``.npz``, no pickles)::

    format_version   int64 scalar, currently 1
    config_json      uint8 bytes of a JSON object: context, n_bins,
                     hidden_sizes, activation, optional metadata
                     (the CLI stores the STFT settings there)
    feature_mean     (context * n_bins,) input standardization offset
    feature_std      (context * n_bins,) input standardization scale
    W{i}, b{i}       layer i weights (fan_in, fan_out) and biases (fan_out,)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidConfigError, ShapeError, SpeechGLError
from .losses import (
    LossParams,
    LossResult,
    loss_components,
    loss_generalized,
    loss_mse_magnitude,
    loss_si_sdr,
    loss_time_mse,
)
from .spectral import ComplexSpectrogram, GainMask, Waveform, apply_mask

CHECKPOINT_VERSION = 1
LOSS_KINDS = ("gl", "cl", "mse", "tmse", "sisdr")
_MASK_EPS = 1e-12


def features(noisy_mag, context: int) -> np.ndarray:
    """Rows ``[log1p|X|_{l-context+1}, ..., log1p|X|_l]``, zero before frame 0."""
    if context < 1:
        raise InvalidConfigError("context must be >= 1")
    X = noisy_mag.values if hasattr(noisy_mag, "values") else np.asarray(noisy_mag)
    X = np.log1p(np.abs(X))
    L, K = X.shape
    padded = np.vstack([np.zeros((context - 1, K)), X])
    return np.hstack([padded[j : j + L] for j in range(context)])


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(np.float64)


_ACTIVATIONS = {"elu": (_elu, _elu_grad), "relu": (_relu, _relu_grad)}


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MaskNet:
    n_bins: int
    context: int = 5
    hidden_sizes: tuple[int, ...] = (256, 256)
    activation: str = "elu"
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.activation not in _ACTIVATIONS:
            raise InvalidConfigError(f"unknown activation {self.activation!r}")
        if self.context < 1 or self.n_bins < 1:
            raise InvalidConfigError("context and n_bins must be positive")
        d = self.input_dim
        if self.feature_mean is None:
            self.feature_mean = np.zeros(d)
        if self.feature_std is None:
            self.feature_std = np.ones(d)

    @property
    def input_dim(self) -> int:
        return self.context * self.n_bins

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.n_bins]

    @classmethod
    def create(cls, n_bins: int, context: int = 5, hidden_sizes: Sequence[int] = (256, 256),
               activation: str = "elu", seed: int = 0) -> "MaskNet":
        net = cls(n_bins, context, tuple(hidden_sizes), activation)
        rng = np.random.default_rng(seed)
        sizes = net.layer_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            # He init for hidden layers; small output layer so masks start near 0.5
            std = (0.1 if last else math.sqrt(2.0)) / math.sqrt(fan_in)
            net.weights.append(rng.normal(0.0, std, (fan_in, fan_out)))
            net.biases.append(np.zeros(fan_out))
        return net

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def copy(self) -> "MaskNet":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            feature_mean=self.feature_mean.copy(),
            feature_std=self.feature_std.copy(),
        )

    def fit_normalization(self, feature_mats: Sequence[np.ndarray]) -> None:
        allf = np.vstack(feature_mats)
        self.feature_mean = allf.mean(axis=0)
        self.feature_std = np.maximum(allf.std(axis=0), 1e-3)

    def config_dict(self) -> dict:
        return {
            "context": self.context,
            "n_bins": self.n_bins,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
        }

    def predict(self, noisy_mag) -> GainMask:
        mask, _ = forward(self, features(noisy_mag, self.context))
        return GainMask(mask)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    output: np.ndarray


def forward(net: MaskNet, feats: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Mask rows for each feature row, plus the activations needed by :func:`backward`."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != net.input_dim:
        raise ShapeError(f"expected (L, {net.input_dim}) features, got {feats.shape}")
    act, _ = _ACTIVATIONS[net.activation]
    h = (feats - net.feature_mean) / net.feature_std
    inputs, pre = [], []
    n_layers = len(net.weights)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = act(z) if i < n_layers - 1 else sigmoid(z)
    mask = np.clip(h, _MASK_EPS, 1.0 - _MASK_EPS)
    return mask, ForwardCache(inputs, pre, h)


def backward(net: MaskNet, cache: ForwardCache, grad_mask: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients ``[dW0, db0, dW1, db1, ...]`` given d(loss)/d(mask)."""
    g = np.asarray(grad_mask, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ShapeError(f"grad {g.shape} vs mask {cache.output.shape}")
    _, act_grad = _ACTIVATIONS[net.activation]
    s = cache.output
    delta = g * s * (1.0 - s)
    n = len(net.weights)
    d_w: list[np.ndarray] = [None] * n
    d_b: list[np.ndarray] = [None] * n
    for i in reversed(range(n)):
        d_w[i] = cache.inputs[i].T @ delta
        d_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * act_grad(cache.pre_acts[i - 1])
    return [g for pair in zip(d_w, d_b) for g in pair]


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = "gl"
    loss_params: LossParams = field(default_factory=LossParams)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise InvalidConfigError("learning_rate must be >= 0")
        if self.loss not in LOSS_KINDS:
            raise InvalidConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


@dataclass(frozen=True, eq=False)
class TrainItem:
    noisy: ComplexSpectrogram
    clean: ComplexSpectrogram
    noise: ComplexSpectrogram
    clean_wave: Waveform
    noisy_mag: np.ndarray = field(init=False)
    clean_mag: np.ndarray = field(init=False)
    noise_mag: np.ndarray = field(init=False)

    def __post_init__(self):
        if not (self.noisy.shape == self.clean.shape == self.noise.shape):
            raise ShapeError("noisy/clean/noise spectrogram shapes differ")
        for name, spec in (("noisy_mag", self.noisy), ("clean_mag", self.clean), ("noise_mag", self.noise)):
            object.__setattr__(self, name, np.abs(spec.values))


def evaluate_loss(kind: str, params: LossParams, item: TrainItem, mask: np.ndarray) -> LossResult:
    if kind == "gl":
        return loss_generalized(item.clean_mag, item.noise_mag, mask, params)
    if kind == "cl":
        return loss_components(item.clean_mag, item.noise_mag, mask, params.mu)
    if kind == "mse":
        return loss_mse_magnitude(item.clean_mag, item.noisy_mag, mask)
    enhanced = apply_mask(item.noisy, GainMask(mask))
    if kind == "tmse":
        return loss_time_mse(item.clean_wave, enhanced, item.noisy)
    if kind == "sisdr":
        return loss_si_sdr(item.clean_wave, enhanced, item.noisy)
    raise InvalidConfigError(f"unknown loss {kind!r}")


def loss_and_grads(net: MaskNet, item: TrainItem, kind: str, params: LossParams,
                   feats: np.ndarray | None = None) -> tuple[float, list[np.ndarray]]:
    if feats is None:
        feats = features(item.noisy_mag, net.context)
    mask, cache = forward(net, feats)
    res = evaluate_loss(kind, params, item, mask)
    return res.value, backward(net, cache, res.grad_mask)


@dataclass
class TrainResult:
    net: MaskNet
    history: list[float]


def train(net: MaskNet, dataset: Sequence[TrainItem], config: TrainConfig,
          fit_normalization: bool = True,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Whole-utterance minibatch Adam training.

    ``history[e]`` is the mean per-utterance loss seen during epoch ``e``
    (each utterance scored just before the update it contributes to).
    Bit-reproducible for a fixed (seed, config, data).
    """
    if not dataset:
        raise SpeechGLError("training dataset is empty")
    net = net.copy()
    feats = [features(item.noisy_mag, net.context) for item in dataset]
    if fit_normalization:
        net.fit_normalization(feats)
    rng = np.random.default_rng(config.seed)
    params = net.params()
    state = AdamState.zeros_like(params)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            total = [np.zeros_like(p) for p in params]
            for idx in batch:
                value, grads = loss_and_grads(net, dataset[idx], config.loss, config.loss_params, feats[idx])
                losses.append(value)
                for acc, g in zip(total, grads):
                    acc += g
            total = [g / len(batch) for g in total]
            params, state = adam_step(params, total, state, config)
            net.set_params(params)
        history.append(float(np.mean(losses)))
        if not math.isfinite(history[-1]):
            raise SpeechGLError(f"training diverged at epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return TrainResult(net, history)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: MaskNet, path, metadata: dict | None = None) -> None:
    """Write ``net``; ``metadata`` (JSON-serializable) rides along under ``config_json["metadata"]``."""
    config = net.config_dict()
    if metadata:
        config["metadata"] = metadata
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "config_json": np.frombuffer(json.dumps(config, sort_keys=True).encode(), dtype=np.uint8),
        "feature_mean": net.feature_mean,
        "feature_std": net.feature_std,
    }
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def checkpoint_metadata(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as data:
            return json.loads(bytes(data["config_json"]).decode()).get("metadata", {})
    except (OSError, KeyError, ValueError) as exc:
        raise SpeechGLError(f"cannot load checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> MaskNet:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise SpeechGLError(f"unsupported checkpoint version {version}")
            cfg = json.loads(bytes(data["config_json"]).decode())
            n_layers = len(cfg["hidden_sizes"]) + 1
            net = MaskNet(
                n_bins=cfg["n_bins"],
                context=cfg["context"],
                hidden_sizes=tuple(cfg["hidden_sizes"]),
                activation=cfg["activation"],
                weights=[data[f"W{i}"].copy() for i in range(n_layers)],
                biases=[data[f"b{i}"].copy() for i in range(n_layers)],
                feature_mean=data["feature_mean"].copy(),
                feature_std=data["feature_std"].copy(),
            )
    except (OSError, KeyError, ValueError) as exc:
        raise SpeechGLError(f"cannot load checkpoint {path}: {exc}") from exc
    return net

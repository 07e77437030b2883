"""Beam inference: traces, datasets, a small MLP classifier and its training.

An eMBB vehicle's best beam is predicted from the quantized angular report of
its paired URLLC neighbor, taken `horizon` TTIs earlier (horizon 1 means the
same TTI).  One model is trained per horizon with minibatch cross-entropy and
Adam, all in float64 numpy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .channel import LinkField, advance_fading, fading_ar_coefficient, init_fading
from .errors import ConfigError, ContractError, DomainError
from .phy import AngularCsi, Codebook, beam_gain, dft_codebook, optimal_beam, quantize_gain_profile
from .scenario import ScenarioConfig, Slice, advance_mobility, associate, build_scenario, substream

CHECKPOINT_MAGIC = b"VSLBEAM1"
CHECKPOINT_VERSION = 1


class BeamForecast(NamedTuple):
    """A beam choice plus the per-block gain estimate backing it."""

    beam: int
    rb_gains: np.ndarray  # (B,) linear beamforming gain estimate per block


class MlpPredictor:
    """Runtime adapter: quantized neighbor report in, beam forecast out.

    The model only ranks beams, so the absolute gain estimate is anchored to
    the reporting neighbor's peak gain and taken flat across blocks.
    """

    def __init__(self, model: "MlpModel", num_rb: int):
        self.model = model
        self.num_rb = num_rb

    def predict(self, vehicle_id: int, csi: AngularCsi, anchor_gain: float) -> BeamForecast:
        x = csi.levels_quantized.astype(float) / (csi.levels - 1)
        probs = self.model.forward(x[None, :])[0]
        beam = int(np.argmax(probs))
        return BeamForecast(beam=beam, rb_gains=np.full(self.num_rb, float(anchor_gain)))


class OracleBeamPredictor:
    """Test stand-in that answers with the vehicle's true optimum.

    Binds to a running engine and reads the exact gain profile the perfect-
    CSI path would use, so inferred-mode scheduling reproduces perfect-mode
    grids exactly.
    """

    def __init__(self):
        self._engine = None

    def bind_engine(self, engine) -> None:
        self._engine = engine

    def predict(self, vehicle_id: int, csi: AngularCsi, anchor_gain: float) -> BeamForecast:
        if self._engine is None:
            raise ContractError("oracle predictor is not bound to an engine")
        gains = self._engine.current_profile(vehicle_id)
        beam = int(np.argmax(gains))
        return BeamForecast(beam=beam, rb_gains=self._engine.current_rb_gains(vehicle_id, beam))


# ---------------------------------------------------------------------------
# Traces and datasets
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Per-TTI angular reports and eMBB beam labels from a scenario roll-out.

    Exact eMBB gain profiles are kept only from `gains_start` on (the tail
    used for evaluation) to bound memory.
    """

    features: np.ndarray      # (T, V, n_tx) uint8 quantized profiles
    peaks: np.ndarray         # (T, V) float64 peak linear gain per report
    labels: np.ndarray        # (T, E) uint16 best beam per eMBB vehicle
    embb_ids: np.ndarray      # (E,) vehicle ids in label column order
    pair_ids: np.ndarray      # (E,) paired URLLC vehicle id per column
    gains_start: int
    embb_gains: np.ndarray    # (T - gains_start, E, n_tx) float32 exact profiles
    config: ScenarioConfig

    @property
    def ttis(self) -> int:
        return self.features.shape[0]


def generate_trace(config: ScenarioConfig, ttis: int, gains_margin: int = 8) -> Trace:
    """Roll the scenario forward and record reports, labels and tail gains.

    Mirrors the simulation engine's per-TTI ordering (move, associate, fade
    the scatterers, snapshot), so a trace and a run from the same seed see
    the same channel sequence.
    """
    if ttis < 1:
        raise ContractError("ttis must be >= 1")
    vehicles, geometry = build_scenario(config)
    codebook = dft_codebook(config.n_tx)
    field = LinkField(config, geometry, codebook.columns)
    fade_rng = substream(config.seed, "channel")
    fade_ar = fading_ar_coefficient(
        config.speed_kmh / 3.6, config.tti_s, config.wavelength_m
    )
    fading = init_fading(config.num_scatterers, fade_rng)

    embb = [v for v in vehicles if v.slice is Slice.EMBB]
    embb_ids = np.array([v.id for v in embb], dtype=np.int64)
    pair_ids = np.array(
        [-1 if v.paired_reporter is None else v.paired_reporter for v in embb],
        dtype=np.int64,
    )
    n_v, n_e = config.num_vehicles, len(embb)

    gains_start = max(0, int(ttis * 0.8) - gains_margin)
    features = np.zeros((ttis, n_v, config.n_tx), dtype=np.uint8)
    peaks = np.zeros((ttis, n_v))
    labels = np.zeros((ttis, n_e), dtype=np.uint16)
    embb_gains = np.zeros((ttis - gains_start, n_e, config.n_tx), dtype=np.float32)

    positions = np.stack([v.position_m for v in vehicles])
    for t in range(ttis):
        if t > 0:
            advance_mobility(vehicles, config.tti_s, geometry.road_length_m)
            associate(vehicles, geometry, config)
            if config.num_scatterers:
                fading = advance_fading(fading, fade_ar, fade_rng)
            positions = np.stack([v.position_m for v in vehicles])
        field.update(positions, fading)
        for v in vehicles:
            profile = field.profile(v.serving_rsu, v.id)
            features[t, v.id] = quantize_gain_profile(profile)
            peaks[t, v.id] = profile.max()
            if v.slice is Slice.EMBB:
                col = int(np.searchsorted(embb_ids, v.id))
                labels[t, col] = int(np.argmax(profile))
                if t >= gains_start:
                    embb_gains[t - gains_start, col] = profile
    return Trace(
        features=features, peaks=peaks, labels=labels, embb_ids=embb_ids,
        pair_ids=pair_ids, gains_start=gains_start, embb_gains=embb_gains,
        config=config,
    )


class TrainingSample(NamedTuple):
    features: np.ndarray  # (n_tx,) uint8
    label: int
    horizon: int


class Dataset(Sequence):
    """Chronologically split samples: input report at t, label at t+horizon-1."""

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, horizon: int,
                 train_fraction: float = 0.8):
        self.inputs = inputs
        self.labels = labels
        self.horizon = horizon
        self.n_train = int(len(inputs) * train_fraction)

    def __len__(self) -> int:
        return len(self.inputs)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(self.inputs[i], int(self.labels[i]), self.horizon)

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[: self.n_train], self.labels[: self.n_train]

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.n_train:], self.labels[self.n_train:]


def build_dataset(trace: Trace, horizon: int) -> Dataset:
    """Pair neighbor reports with future eMBB labels across the whole trace."""
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    if horizon > trace.ttis:
        raise ContractError("horizon exceeds trace length")
    if np.any(trace.pair_ids < 0):
        raise ConfigError("trace has an eMBB vehicle without a paired reporter")
    n_t = trace.ttis - horizon + 1
    # Rows stay in TTI-major order so the 80/20 split is chronological.
    inputs = trace.features[:n_t, trace.pair_ids, :]          # (n_t, E, n_tx)
    labels = trace.labels[horizon - 1: horizon - 1 + n_t, :]  # (n_t, E)
    n_e = inputs.shape[1]
    return Dataset(
        inputs.reshape(n_t * n_e, -1),
        labels.reshape(n_t * n_e).astype(np.int64),
        horizon,
        )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class MlpModel:
    """Fully connected ReLU network with a softmax head, float64 throughout."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases
        self.layer_sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        if len(layer_sizes) < 2:
            raise ContractError("need at least input and output sizes")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for a batch of inputs, (n, out)."""
        h = np.asarray(x, dtype=float)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        logits = h @ self.weights[-1] + self.biases[-1]
        return _softmax(logits)

    def predict_batch(self, levels: np.ndarray, quant_levels: int = 16) -> np.ndarray:
        """Beam indices for a batch of quantized reports."""
        x = np.asarray(levels, dtype=float) / (quant_levels - 1)
        return np.argmax(self.forward(x), axis=1)

    # Checkpoint format (little endian): 8-byte magic, uint32 version,
    # uint32 layer count, uint32 sizes, then per layer the weight matrix in
    # row-major float64 followed by the bias vector.
    def save(self, path: str | Path) -> None:
        path = Path(path)
        blob = bytearray()
        blob += CHECKPOINT_MAGIC
        blob += struct.pack("<II", CHECKPOINT_VERSION, len(self.layer_sizes))
        blob += struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes)
        for w, b in zip(self.weights, self.biases):
            blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(bytes(blob))
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        raw = Path(path).read_bytes()
        if raw[:8] != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint")
        version, n_layers = struct.unpack_from("<II", raw, 8)
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        sizes = struct.unpack_from(f"<{n_layers}I", raw, 16)
        offset = 16 + 4 * n_layers
        expected = offset + sum(
            8 * (fan_in * fan_out + fan_out)
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        )
        if len(raw) != expected:
            raise ConfigError(f"{path}: checkpoint size mismatch")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            n = fan_in * fan_out
            w = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(fan_in, fan_out)
            offset += 8 * n
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
            offset += 8 * fan_out
            weights.append(w.copy())
            biases.append(b.copy())
        if offset != len(raw):
            raise ConfigError(f"{path}: checkpoint size mismatch")
        return cls(weights, biases)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and gradients for one batch."""
    acts = [np.asarray(x, dtype=float)]
    pre = []
    h = acts[0]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    probs = _softmax(logits)
    n = len(y)
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    grad_w[-1] = acts[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    for layer in range(len(model.weights) - 2, -1, -1):
        delta = (delta @ model.weights[layer + 1].T) * (pre[layer] > 0)
        grad_w[layer] = acts[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
    return loss, grad_w, grad_b


@dataclass
class AdamState:
    """First/second moment estimates for every parameter tensor."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: list[np.ndarray], lr: float = 1e-4) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], lr=lr)

    def apply(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def train(
    model: MlpModel,
    dataset: Dataset,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    lr: float = 1e-4,
    quant_levels: int = 16,
) -> tuple[MlpModel, list[float]]:
    """Minibatch cross-entropy training on the chronological train split."""
    if epochs < 1 or batch_size < 1:
        raise ContractError("epochs and batch_size must be >= 1")
    levels, labels = dataset.train_arrays()
    if len(levels) == 0:
        raise ContractError("dataset has no training rows")
    x = levels.astype(float) / (quant_levels - 1)
    y = labels.astype(np.int64)
    params = model.weights + model.biases
    adam = AdamState.init(params, lr=lr)
    history = []
    for _ in range(epochs):
        perm = rng.permutation(len(x))
        epoch_losses = []
        for start in range(0, len(x), batch_size):
            idx = perm[start:start + batch_size]
            loss, grad_w, grad_b = loss_and_grads(model, x[idx], y[idx])
            adam.apply(params, grad_w + grad_b)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return model, history


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def beamforming_loss(predicted_beam: int, true_channel: np.ndarray, codebook: Codebook) -> float:
    """Relative gain shortfall of a predicted beam, in [0, 1].

    Zero when the prediction attains the best codebook gain; 1 when the
    predicted beam collects nothing.  A channel with no energy at all scores
    zero, since no beam choice could have done better.
    """
    if not (0 <= predicted_beam < codebook.size):
        raise DomainError(f"beam index {predicted_beam} outside codebook")
    best = beam_gain(true_channel, codebook.columns[:, optimal_beam(true_channel, codebook)])
    if best <= 0.0:
        return 0.0
    got = beam_gain(true_channel, codebook.columns[:, predicted_beam])
    return float(min(max(1.0 - got / best, 0.0), 1.0))


def _loss_from_profile(pred: np.ndarray, labels: np.ndarray, gains: np.ndarray) -> np.ndarray:
    best = gains[np.arange(len(gains)), labels]
    got = gains[np.arange(len(gains)), pred]
    with np.errstate(invalid="ignore", divide="ignore"):
        loss = 1.0 - np.where(best > 0, got / best, 1.0)
    loss[pred == labels] = 0.0
    return np.clip(loss, 0.0, 1.0)


def evaluate_horizons(
    models: dict[int, MlpModel],
    trace: Trace,
    horizons: Sequence[int] | None = None,
) -> dict[int, dict]:
    """Loss samples and exact-hit fraction per horizon on the test split."""
    if horizons is None:
        horizons = sorted(models)
    out = {}
    for h in horizons:
        model = models[h]
        ds = build_dataset(trace, h)
        levels, labels = ds.test_arrays()
        pred = model.predict_batch(levels)
        n_e = len(trace.embb_ids)
        rows = ds.n_train + np.arange(len(labels))
        label_t = rows // n_e + h - 1  # TTI index the label refers to
        if label_t.size and label_t.min() < trace.gains_start:
            raise ContractError("trace gains tail does not cover the test split")
        e_idx = rows % n_e
        gains = trace.embb_gains[label_t - trace.gains_start, e_idx, :]
        losses = _loss_from_profile(pred, labels, gains.astype(float))
        out[h] = {
            "losses": losses,
            "exact_fraction": float(np.mean(pred == labels)) if len(labels) else 0.0,
        }
    return out

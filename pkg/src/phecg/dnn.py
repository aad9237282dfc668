"""Dense ReLU/sigmoid network trained by mini-batch gradient descent.

Weights for layer ``l`` have shape ``(size[l+1], size[l])``; inputs are
batch-major, so a layer computes ``a @ W.T + b``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptCache, DivergenceError, ShapeError, VersionError

EPS = 1e-7
DEFAULT_HIDDEN = (256, 64)
MODEL_MAGIC = b"ECGM"
MODEL_VERSION = 1


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("parameter lists do not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if W.shape != want or b.shape != (want[0],):
                raise ShapeError(f"layer {l}: weight {W.shape} / bias {b.shape}, expected {want}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return MlpModel(list(self.layer_sizes), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.hidden_activation, self.output_activation)

    def parameters(self):
        """Flat list of parameter arrays (W0, b0, W1, b1, ...); views, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out


@dataclass
class TrainConfig:
    epochs: int = 50
    lr0: float = 0.001
    decay_rate: float = 0.95
    batch_size: int = 32
    patience: int = 10
    seed: int = 0
    min_delta: float = 1e-4
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay_rate must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([row[name] for row in self.rows], dtype=np.float64)

    def append(self, **row):
        self.rows.append({k: row[k] for k in HISTORY_COLUMNS})


# ---------------------------------------------------------------------------
# model

def init_model(layer_sizes, seed=0, hidden_activation="relu") -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in (layer_sizes or [])]
    if len(sizes) < 2:
        raise ConfigError("need at least an input and an output layer")
    if min(sizes) < 1:
        raise ConfigError("layer sizes must be >= 1")
    if sizes[-1] not in (1, 2):
        raise ConfigError("output layer must have 1 (screening) or 2 (RVH, RAE) units")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, hidden_activation)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"input width {x.shape[-1]} does not match model input {model.n_inputs}")
    return x, single


def forward(model: MlpModel, x):
    """Probabilities of shape (B, outputs) and the cache needed by ``backward``."""
    a, _ = _as_batch(model, x)
    activations, pre = [a], []
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = sigmoid(z) if l == last else np.maximum(z, 0.0)
        activations.append(a)
    return a, {"activations": activations, "pre": pre}


def predict(model: MlpModel, x):
    """Screening probability; a scalar (or 1-D per-condition vector) for a single input."""
    x, single = _as_batch(model, x)
    p, _ = forward(model, x)
    if single:
        p = p[0]
        return float(p[0]) if p.size == 1 else p
    return p[:, 0] if p.shape[1] == 1 else p


def hard_label(p):
    """Positive only strictly above 0.5."""
    return (np.asarray(p) > 0.5).astype(np.int64)


def bce_loss(probabilities, labels, eps=EPS) -> float:
    p = np.clip(np.asarray(probabilities, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64).reshape(p.shape)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(model: MlpModel, cache, labels):
    """Gradients of the mean BCE loss, as ``(dW list, db list)`` mirroring the parameters.

    The output delta is the logit-space gradient ``(p - y) / (B * outputs)``.
    """
    acts, pre = cache["activations"], cache["pre"]
    p = acts[-1]
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if (len(acts) != len(model.weights) + 1 or y.shape != p.shape
            or acts[0].shape[1] != model.n_inputs):
        raise ShapeError(f"labels {y.shape} do not match cached forward pass {p.shape}")
    delta = (p - y) / p.size
    dWs, dbs = [None] * len(model.weights), [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        dWs[l] = delta.T @ acts[l]
        dbs[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l]) * (pre[l - 1] > 0)
    return dWs, dbs


def lr_schedule(epoch, config: TrainConfig) -> float:
    return config.lr0 * config.decay_rate ** epoch


def accuracy_of(p, y):
    return float(np.mean(hard_label(p) == np.asarray(y).reshape(np.shape(p))))


def evaluate_model(model, X, y):
    p, _ = forward(model, X)
    return bce_loss(p, y), accuracy_of(p, y)


def _labels_2d(y):
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def train(X_train, y_train, X_val, y_val, config: TrainConfig = TrainConfig(),
          model: MlpModel | None = None, evaluate=evaluate_model):
    """Mini-batch gradient descent with exponential decay and early stopping.

    Training halts once validation loss has failed to improve by
    ``min_delta`` on more than ``patience`` consecutive epochs; the
    parameters with the lowest validation loss seen are returned.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_train, y_val = _labels_2d(y_train), _labels_2d(y_val)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ShapeError("train and validation sets must be nonempty")
    if X_train.shape[1] != X_val.shape[1]:
        raise ShapeError("train and validation inputs differ in width")
    if len(y_train) != len(X_train) or len(y_val) != len(X_val):
        raise ShapeError("labels and inputs differ in length")

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    if model is None:
        sizes = [X_train.shape[1], *config.hidden_sizes, y_train.shape[1]]
        model = init_model(sizes, seed=init_seed)
    rng = np.random.default_rng(shuffle_seed)
    n = len(X_train)
    # overflow shows up as a non-finite loss and is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _epochs(model, X_train, y_train, X_val, y_val, config, evaluate, rng, n)


def _epochs(model, X_train, y_train, X_val, y_val, config, evaluate, rng, n):
    history = TrainHistory()
    best_loss, best_model = math.inf, model.copy()
    target = math.inf
    stale = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, cache = forward(model, X_train[idx])
            dWs, dbs = backward(model, cache, y_train[idx])
            for W, b, dW, db in zip(model.weights, model.biases, dWs, dbs):
                W -= lr * dW
                b -= lr * db

        train_loss, train_acc = evaluate(model, X_train, y_train)
        val_loss, val_acc = evaluate(model, X_val, y_val)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(epoch + 1)
        history.append(epoch=epoch + 1, train_loss=train_loss, train_acc=train_acc,
                       val_loss=val_loss, val_acc=val_acc, lr=lr)

        if val_loss < best_loss:
            best_loss, best_model = val_loss, model.copy()
            history.best_epoch = epoch + 1
        if val_loss < target - config.min_delta:
            target, stale = val_loss, 0
        else:
            stale += 1
            if stale > config.patience:
                history.stopped_early = True
                break
    return best_model, history


# ---------------------------------------------------------------------------
# persistence

def history_to_csv(history: TrainHistory) -> str:
    """Epoch rows plus running best and running mean validation accuracy."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*HISTORY_COLUMNS, "best_val_acc", "mean_val_acc"])
    best, total = -math.inf, 0.0
    for i, row in enumerate(history.rows, start=1):
        best = max(best, row["val_acc"])
        total += row["val_acc"]
        writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]]
                        + [repr(best), repr(total / i)])
    return buf.getvalue()


def history_from_csv(text) -> TrainHistory:
    history = TrainHistory()
    for row in csv.DictReader(io.StringIO(text)):
        history.append(epoch=int(row["epoch"]),
                       **{k: float(row[k]) for k in HISTORY_COLUMNS[1:]})
    return history


_ECGM_HEAD = struct.Struct("<4sHI")


@dataclass
class ModelBundle:
    """A model plus what is needed to turn a raw record into its input."""

    model: MlpModel
    sampling_rate: int = 0
    include_demographics: bool = False
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None


def encode_model(bundle: ModelBundle) -> bytes:
    model = bundle.model
    parts = [_ECGM_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, len(model.layer_sizes)),
             np.array(model.layer_sizes, dtype="<u4").tobytes()]
    for W, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.asarray(b, dtype="<f8").tobytes())
    n_norm = 0 if bundle.norm_mean is None else len(bundle.norm_mean)
    parts.append(struct.pack("<IBI", int(bundle.sampling_rate), int(bundle.include_demographics), n_norm))
    if n_norm:
        parts.append(np.asarray(bundle.norm_mean, dtype="<f8").tobytes())
        parts.append(np.asarray(bundle.norm_std, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", _digest(body))


def _digest(body):
    return int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")


def decode_model(blob: bytes) -> ModelBundle:
    if len(blob) < _ECGM_HEAD.size + 8:
        raise CorruptCache("model file too short")
    magic, version, n_layers = _ECGM_HEAD.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise CorruptCache(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise VersionError(f"model version {version}, this build reads {MODEL_VERSION}")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if _digest(body) != stored:
        raise CorruptCache("checksum mismatch")
    try:
        offset = _ECGM_HEAD.size
        sizes = np.frombuffer(body, "<u4", n_layers, offset).astype(int).tolist()
        offset += 4 * n_layers
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = np.frombuffer(body, "<f8", fan_in * fan_out, offset).reshape(fan_out, fan_in)
            offset += 8 * W.size
            b = np.frombuffer(body, "<f8", fan_out, offset)
            offset += 8 * fan_out
            weights.append(W.astype(np.float64))
            biases.append(b.astype(np.float64))
        rate, demo, n_norm = struct.unpack_from("<IBI", body, offset)
        offset += struct.calcsize("<IBI")
        mean = std = None
        if n_norm:
            mean = np.frombuffer(body, "<f8", n_norm, offset).astype(np.float64)
            std = np.frombuffer(body, "<f8", n_norm, offset + 8 * n_norm).astype(np.float64)
            offset += 16 * n_norm
    except ValueError as exc:
        raise CorruptCache(f"truncated model payload: {exc}") from None
    if offset != len(body):
        raise CorruptCache("trailing bytes in model payload")
    return ModelBundle(MlpModel(sizes, weights, biases), rate, bool(demo), mean, std)


def save_model(bundle: ModelBundle, path):
    from .preprocess import atomic_write

    atomic_write(path, encode_model(bundle))


def load_model(path) -> ModelBundle:
    return decode_model(Path(path).read_bytes())


def config_fields():
    return [f.name for f in fields(TrainConfig)]

"""Feed-forward probing classifier.

One hidden ReLU layer mapping a pooled feature vector to viseme classes,
trained with Adam on softmax cross-entropy, with early stopping on the
validation loss. Forward and backward passes are written out in numpy so
every gradient can be checked against finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from viseme_scope.container import read_matrix, write_matrix
from viseme_scope.errors import ClassTooSmall, ConfigError, NonFiniteLoss, UnknownLabel
from viseme_scope.features import FeatureDataset

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")
MODEL_FORMAT = "viseme-scope-probe"
MODEL_VERSION = 1
TRAIN_LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "val_acc"]


@dataclass(frozen=True)
class ProbeConfig:
    input_dim: int | None = None
    hidden_units: int = 200
    classes: int = 14
    max_epochs: int = 200
    learning_rate: float = 0.001
    batch_size: int = 256
    patience: int = 10
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    standardize: bool = False
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.hidden_units < 1:
            raise ConfigError("hidden_units must be >= 1")
        if self.classes < 1:
            raise ConfigError("classes must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, max_epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.input_dim is not None and self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProbeConfig:
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ProbeModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    class_index: tuple[str, ...]
    # Per-dimension standardization fitted on the training split, if enabled.
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_index", tuple(self.class_index))
        if len(set(self.class_index)) != len(self.class_index):
            raise ConfigError(f"duplicate classes in {self.class_index}")
        if self.W2.shape[1] != len(self.class_index):
            raise ConfigError(
                f"{self.W2.shape[1]} output units for {len(self.class_index)} classes"
            )

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.W1.shape[1]

    def with_params(self, params: dict[str, np.ndarray]) -> ProbeModel:
        return replace(self, **params)

    def encode(self, labels: Sequence[str]) -> np.ndarray:
        lookup = {v: i for i, v in enumerate(self.class_index)}
        try:
            return np.array([lookup[v] for v in labels], dtype=np.int64)
        except KeyError as exc:
            raise UnknownLabel(exc.args[0]) from None


@dataclass(frozen=True, eq=False)
class ForwardCache:
    x: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.val_loss)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": range(1, self.epochs + 1),
                "train_loss": self.train_loss,
                "val_loss": self.val_loss,
                "val_acc": self.val_acc,
            },
            columns=TRAIN_LOG_COLUMNS,
        )


# =============================================================================
# Splits
# =============================================================================


def split_train_val(
    dataset: FeatureDataset, val_fraction: float, seed: int = 0
) -> tuple[FeatureDataset, FeatureDataset]:
    """Stratified split; each class sends round(fraction * n) records to the second part.

    Every class keeps at least one record on each side. Both parts keep the
    input record order.

    Raises:
        ClassTooSmall: a class has fewer than 2 records.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = defaultdict(list)
    for i, record in enumerate(dataset.records):
        by_class[record.viseme].append(i)
    held_out: list[int] = []
    for viseme in sorted(by_class):
        indices = by_class[viseme]
        if len(indices) < 2:
            raise ClassTooSmall(viseme, len(indices))
        n_val = min(len(indices) - 1, max(1, round(val_fraction * len(indices))))
        held_out.extend(indices[i] for i in rng.permutation(len(indices))[:n_val])
    held = set(held_out)
    train = [i for i in range(len(dataset)) if i not in held]
    return dataset.subset(train), dataset.subset(sorted(held))


# =============================================================================
# Network
# =============================================================================


def init_probe(input_dim: int, hidden_units: int, class_index: Sequence[str], seed: int) -> ProbeModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    n_classes = len(class_index)
    return ProbeModel(
        W1=glorot(input_dim, hidden_units),
        b1=np.zeros(hidden_units),
        W2=glorot(hidden_units, n_classes),
        b2=np.zeros(n_classes),
        class_index=tuple(class_index),
    )


def forward(model: ProbeModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """logits = max(0, x W1 + b1) W2 + b2, after the model's standardization."""
    x = np.asarray(x, dtype=np.float64)
    if model.mean is not None and model.scale is not None:
        x = (x - model.mean) / model.scale
    pre_hidden = x @ model.W1 + model.b1
    hidden = np.maximum(pre_hidden, 0.0)
    return hidden @ model.W2 + model.b2, ForwardCache(x, pre_hidden, hidden)


def backward(model: ProbeModel, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradient w.r.t. the logits."""
    dhidden = dlogits @ model.W2.T
    dhidden[cache.pre_hidden <= 0] = 0.0
    return {
        "W1": cache.x.T @ dhidden,
        "b1": dhidden.sum(axis=0),
        "W2": cache.hidden.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch = logits.shape[0]
    log_norm = logsumexp(logits, axis=1, keepdims=True)
    log_probs = logits - log_norm
    rows = np.arange(batch)
    loss = -float(log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / batch


# =============================================================================
# Optimizer
# =============================================================================


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    cfg: ProbeConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; ``t`` counts from 1."""
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m[name] / (1.0 - b1**t)
        v_hat = v[name] / (1.0 - b2**t)
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new_params, AdamState(m, v)


class EarlyStopping:
    """Stop once the validation loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int) -> None:
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when it is the new best."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


# =============================================================================
# Training and inference
# =============================================================================


def _class_index(train: FeatureDataset, val: FeatureDataset, cfg: ProbeConfig) -> tuple[str, ...]:
    index = tuple(sorted(set(train.labels()) | set(val.labels())))
    if len(index) != cfg.classes:
        raise ConfigError(f"config expects {cfg.classes} classes, data has {len(index)}")
    return index


def train_probe(
    train: FeatureDataset,
    val: FeatureDataset,
    cfg: ProbeConfig,
    class_index: Sequence[str] | None = None,
) -> tuple[ProbeModel, TrainTrace]:
    """Train a probe and return the parameters of the best validation epoch.

    ``class_index`` defaults to the sorted labels present in the data.

    Raises:
        NonFiniteLoss: the training or validation loss became NaN or infinite.
        UnknownLabel: a label is missing from ``class_index``.
    """
    cfg.validate()
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    if class_index is None:
        class_index = _class_index(train, val, cfg)
    elif len(class_index) != cfg.classes:
        raise ConfigError(f"config expects {cfg.classes} classes, got {len(class_index)}")

    x_train, x_val = train.matrix(), val.matrix()
    if cfg.input_dim is not None and x_train.shape[1] != cfg.input_dim:
        raise ConfigError(f"config expects input_dim {cfg.input_dim}, data has {x_train.shape[1]}")
    model = init_probe(x_train.shape[1], cfg.hidden_units, class_index, cfg.seed)
    if cfg.standardize:
        scale = x_train.std(axis=0)
        scale[scale == 0] = 1.0
        model = replace(model, mean=x_train.mean(axis=0), scale=scale)
    y_train, y_val = model.encode(train.labels()), model.encode(val.labels())

    rng = np.random.default_rng(cfg.seed + 1)
    params = model.params
    state = AdamState.zeros_like(params)
    best_params = params
    stopper = EarlyStopping(cfg.patience)
    trace = TrainTrace()
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(y_train))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            logits, cache = forward(model, x_train[batch])
            _, dlogits = cross_entropy(logits, y_train[batch])
            step += 1
            params, state = adam_step(params, backward(model, cache, dlogits), state, step, cfg)
            model = model.with_params(params)

        train_loss, _ = evaluate(model, x_train, y_train)
        val_loss, val_acc = evaluate(model, x_val, y_val)
        for loss in (train_loss, val_loss):
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
        trace.train_loss.append(train_loss)
        trace.val_loss.append(val_loss)
        trace.val_acc.append(val_acc)
        logger.debug("epoch %d: train %.4f val %.4f acc %.4f", epoch, train_loss, val_loss, val_acc)

        if stopper.update(epoch, val_loss):
            best_params = params
        if stopper.should_stop:
            trace.stopped_early = epoch < cfg.max_epochs
            break

    trace.best_epoch = stopper.best_epoch
    logger.info(
        "probe trained for %d epoch(s), best epoch %d (val loss %.4f)",
        trace.epochs, trace.best_epoch, stopper.best_loss,
    )
    return model.with_params(best_params), trace


def predict(model: ProbeModel, x: np.ndarray) -> list[str]:
    """Argmax class per row; ties go to the lowest class index."""
    logits, _ = forward(model, x)
    return [model.class_index[i] for i in np.argmax(logits, axis=1)]


def evaluate(model: ProbeModel, x: np.ndarray, labels: np.ndarray | Sequence[str]) -> tuple[float, float]:
    """Mean cross-entropy and accuracy on (x, labels)."""
    y = np.asarray(labels)
    if y.dtype.kind in "US":
        y = model.encode([str(v) for v in y])
    logits, _ = forward(model, x)
    loss, _ = cross_entropy(logits, y)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, accuracy


@dataclass(frozen=True, eq=False)
class ProbeRun:
    model: ProbeModel
    trace: TrainTrace
    test_true: list[str]
    test_pred: list[str]


def run_probe(dataset: FeatureDataset, cfg: ProbeConfig, class_index: Sequence[str] | None = None) -> ProbeRun:
    """Hold out a test split, train on the rest with a validation split, predict the test split.

    Raises:
        ClassTooSmall: a class has fewer than 3 records, one per split.
    """
    for viseme, count in sorted(dataset.class_counts.items()):
        if count < 3:
            raise ClassTooSmall(viseme, count, minimum=3)
    pool, test = split_train_val(dataset, cfg.test_fraction, cfg.seed)
    train, val = split_train_val(pool, cfg.val_fraction, cfg.seed + 1)
    if class_index is None:
        class_index = sorted(dataset.class_counts)
        cfg = replace(cfg, classes=len(class_index))
    model, trace = train_probe(train, val, cfg, class_index)
    return ProbeRun(model, trace, test.labels(), predict(model, test.matrix()))


# =============================================================================
# Model file
# =============================================================================


def save_probe(path: str | Path, model: ProbeModel, cfg: ProbeConfig) -> None:
    """JSON header line followed by EMB1 blobs W1, b1, W2, b2 (and mean, scale)."""
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_dim": model.input_dim,
        "hidden_units": model.hidden_units,
        "classes": len(model.class_index),
        "class_index": list(model.class_index),
        "standardized": model.mean is not None,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in PARAM_NAMES:
            write_matrix(f, getattr(model, name))
        if model.mean is not None and model.scale is not None:
            write_matrix(f, model.mean)
            write_matrix(f, model.scale)


def load_probe(path: str | Path) -> tuple[ProbeModel, ProbeConfig]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
            raise ConfigError(f"{path} is not a probe model file")
        blobs = {name: read_matrix(f).astype(np.float64) for name in PARAM_NAMES}
        mean = scale = None
        if header["standardized"]:
            mean = read_matrix(f).astype(np.float64)[0]
            scale = read_matrix(f).astype(np.float64)[0]
    model = ProbeModel(
        W1=blobs["W1"],
        b1=blobs["b1"][0],
        W2=blobs["W2"],
        b2=blobs["b2"][0],
        class_index=tuple(header["class_index"]),
        mean=mean,
        scale=scale,
    )
    return model, ProbeConfig.from_dict(header["config"])

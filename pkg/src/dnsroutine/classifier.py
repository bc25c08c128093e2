"""Feedforward bot classifier over normalized PSD vectors.

A small numpy MLP: ReLU hidden layers, sigmoid output, binary cross-entropy,
Adam, inverted dropout on hidden activations, and early stopping on a
stratified validation split.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (ArgumentError, CorruptModelError, ShapeMismatchError, TrainingError,
                     VersionMismatchError)
from .spectral import NormalizationScale, PsdVector

log = logging.getLogger(__name__)

MODEL_VERSION = 1
HIDDEN_LAYERS = (25, 55, 25)


@dataclass(frozen=True)
class TrainConfig:
    dropout_rate: float = 0.1
    patience_epochs: int = 5
    min_delta: float = 1e-4
    max_epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    validation_fraction: float = 0.1
    l2_first_layer: float = 0.0
    hidden_layers: tuple[int, ...] = HIDDEN_LAYERS
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ArgumentError("dropout_rate must be in [0, 1)")
        if not 0 < self.validation_fraction < 1:
            raise ArgumentError("validation_fraction must be in (0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience_epochs < 1:
            raise ArgumentError("max_epochs, batch_size and patience_epochs must be positive")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")
        if self.l2_first_layer < 0:
            raise ArgumentError("l2_first_layer must be non-negative")


@dataclass(eq=False)
class ModelParams:
    """Network weights plus the PSD normalization learned with them.

    ``weights[i]`` has shape ``(layer_sizes[i], layer_sizes[i + 1])``.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    scale: NormalizationScale
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise ShapeMismatchError(f"bad layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatchError("number of weight/bias arrays does not match layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise ShapeMismatchError(f"layer {i}: weight {w.shape} / bias {b.shape}, "
                                         f"expected {want} / ({want[1]},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ArgumentError(f"layer {i} has non-finite parameters")
        if len(self.scale) != self.layer_sizes[0]:
            raise ShapeMismatchError(f"scale length {len(self.scale)} != input size "
                                     f"{self.layer_sizes[0]}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layer_sizes, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.scale, dict(self.metadata))


def init_params(layer_sizes, scale: NormalizationScale, rng: np.random.Generator) -> ModelParams:
    """Fan-in scaled uniform weights (He), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(tuple(layer_sizes), weights, biases, scale)


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logits(model: ModelParams, x: np.ndarray) -> np.ndarray:
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[:, 0]


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Bot scores for a matrix of normalized PSD rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.input_size:
        raise ArgumentError(f"input has {x.shape[1]} features, model expects {model.input_size}")
    return _sigmoid(logits(model, x))


def forward(model: ModelParams, psd: PsdVector) -> float:
    """Score one normalized PSD; higher means more bot-like."""
    if not psd.normalized:
        raise ArgumentError("forward expects a normalized PSD")
    if len(psd) != model.input_size:
        raise ArgumentError(f"PSD length {len(psd)} != model input size {model.input_size}")
    return float(predict(model, psd.values[None, :])[0])


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed stably from logits."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_gradients(model: ModelParams, x: np.ndarray, y: np.ndarray,
                       dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                       l2_first_layer: float = 0.0):
    """Mean BCE and its gradients w.r.t. every weight and bias.

    With ``dropout_rate > 0`` hidden activations are masked and rescaled by
    ``1 / (1 - rate)`` so their expectation matches inference.
    """
    acts = [x]
    pre = []
    masks = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            if dropout_rate > 0:
                mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
            acts.append(h)
    z_out = pre[-1][:, 0]
    loss = bce_from_logits(z_out, y)
    if l2_first_layer:
        loss += 0.5 * l2_first_layer * float(np.sum(model.weights[0] ** 2))

    n = len(y)
    delta = ((_sigmoid(z_out) - y) / n)[:, None]
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    if l2_first_layer:
        grads_w[0] = grads_w[0] + l2_first_layer * model.weights[0]
    return loss, grads_w, grads_b


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator):
    """Index arrays (train, validation) keeping the class ratio."""
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        n_val = min(max(n_val, 1), len(idx) - 1) if len(idx) > 1 else 0
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


class _Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)


def train(x: np.ndarray, y: np.ndarray, scale: NormalizationScale,
          cfg: TrainConfig = TrainConfig()) -> ModelParams:
    """Fit the network on normalized PSD rows ``x`` with 0/1 labels ``y``.

    Returns the parameters of the epoch with the lowest validation loss.
    Training stops once the validation loss has not improved by more than
    ``cfg.min_delta`` for ``cfg.patience_epochs`` epochs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ArgumentError("x must be (examples, features) aligned with y")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ArgumentError("labels must be 0 or 1")
    counts = [int((y == c).sum()) for c in (0, 1)]
    if min(counts) == 0:
        raise TrainingError(f"training set has a single class (benign={counts[0]}, bot={counts[1]})")

    rng = np.random.default_rng(cfg.seed)
    tr, va = stratified_split(y, cfg.validation_fraction, rng)
    per_class_train = [int((y[tr] == c).sum()) for c in (0, 1)]
    per_class_val = [int((y[va] == c).sum()) for c in (0, 1)]
    if min(per_class_train) < 2 or min(per_class_val) < 1:
        raise TrainingError(f"too few examples per class after the validation split "
                            f"(train={per_class_train}, validation={per_class_val})")
    x_tr, y_tr, x_va, y_va = x[tr], y[tr], x[va], y[va]

    sizes = (x.shape[1], *cfg.hidden_layers, 1)
    model = init_params(sizes, scale, rng)
    params = model.weights + model.biases  # views: Adam updates the model in place
    opt = _Adam(params, cfg)

    best = model.copy()
    best_val = reference = math.inf
    wait = 0
    history = {"train_loss": [], "val_loss": []}
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(y_tr))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(model, x_tr[batch], y_tr[batch],
                                              cfg.dropout_rate, rng, cfg.l2_first_layer)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch + 1} "
                                    f"(learning_rate={cfg.learning_rate}, batch start {lo})")
            opt.step(params, gw + gb)
        train_loss = bce_from_logits(logits(model, x_tr), y_tr)
        val_loss = bce_from_logits(logits(model, x_va), y_va)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss after epoch {epoch + 1}: "
                                f"train={train_loss} val={val_loss}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = model.copy()
            best_epoch = epoch + 1
        if val_loss < reference - cfg.min_delta:
            reference = val_loss
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience_epochs:
                break
    best.metadata = {
        "seed": cfg.seed,
        "epochs_run": len(history["val_loss"]),
        "best_epoch": best_epoch,
        "final_train_loss": history["train_loss"][-1],
        "final_val_loss": history["val_loss"][-1],
        "best_val_loss": best_val,
        "history": history,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in cfg.__dict__.items()},
    }
    log.info("trained %d epochs, best validation loss %.5f at epoch %d",
             len(history["val_loss"]), best_val, best_epoch)
    return best


# -- model file -------------------------------------------------------------

def model_to_dict(model: ModelParams) -> dict:
    return {
        "version": MODEL_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scale": model.scale.per_frequency_max.tolist(),
        "metadata": model.metadata,
    }


def save_model(model: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, allow_nan=False)
        fh.write("\n")


def model_from_dict(doc: dict) -> ModelParams:
    if not isinstance(doc, dict):
        raise CorruptModelError("model document is not a JSON object")
    missing = {"version", "layer_sizes", "weights", "biases", "scale", "metadata"} - set(doc)
    if missing:
        raise CorruptModelError(f"model file lacks fields {sorted(missing)}")
    if doc["version"] != MODEL_VERSION:
        raise VersionMismatchError(f"model version {doc['version']!r}, expected {MODEL_VERSION}")
    try:
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        scale = NormalizationScale(np.array(doc["scale"], dtype=float))
    except (TypeError, ValueError) as exc:
        raise ShapeMismatchError(f"ragged or non-numeric parameter arrays: {exc}") from exc
    return ModelParams(tuple(doc["layer_sizes"]), weights, biases, scale, doc["metadata"])


def load_model(path) -> ModelParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not a valid model file ({exc})") from exc
    return model_from_dict(doc)

"""Training loop, optimizer, evaluation metrics, and dataset splitting.

Training is fully deterministic given (seed, config, data): parameter
init, per-epoch shuffling, and dropout all draw from one seeded Rng in a
fixed order, and gradients are accumulated in a fixed parameter order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoder import SequenceBatch
from .kernel import (DTYPE, NumericsError, Rng, ShapeError,
                     binary_cross_entropy, squared_error)
from .model import (TASK_CLASSIFICATION, TASK_REGRESSION, Model, ModelCache,
                    model_backward, model_forward, named_params)

logger = logging.getLogger(__name__)

RMSPROP_RHO = 0.9
RMSPROP_EPS = 1e-8
EVAL_CHUNK = 512


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 0.001
    seed: int = 0
    rho: float = RMSPROP_RHO
    eps: float = RMSPROP_EPS

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class Metrics:
    """Evaluation summary; fields not applicable to the task stay None."""

    accuracy: Optional[float] = None
    f_score: Optional[float] = None
    rmse: Optional[float] = None
    epoch_losses: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f_score": self.f_score,
                "rmse": self.rmse}


class RmsPropState:
    """Per-parameter accumulator of the squared-gradient moving average."""

    def __init__(self, params: Sequence[Tuple[str, np.ndarray]],
                 rho: float = RMSPROP_RHO, eps: float = RMSPROP_EPS):
        self.rho = float(rho)
        self.eps = float(eps)
        self.acc = {name: np.zeros_like(arr) for name, arr in params}


def rmsprop_step(params: Sequence[Tuple[str, np.ndarray]],
                 grads: Dict[str, np.ndarray], state: RmsPropState,
                 learning_rate: float) -> None:
    """In-place update: acc <- rho*acc + (1-rho)*g^2; p <- p - lr*g/sqrt(acc+eps)."""
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {p.shape}")
        a = state.acc[name]
        a *= state.rho
        a += (1.0 - state.rho) * g * g
        p -= learning_rate * g / np.sqrt(a + state.eps)


def dichotomize_hdrs(score: int) -> int:
    """Binary depression label: scores 0..7 -> 0, 8 and up -> 1."""
    score = int(score)
    if score < 0:
        raise ValueError(f"negative severity score {score}")
    return 0 if score <= 7 else 1


def temporal_split(samples: Sequence, ratio: float = 0.8):
    """Per-user chronological split: earliest floor(ratio*n) sessions train.

    Users with fewer than 2 sessions contribute everything to train (and
    are logged). The result is canonical: any permutation of the input
    yields the same (train, val) lists.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    by_user: Dict[str, list] = {}
    for s in samples:
        by_user.setdefault(s.user_id, []).append(s)
    train, val = [], []
    for user in sorted(by_user):
        sessions = sorted(by_user[user], key=lambda s: (s.start, s.end))
        if len(sessions) < 2:
            logger.info("user %s has %d session(s); all assigned to train",
                        user, len(sessions))
            train.extend(sessions)
            continue
        cut = int(math.floor(ratio * len(sessions)))
        train.extend(sessions[:cut])
        val.extend(sessions[cut:])
    return train, val


@dataclass
class EncodedDataset:
    """Per-view padded batches plus aligned labels, ready for the model."""

    views: List[SequenceBatch]
    labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx):
        return [v.take(idx) for v in self.views], self.labels[idx]

    def ablate_view(self, view_index: int) -> "EncodedDataset":
        """Copy with one view's values zeroed out (input masking)."""
        views = []
        for i, v in enumerate(self.views):
            if i == view_index:
                views.append(SequenceBatch(values=np.zeros_like(v.values),
                                           mask=v.mask, lengths=v.lengths))
            else:
                views.append(v)
        return EncodedDataset(views=views, labels=self.labels)


def _loss_and_grad(task: str, y: np.ndarray, labels: np.ndarray):
    if task == TASK_CLASSIFICATION:
        return binary_cross_entropy(y, labels)
    return squared_error(y, labels)


def _predict(model: Model, ds: EncodedDataset, chunk: int = EVAL_CHUNK):
    outputs = []
    for s in range(0, ds.n, chunk):
        idx = np.arange(s, min(s + chunk, ds.n))
        views, _ = ds.take(idx)
        y, _ = model_forward(model, views, train_mode=False)
        outputs.append(y)
    return np.concatenate(outputs, axis=0)


def classification_metrics(pred: np.ndarray, labels: np.ndarray) -> Metrics:
    """Accuracy plus F-score of the positive class (zero when undefined)."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    accuracy = float(np.mean(pred == labels))
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f_score = (2 * precision * recall / (precision + recall)
               if precision + recall > 0 else 0.0)
    return Metrics(accuracy=accuracy, f_score=f_score)


def evaluate(model: Model, ds: EncodedDataset, chunk: int = EVAL_CHUNK) -> Metrics:
    """Dropout-free metrics over a dataset.

    Classification: argmax decision (ties resolve to class 0), accuracy
    and positive-class F-score. Regression: root mean squared error.
    """
    if ds.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y = _predict(model, ds, chunk)
    if model.config.task == TASK_CLASSIFICATION:
        pred = np.argmax(y, axis=1)
        return classification_metrics(pred, ds.labels)
    rmse = float(np.sqrt(np.mean((y.reshape(-1) - ds.labels) ** 2)))
    return Metrics(rmse=rmse)


@dataclass
class TrainHistory:
    """Per-epoch series (aligned lists) and the final validation metrics."""

    columns: Dict[str, List[float]]
    final: Metrics


def train(model: Model, train_ds: EncodedDataset, val_ds: EncodedDataset,
          config: TrainConfig, rng: Rng,
          log_every: Optional[int] = None) -> TrainHistory:
    """Mini-batch training with per-epoch reshuffling and RMSProp updates.

    ``rng`` drives shuffling and dropout; pass the same stream used for
    parameter init to make the whole run a function of one seed. A
    non-finite loss aborts with a NumericsError naming epoch and batch.
    """
    if train_ds.n == 0:
        raise ValueError("training set is empty")
    if val_ds.n == 0:
        raise ValueError("validation set is empty")
    task = model.config.task
    params = named_params(model)
    state = RmsPropState(params, rho=config.rho, eps=config.eps)
    columns: Dict[str, List[float]] = {"epoch": [], "train_loss": []}
    if task == TASK_CLASSIFICATION:
        columns["val_accuracy"] = []
        columns["val_f_score"] = []
    else:
        columns["val_rmse"] = []
    n = train_ds.n
    final = Metrics()
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            views, labels = train_ds.take(idx)
            y, cache = model_forward(model, views, train_mode=True, rng=rng)
            loss, grad_y = _loss_and_grad(task, y, labels)
            if not np.isfinite(loss):
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch}, batch {b} "
                    f"(lr={config.learning_rate}, head={model.config.head})")
            grads = model_backward(model, cache, grad_y)
            rmsprop_step(params, grads, state, config.learning_rate)
            total += loss * len(idx)
        epoch_loss = total / n
        val = evaluate(model, val_ds)
        columns["epoch"].append(float(epoch))
        columns["train_loss"].append(epoch_loss)
        if task == TASK_CLASSIFICATION:
            columns["val_accuracy"].append(val.accuracy)
            columns["val_f_score"].append(val.f_score)
        else:
            columns["val_rmse"].append(val.rmse)
        final = val
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d: train_loss=%.6f val=%s", epoch, epoch_loss,
                        val.to_dict())
    final.epoch_losses = list(columns["train_loss"])
    return TrainHistory(columns=columns, final=final)

"""Deterministic seeded training loop with per-epoch metric logging and
checkpoint-epoch probes (deviation from the Bayes reference, decoded norm
scalars)."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .models import Classifier
from .synthetic import Dataset

__all__ = [
    "TrainConfig",
    "RunRecord",
    "TrainingDiverged",
    "train",
    "evaluate_accuracy",
    "sgd_step",
    "adam_step",
    "write_run_csv",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries epoch/batch context and grad norms."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None  # None trains full-batch
    seed: int = 0
    eval_epochs: tuple[int, ...] = ()
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0.0:
            raise ValueError("learning rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if any(e < 1 or e > self.epochs for e in self.eval_epochs):
            raise ValueError("eval_epochs must fall inside [1, epochs]")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class CheckpointProbe:
    bayes_deviation: float | None = None
    bayes_std_error: float | None = None
    p_decoded: float | None = None
    alpha_decoded: float | None = None


@dataclass
class RunRecord:
    """Per-epoch metric log plus per-checkpoint probes for one run."""

    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    checkpoints: dict[int, CheckpointProbe] = field(default_factory=dict)
    wall_time: float = 0.0
    config_hash: str = ""


def sgd_step(params, lr: float) -> None:
    """Plain gradient descent on each parameter's accumulated grad."""
    for p in params:
        p.values[...] -= lr * p.grad


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Adam with bias correction; moment buffers live on each parameter."""
    for p in params:
        state = p.state
        if "adam_m" not in state:
            state["adam_m"] = np.zeros_like(p.values)
            state["adam_v"] = np.zeros_like(p.values)
            state["adam_t"] = 0
        state["adam_t"] += 1
        t = state["adam_t"]
        g = p.grad
        state["adam_m"] = beta1 * state["adam_m"] + (1.0 - beta1) * g
        state["adam_v"] = beta2 * state["adam_v"] + (1.0 - beta2) * g * g
        m_hat = state["adam_m"] / (1.0 - beta1**t)
        v_hat = state["adam_v"] / (1.0 - beta2**t)
        p.values[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def evaluate_accuracy(classifier: Classifier, data) -> float:
    """Fraction of correct predictions; data is a Dataset or a
    (points, labels) pair."""
    if isinstance(data, Dataset):
        points, labels = data.points, data.labels
    else:
        points, labels = data
        points = np.asarray(points, dtype=np.float64)
        labels = np.asarray(labels)
    if len(points) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(classifier.predict(points) == labels))


def _grad_norms(classifier: Classifier) -> dict[str, float]:
    return {
        p.name: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
        for p in classifier.parameters()
    }


def _probe(classifier: Classifier, deviation_fn) -> CheckpointProbe:
    probe = CheckpointProbe()
    if deviation_fn is not None:
        probe.bayes_deviation, probe.bayes_std_error = deviation_fn(classifier)
    layer = classifier.norm_layer
    if layer is not None:
        probe.p_decoded = layer.order.decode()
        probe.alpha_decoded = layer.radius.decode()
    return probe


def train(classifier: Classifier, data: Dataset, cfg: TrainConfig,
          val_data: Dataset | None = None, deviation_fn=None,
          on_checkpoint=None) -> RunRecord:
    """Optimize the softmax loss over `data` for cfg.epochs epochs.

    Parameters update in place. At each epoch in cfg.eval_epochs the run
    records a probe (deviation estimate via `deviation_fn(classifier)`,
    decoded p and alpha) and invokes `on_checkpoint(epoch, classifier)`.
    Runs are bitwise reproducible given the model init seed, cfg.seed and
    the dataset.
    """
    if data.labels.max() >= classifier.spec.num_classes:
        raise ValueError("dataset labels exceed the classifier's class count")

    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config_hash=cfg.digest())
    params = classifier.parameters()
    n = len(data)
    batch_size = cfg.batch_size or n
    started = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch, labels = data.points[idx], data.labels[idx]
            tape = ad.Tape()
            try:
                logits, _, _ = classifier.forward(batch, tape=tape)
                loss = ad.softmax_cross_entropy(logits, labels)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise ad.NumericsError("non-finite loss")
                classifier.zero_grad()
                ad.backward(tape, loss)
            except ad.NumericsError as exc:
                raise TrainingDiverged(
                    f"aborted at epoch {epoch}, batch {start // batch_size}: "
                    f"{exc}; gradient norms {_grad_norms(classifier)}"
                ) from exc
            finally:
                tape.release()
            if cfg.optimizer == "adam":
                adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            else:
                sgd_step(params, cfg.lr)
            epoch_loss += loss_value * len(idx)

        record.epochs.append(epoch)
        record.train_loss.append(epoch_loss / n)
        record.train_acc.append(evaluate_accuracy(classifier, data))
        record.val_acc.append(
            evaluate_accuracy(classifier, val_data)
            if val_data is not None else float("nan"))

        if epoch in cfg.eval_epochs:
            record.checkpoints[epoch] = _probe(classifier, deviation_fn)
            if on_checkpoint is not None:
                on_checkpoint(epoch, classifier)

    record.wall_time = time.perf_counter() - started
    return record


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def write_run_csv(record: RunRecord, path) -> None:
    """Stream the record in the fixed column order; fields that do not
    apply at a given epoch stay empty."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("epoch,train_loss,train_acc,val_acc,"
                 "p_decoded,alpha_decoded,bayes_dev\n")
        for i, epoch in enumerate(record.epochs):
            probe = record.checkpoints.get(epoch)
            fields = [
                str(epoch),
                _fmt(record.train_loss[i]),
                _fmt(record.train_acc[i]),
                _fmt(record.val_acc[i]),
                _fmt(probe.p_decoded if probe else None),
                _fmt(probe.alpha_decoded if probe else None),
                _fmt(probe.bayes_deviation if probe else None),
            ]
            fh.write(",".join(fields) + "\n")

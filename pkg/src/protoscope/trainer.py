"""Minibatch SGD with a two-phase learning rate."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import LabeledDataset
from .errors import ConfigurationError, NonFiniteError, TrainingAbort
from .network import Model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr_phase1: float = 0.1
    lr_phase2: float = 0.05
    phase_split: int = 50
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if not (self.lr_phase1 > 0 and self.lr_phase2 > 0):
            raise ConfigurationError("learning rates must be positive")
        if not 0 <= self.phase_split <= self.epochs:
            raise ConfigurationError(f"phase_split must be in [0, epochs={self.epochs}]")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr_phase1 if epoch < self.phase_split else self.lr_phase2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "train_acc"])
            for e, (l, a) in enumerate(zip(self.loss, self.train_acc), start=1):
                w.writerow([e, repr(l), repr(a)])


def _check_compatible(model: Model, ds: LabeledDataset) -> None:
    if ds.k != model.spec.num_classes:
        raise ConfigurationError(f"dataset has {ds.k} classes, model expects {model.spec.num_classes}")
    if ds.p != model.spec.input_dim:
        raise ConfigurationError(f"dataset has {ds.p} features, model expects {model.spec.input_dim}")


def train(model: Model, ds: LabeledDataset, cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Fit ``model`` on ``ds``; the input model is left untouched.

    Per-epoch loss is the example-weighted mean of the minibatch losses seen
    during the epoch; accuracy is measured on the full set after the epoch.
    """
    _check_compatible(model, ds)
    out = model.copy()
    history = TrainHistory()
    rng = np.random.default_rng(cfg.seed)
    n = ds.n
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            params = out.parameter_tensors()
            try:
                loss = T.softmax_cross_entropy(out.logits(ds.inputs[idx], params), ds.labels[idx])
                loss.backward()
                updated = {name: out.params[name] - lr * p.grad for name, p in params.items()}
            except NonFiniteError as exc:
                raise TrainingAbort(
                    f"non-finite values at epoch {epoch + 1}, batch {start // cfg.batch_size + 1} "
                    f"(lr={lr}); the learning rate is probably too high: {exc}"
                ) from exc
            if not all(np.all(np.isfinite(v)) for v in updated.values()):
                raise TrainingAbort(f"parameters diverged at epoch {epoch + 1} (lr={lr})")
            out.params.update(updated)
            total += loss.item() * idx.size
        history.loss.append(total / n)
        history.train_acc.append(test_accuracy(out, ds))
    return out, history


def test_accuracy(model: Model, ds: LabeledDataset) -> float:
    """Fraction of rows whose argmax prediction equals the label."""
    if ds.n == 0:
        raise ConfigurationError("cannot score an empty dataset")
    _check_compatible(model, ds)
    return float(np.mean(model.predict(ds.inputs) == ds.labels))


test_accuracy.__test__ = False  # keep pytest from collecting it

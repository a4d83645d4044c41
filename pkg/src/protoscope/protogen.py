"""Synthesize class prototypes from a trained model alone.

Seed prototypes start from random inputs and descend the one-hot
cross-entropy of their class with fixed-length (normalized-gradient) steps
until the loss drops to ``delta_loss``. Core prototypes for class ``l``
start from the seed of every other class ``j`` and descend toward ``l``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, FormatError, StalledGradient
from .network import Model, forward_full
from .tensor import Tensor

STALL_NORM = 1e-12
INIT_DISTRIBUTIONS = ("standard-normal", "uniform01")
_NO_ORIGIN = 2**32 - 1  # PRNG stream key for seeds, which have no origin class


@dataclass(frozen=True)
class ProtoConfig:
    delta_loss: float = 0.01
    eta: float = 0.05
    max_iters: int = 2000
    init_distribution: str = "standard-normal"
    seed: int = 0

    def __post_init__(self):
        if not self.delta_loss > 0:
            raise ConfigurationError("delta_loss must be positive")
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.init_distribution not in INIT_DISTRIBUTIONS:
            raise ConfigurationError(
                f"init_distribution must be one of {INIT_DISTRIBUTIONS}, got {self.init_distribution!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prototype:
    input_vector: np.ndarray
    target_class: int
    origin_class: int | None
    final_loss: float
    iterations_used: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "target": self.target_class,
            "origin": self.origin_class,
            "converged": self.converged,
            "final_loss": self.final_loss,
            "iterations": self.iterations_used,
            "vector": self.input_vector.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Prototype:
        try:
            return cls(
                input_vector=np.array(d["vector"], dtype=np.float64),
                target_class=int(d["target"]),
                origin_class=None if d["origin"] is None else int(d["origin"]),
                final_loss=float(d["final_loss"]),
                iterations_used=int(d["iterations"]),
                converged=bool(d["converged"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed prototype entry: {exc}") from exc


@dataclass
class PrototypeSet:
    seeds: list[Prototype]
    cores: list[Prototype]
    metadata: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.seeds)

    def by_class(self, converged_only: bool = True) -> list[list[Prototype]]:
        """Seed followed by cores (ordered by origin) for each target class."""
        groups: list[list[Prototype]] = [[] for _ in range(self.k)]
        for proto in [*self.seeds, *self.cores]:
            if proto.converged or not converged_only:
                groups[proto.target_class].append(proto)
        return groups

    @property
    def n_unconverged(self) -> int:
        return sum(not p.converged for p in [*self.seeds, *self.cores])

    def check_complete(self) -> None:
        k = self.k
        if sorted(p.target_class for p in self.seeds) != list(range(k)):
            raise ConfigurationError("prototype set needs exactly one seed per class")
        pairs = sorted((p.target_class, p.origin_class) for p in self.cores)
        want = [(l, j) for l in range(k) for j in range(k) if j != l]
        if pairs != want:
            raise ConfigurationError("core prototypes must cover every (target, origin) pair once")

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "seeds": [p.to_dict() for p in self.seeds],
            "cores": [p.to_dict() for p in self.cores],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PrototypeSet:
        try:
            return cls(
                seeds=[Prototype.from_dict(d) for d in doc["seeds"]],
                cores=[Prototype.from_dict(d) for d in doc["cores"]],
                metadata=dict(doc.get("metadata", {})),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed prototype set: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n")

    @classmethod
    def load(cls, path) -> PrototypeSet:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc.msg})") from exc
        return cls.from_dict(doc)


def loss_and_input_grad(model: Model, m: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of class ``target`` at input ``m`` and its gradient w.r.t. ``m``."""
    x = Tensor(m, requires_grad=True)
    loss = T.softmax_cross_entropy(model.logits(x), target)
    loss.backward()
    return loss.item(), x.grad


def normalized_step(m: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Move ``m`` a distance ``eta`` against ``grad``."""
    norm = float(np.linalg.norm(grad))
    if norm < STALL_NORM:
        raise StalledGradient(float("nan"), norm)
    return m - eta * (grad / norm)


def prototype_step(model: Model, m, target: int, eta: float) -> tuple[np.ndarray, float]:
    """One update; returns the new input and the loss *before* the step.

    Raises StalledGradient when the input gradient norm is below 1e-12.
    """
    m = np.asarray(m, dtype=np.float64)
    loss, grad = loss_and_input_grad(model, m, target)
    norm = float(np.linalg.norm(grad))
    if norm < STALL_NORM:
        raise StalledGradient(loss, norm)
    return m - eta * (grad / norm), loss


def descend(model: Model, m0: np.ndarray, target: int, cfg: ProtoConfig, origin=None) -> Prototype:
    """Evaluate loss, stop if at or below ``delta_loss``, otherwise step; repeat."""
    m = np.array(m0, dtype=np.float64)
    steps = 0
    while True:
        loss, grad = loss_and_input_grad(model, m, target)
        if loss <= cfg.delta_loss:
            return Prototype(m, target, origin, loss, steps, True)
        norm = float(np.linalg.norm(grad))
        if steps >= cfg.max_iters or norm < STALL_NORM:
            return Prototype(m, target, origin, loss, steps, False)
        m = m - cfg.eta * (grad / norm)
        steps += 1


def _stream(cfg: ProtoConfig, target: int, origin: int | None) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, target, _NO_ORIGIN if origin is None else origin])


def initial_vector(model: Model, cfg: ProtoConfig, target: int) -> np.ndarray:
    rng = _stream(cfg, target, None)
    p = model.spec.input_dim
    if cfg.init_distribution == "uniform01":
        return rng.random(p)
    return rng.standard_normal(p)


def generate_seed_prototypes(model: Model, cfg: ProtoConfig) -> list[Prototype]:
    return [descend(model, initial_vector(model, cfg, l), l, cfg) for l in range(model.spec.num_classes)]


def generate_core_prototypes(model: Model, seeds: list[Prototype], cfg: ProtoConfig) -> list[Prototype]:
    k = model.spec.num_classes
    by_class = {s.target_class: s for s in seeds}
    if sorted(by_class) != list(range(k)) or len(seeds) != k:
        raise ConfigurationError(f"need exactly one seed prototype for each of {k} classes")
    cores = []
    for l in range(k):
        for j in range(k):
            if j != l:
                cores.append(descend(model, by_class[j].input_vector, l, cfg, origin=j))
    return cores


def generate_prototypes(model: Model, cfg: ProtoConfig) -> PrototypeSet:
    seeds = generate_seed_prototypes(model, cfg)
    cores = generate_core_prototypes(model, seeds, cfg)
    meta = {"config": cfg.to_dict(), "model_sha256": model.digest(), "k": model.spec.num_classes}
    return PrototypeSet(seeds, cores, meta)


def target_probability(model: Model, proto: Prototype) -> float:
    return float(forward_full(model, proto.input_vector).data[proto.target_class])


def converged_probability_floor(delta_loss: float) -> float:
    """Smallest target probability a converged prototype can have."""
    return math.exp(-delta_loss)

"""Dataless quality metrics.

* classifier orthogonality: one minus the mean pairwise cosine between rows of W
* within-class similarity: mean pairwise cosine of a class's feature vectors
* between-class separation: one minus the mean cosine between each class's
  mean feature direction and the feature vectors of every other class

and the accuracy bracket built from them.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, EvaluationError, UndefinedSimilarity
from .network import Model, extract_features
from .protogen import PrototypeSet

ZERO_NORM = 1e-12

CSV_COLUMNS = (
    "fraction",
    "m_in",
    "in_std",
    "upper",
    "cs_bt",
    "bt_std",
    "cs_bt_plus_2std",
    "m_bt_lower",
    "accuracy",
)


def cos_sim(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 < ZERO_NORM or n2 < ZERO_NORM:
        raise UndefinedSimilarity("cosine similarity of a zero vector is undefined")
    return float(np.clip(v1 @ v2 / (n1 * n2), -1.0, 1.0))


def classifier_orthogonality(W) -> tuple[float, float]:
    """Return ``(h_w, mean angle in degrees)`` for the rows of ``W``.

    The angle is ``arccos`` of the mean pairwise cosine.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ConfigurationError(f"need a k x q matrix with k >= 2, got shape {W.shape}")
    norms = np.linalg.norm(W, axis=1)
    for i, n in enumerate(norms):
        if n < ZERO_NORM:
            raise UndefinedSimilarity(f"weight row {i} is zero")
    U = W / norms[:, None]
    k = W.shape[0]
    mean_cos = float((U @ U.T)[np.triu_indices(k, 1)].mean())
    angle = math.degrees(math.acos(min(1.0, max(-1.0, mean_cos))))
    return 1.0 - mean_cos, angle


@dataclass
class FeatureGroup:
    """Unit-normalized feature vectors per class (rows of ``groups[l]``)."""

    groups: list[np.ndarray]
    excluded_zero: list[int]

    @classmethod
    def from_features(cls, per_class: Sequence) -> FeatureGroup:
        groups, excluded = [], []
        for feats in per_class:
            F = np.asarray(feats, dtype=np.float64)
            if F.ndim == 1:
                F = F[None, :] if F.size else F.reshape(0, 0)
            norms = np.linalg.norm(F, axis=1) if F.size else np.zeros(0)
            keep = norms >= ZERO_NORM
            groups.append(F[keep] / norms[keep, None] if keep.any() else F[:0])
            excluded.append(int((~keep).sum()))
        return cls(groups, excluded)

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def counts(self) -> list[int]:
        return [g.shape[0] for g in self.groups]


def _sample_std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def within_class_similarity(fg: FeatureGroup) -> tuple[float, float, list[float]]:
    """Return ``(mean, std, per-class means)``.

    Per class: mean of the strict upper triangle of the Gram matrix of unit
    features. Classes are averaged with equal weight; the std is the sample
    std of all pairwise cosines pooled across classes.
    """
    short = [l for l, n in enumerate(fg.counts) if n < 2]
    if short:
        raise ConfigurationError(f"classes {short} have fewer than 2 usable feature vectors")
    per_class, pooled = [], []
    for G in fg.groups:
        iu = np.triu_indices(G.shape[0], 1)
        pairs = (G @ G.T)[iu]
        per_class.append(float(pairs.mean()))
        pooled.append(pairs)
    return float(np.mean(per_class)), _sample_std(np.concatenate(pooled)), per_class


def class_mean_directions(fg: FeatureGroup) -> np.ndarray:
    """Mean of each class's unit features, re-normalized to unit length."""
    means = []
    for l, G in enumerate(fg.groups):
        if G.shape[0] == 0:
            raise UndefinedSimilarity(f"class {l} has no feature vectors")
        m = G.mean(axis=0)
        n = np.linalg.norm(m)
        if n < ZERO_NORM:
            raise UndefinedSimilarity(f"mean feature vector of class {l} is zero")
        means.append(m / n)
    return np.array(means)


def between_class_separation(fg: FeatureGroup) -> tuple[float, float, float]:
    """Return ``(mean cross-class cosine, its std, m_bt = 1 - mean)``.

    For every ordered class pair (l, i), l != i, averages the cosines between
    the mean direction of class l and each unit feature of class i; the
    aggregate is the mean over the k(k-1) pairs. The std is the sample std of
    all those individual cosines.
    """
    if fg.k < 2:
        raise ConfigurationError("need at least two classes")
    V = class_mean_directions(fg)
    pair_means, pooled = [], []
    for l in range(fg.k):
        for i in range(fg.k):
            if i == l:
                continue
            c = fg.groups[i] @ V[l]
            pair_means.append(c.mean())
            pooled.append(c)
    mean = float(np.mean(pair_means))
    return mean, _sample_std(np.concatenate(pooled)), 1.0 - mean


@dataclass(frozen=True)
class Bounds:
    lower: float
    upper: float
    clamped: bool


def accuracy_bounds(m_in_mean: float, m_in_std: float, bt_mean: float, bt_std: float) -> Bounds:
    """Predicted accuracy bracket, clamped to [0, 1] (``clamped`` flags a clamp)."""
    upper = m_in_mean - 2.0 * m_in_std
    lower = 1.0 - (bt_mean + 2.0 * bt_std)
    cu, cl = min(1.0, max(0.0, upper)), min(1.0, max(0.0, lower))
    return Bounds(cl, cu, cu != upper or cl != lower)


@dataclass
class MetricReport:
    h_w: float
    mean_weight_angle_deg: float
    m_in_mean: float
    m_in_std: float
    m_in_per_class: list[float]
    bt_cossim_mean: float
    bt_cossim_std: float
    m_bt: float
    upper_bound: float
    lower_bound: float
    upper_bound_clamped: float
    lower_bound_clamped: float
    bounds_clamped: bool
    excluded_zero_features: int
    excluded_unconverged: int
    vectors_per_class: list[int]
    accuracy: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def cs_bt_plus_2std(self) -> float:
        return self.bt_cossim_mean + 2.0 * self.bt_cossim_std

    def to_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        if self.accuracy is None:
            d.pop("accuracy")
        d.update(extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def csv_row(self, fraction: float | None = None) -> dict:
        return {
            "fraction": "" if fraction is None else repr(float(fraction)),
            "m_in": repr(self.m_in_mean),
            "in_std": repr(self.m_in_std),
            "upper": repr(self.upper_bound),
            "cs_bt": repr(self.bt_cossim_mean),
            "bt_std": repr(self.bt_cossim_std),
            "cs_bt_plus_2std": repr(self.cs_bt_plus_2std),
            "m_bt_lower": repr(self.lower_bound),
            "accuracy": "" if self.accuracy is None else repr(self.accuracy),
        }

    def to_csv(self, fraction: float | None = None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row(fraction))
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def report_from_features(W, fg: FeatureGroup, excluded_unconverged: int = 0) -> MetricReport:
    h_w, angle = classifier_orthogonality(W)
    m_in, in_std, per_class = within_class_similarity(fg)
    bt_mean, bt_std, m_bt = between_class_separation(fg)
    b = accuracy_bounds(m_in, in_std, bt_mean, bt_std)
    return MetricReport(
        h_w=h_w,
        mean_weight_angle_deg=angle,
        m_in_mean=m_in,
        m_in_std=in_std,
        m_in_per_class=per_class,
        bt_cossim_mean=bt_mean,
        bt_cossim_std=bt_std,
        m_bt=m_bt,
        upper_bound=m_in - 2.0 * in_std,
        lower_bound=1.0 - (bt_mean + 2.0 * bt_std),
        upper_bound_clamped=b.upper,
        lower_bound_clamped=b.lower,
        bounds_clamped=b.clamped,
        excluded_zero_features=sum(fg.excluded_zero),
        excluded_unconverged=excluded_unconverged,
        vectors_per_class=fg.counts,
    )


def evaluate_dataless(model: Model, protos: PrototypeSet) -> MetricReport:
    """Full metric report from the model and its synthesized prototypes.

    Each class is represented by its converged seed and core prototypes;
    unconverged prototypes and zero feature vectors are dropped and counted.
    """
    protos.check_complete()
    if protos.k != model.spec.num_classes:
        raise ConfigurationError(f"prototype set has {protos.k} classes, model has {model.spec.num_classes}")
    per_class = []
    for group in protos.by_class(converged_only=True):
        if group:
            X = np.array([p.input_vector for p in group])
            per_class.append(extract_features(model, X).data)
        else:
            per_class.append(np.zeros((0, model.spec.feature_dim)))
    fg = FeatureGroup.from_features(per_class)
    short = [l for l, n in enumerate(fg.counts) if n < 2]
    if short:
        raise EvaluationError(f"classes {short} have fewer than 2 converged, nonzero-feature prototypes")
    try:
        report = report_from_features(model.classifier_weights, fg, protos.n_unconverged)
    except UndefinedSimilarity as exc:
        raise EvaluationError(str(exc)) from exc
    report.extra["model_sha256"] = protos.metadata.get("model_sha256", model.digest())
    return report

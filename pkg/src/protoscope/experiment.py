"""Fraction x seed sweeps comparing dataless bounds with held-out accuracy."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, partition_fraction, split_train_test
from .errors import ParseError, ProtoscopeError
from .metrics import evaluate_dataless
from .network import ConvLayer, NetworkSpec, build_model
from .protogen import ProtoConfig, generate_prototypes
from .trainer import TrainConfig, test_accuracy, train

DEFAULT_FRACTIONS = (0.25, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0)

SWEEP_COLUMNS = (
    "fraction",
    "seed",
    "status",
    "m_in",
    "in_std",
    "upper",
    "cs_bt",
    "bt_std",
    "cs_bt_plus_2std",
    "m_bt_lower",
    "accuracy",
    "train_acc",
    "h_w",
    "angle_deg",
    "unconverged",
    "error",
)
NUMERIC_COLUMNS = SWEEP_COLUMNS[3:15]
SERIES_COLUMNS = ("fraction", "lower", "accuracy", "upper")


@dataclass(frozen=True)
class SweepConfig:
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_fraction: float = 0.3
    split_seed: int = 0
    hidden: tuple = (64, 64)
    feature_dim: int = 32
    input_shape: tuple[int, int, int] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    proto: ProtoConfig = field(default_factory=ProtoConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = [l.to_dict() if isinstance(l, ConvLayer) else l for l in self.hidden]
        return d


def run_cell(
    train_ds: LabeledDataset, test_ds: LabeledDataset, fraction: float, seed: int, cfg: SweepConfig
) -> dict:
    """Train on a fraction, evaluate dataless, score on the held-out set.

    Failures are caught and recorded in the row rather than raised.
    """
    row: dict = {"fraction": fraction, "seed": seed}
    try:
        subset = partition_fraction(train_ds, fraction, seed)
        spec = NetworkSpec(
            train_ds.p, cfg.feature_dim, train_ds.k, cfg.hidden, seed, cfg.input_shape
        )
        tcfg = TrainConfig(**{**cfg.train.to_dict(), "seed": seed})
        model, history = train(build_model(spec), subset, tcfg)
        row["train_acc"] = history.train_acc[-1] if len(history) else test_accuracy(model, subset)
        pcfg = ProtoConfig(**{**cfg.proto.to_dict(), "seed": seed})
        report = evaluate_dataless(model, generate_prototypes(model, pcfg))
        row.update(
            m_in=report.m_in_mean,
            in_std=report.m_in_std,
            upper=report.upper_bound,
            cs_bt=report.bt_cossim_mean,
            bt_std=report.bt_cossim_std,
            cs_bt_plus_2std=report.cs_bt_plus_2std,
            m_bt_lower=report.lower_bound,
            h_w=report.h_w,
            angle_deg=report.mean_weight_angle_deg,
            unconverged=report.excluded_unconverged,
        )
        row["accuracy"] = test_accuracy(model, test_ds)
        row["status"] = "ok"
    except ProtoscopeError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _cell_job(args):
    return run_cell(*args)


def mean_rows(cells: list[dict], fractions) -> list[dict]:
    out = []
    for f in fractions:
        ok = [c for c in cells if c["fraction"] == f and c.get("status") == "ok"]
        row: dict = {"fraction": f, "seed": "mean", "status": "ok" if ok else "failed"}
        if ok:
            for col in NUMERIC_COLUMNS:
                row[col] = float(np.mean([c[col] for c in ok]))
        else:
            row["error"] = "no successful cells"
        out.append(row)
    return out


def run_sweep(ds: LabeledDataset, cfg: SweepConfig, jobs: int = 1) -> list[dict]:
    """All (fraction, seed) cells in fraction-major order, then per-fraction means."""
    train_ds, test_ds = split_train_test(ds, cfg.test_fraction, cfg.split_seed)
    tasks = [(train_ds, test_ds, f, s, cfg) for f in cfg.fractions for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell_job, tasks))
    else:
        cells = [run_cell(*t) for t in tasks]
    return cells + mean_rows(cells, cfg.fractions)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("fraction", "seed", "status", "upper", "m_bt_lower", "accuracy")
                   if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: sweep CSV lacks columns {missing}", 1)
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            row: dict = dict(raw)
            try:
                row["fraction"] = float(raw["fraction"])
                for col in NUMERIC_COLUMNS:
                    if raw.get(col):
                        row[col] = float(raw[col])
            except ValueError as exc:
                raise ParseError(f"non-numeric value: {exc}", lineno) from exc
            rows.append(row)
    return rows


def series_from_sweep(rows: list[dict]) -> list[dict]:
    """Per-fraction ``lower / accuracy / upper`` from the sweep's mean rows."""
    means = [r for r in rows if r["seed"] == "mean" and r["status"] == "ok"]
    if not means:
        raise ParseError("sweep CSV contains no successful mean rows")
    out = []
    for r in sorted(means, key=lambda r: r["fraction"]):
        try:
            out.append({k: r[c] for k, c in (("fraction", "fraction"), ("lower", "m_bt_lower"),
                                              ("accuracy", "accuracy"), ("upper", "upper"))})
        except KeyError as exc:
            raise ParseError(f"mean row for fraction {r['fraction']} lacks {exc}") from exc
        if not all(isinstance(v, float) and math.isfinite(v) for v in out[-1].values()):
            raise ParseError(f"mean row for fraction {r['fraction']} has empty values")
    return out


def write_series_csv(series: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in series:
            w.writerow([repr(r[c]) for c in SERIES_COLUMNS])

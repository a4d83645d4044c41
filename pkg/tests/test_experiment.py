import numpy as np
import pytest

from protoscope.data import gen_blobs, split_train_test
from protoscope.errors import ParseError
from protoscope.experiment import (
    SweepConfig,
    mean_rows,
    read_sweep_csv,
    run_cell,
    run_sweep,
    series_from_sweep,
    write_series_csv,
    write_sweep_csv,
)
from protoscope.protogen import ProtoConfig
from protoscope.trainer import TrainConfig

SMALL = SweepConfig(
    fractions=(0.5, 1.0),
    seeds=(0, 1),
    hidden=(32,),
    feature_dim=16,
    train=TrainConfig(epochs=40, phase_split=20),
)


@pytest.fixture(scope="module")
def blobs():
    return gen_blobs(3, 40, 4, separation=10, spread=0.5, seed=0)


def test_cell_fields(blobs):
    tr, te = split_train_test(blobs, 0.3, 0)
    row = run_cell(tr, te, 0.5, 1, SMALL)
    assert row["status"] == "ok", row.get("error")
    assert row["upper"] == row["m_in"] - 2 * row["in_std"]
    assert row["m_bt_lower"] == 1 - (row["cs_bt"] + 2 * row["bt_std"])
    assert 0 <= row["accuracy"] <= 1


def test_failed_cell_is_recorded(blobs):
    tr, te = split_train_test(blobs, 0.3, 0)
    cfg = SweepConfig(hidden=(16,), feature_dim=8, train=TrainConfig(epochs=0, phase_split=0),
                      proto=ProtoConfig(delta_loss=1e-12, max_iters=1))
    row = run_cell(tr, te, 1.0, 0, cfg)
    assert row["status"] == "failed" and row["error"].startswith("EvaluationError")


def test_mean_rows():
    cells = [
        {"fraction": 0.5, "status": "ok", **{c: float(i) for c in ("m_in", "upper")}} for i in range(3)
    ] + [{"fraction": 1.0, "status": "failed"}]
    cells = [{**c, **{k: 0.0 for k in ("in_std", "cs_bt", "bt_std", "cs_bt_plus_2std", "m_bt_lower",
                                         "accuracy", "train_acc", "h_w", "angle_deg", "unconverged")}}
             if c["status"] == "ok" else c for c in cells]
    means = mean_rows(cells, (0.5, 1.0))
    assert means[0]["m_in"] == 1.0 and means[0]["upper"] == 1.0
    assert means[1]["status"] == "failed"


def test_sweep_round_trip_and_series(blobs, tmp_path):
    rows = run_sweep(blobs, SMALL)
    assert len(rows) == 4 + 2
    write_sweep_csv(rows, tmp_path / "s.csv")
    back = read_sweep_csv(tmp_path / "s.csv")
    assert [r["fraction"] for r in back] == [0.5, 0.5, 1.0, 1.0, 0.5, 1.0]
    for a, b in zip(rows, back):
        if a["status"] == "ok":
            assert a["upper"] == b["upper"] and a["accuracy"] == b["accuracy"]
    series = series_from_sweep(list(reversed(back)))
    assert [s["fraction"] for s in series] == [0.5, 1.0]
    write_series_csv(series, tmp_path / "series.csv")
    assert (tmp_path / "series.csv").read_text().splitlines()[0] == "fraction,lower,accuracy,upper"


def test_sweep_parallel_equals_serial(blobs):
    serial = run_sweep(blobs, SMALL, jobs=1)
    parallel = run_sweep(blobs, SMALL, jobs=2)
    assert serial == parallel


def test_read_sweep_errors(tmp_path):
    (tmp_path / "a.csv").write_text("fraction,seed\n0.5,0\n")
    with pytest.raises(ParseError):
        read_sweep_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("fraction,seed,status,upper,m_bt_lower,accuracy\n0.5,0,ok,zz,1,1\n")
    with pytest.raises(ParseError, match="line 2"):
        read_sweep_csv(tmp_path / "b.csv")
    with pytest.raises(ParseError):
        series_from_sweep([{"fraction": 0.5, "seed": "0", "status": "ok"}])

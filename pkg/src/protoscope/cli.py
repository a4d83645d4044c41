"""Command-line interface.

Exit codes: 0 success, 2 configuration/parse error, 3 training abort,
4 evaluation failure.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .data import gen_blobs, load_csv, partition_fraction, split_train_test, write_csv
from .errors import ProtoscopeError
from .experiment import (
    DEFAULT_FRACTIONS,
    SweepConfig,
    read_sweep_csv,
    run_sweep,
    series_from_sweep,
    write_series_csv,
    write_sweep_csv,
)
from .metrics import evaluate_dataless
from .network import ConvLayer, NetworkSpec, build_model, load_model, save_model
from .protogen import INIT_DISTRIBUTIONS, ProtoConfig, generate_prototypes
from .trainer import TrainConfig, test_accuracy, train

SEED_ENV = "PROTOSCOPE_SEED"


def parse_layers(text: str) -> tuple:
    """``"mlp:64,64"`` -> (64, 64); ``"conv:4:3:2,mlp:16"`` -> (ConvLayer(4, 3, 2), 16)."""
    layers: list = []
    for token in (t.strip() for t in text.split(",")):
        if token in ("", "mlp", "mlp:"):
            continue
        if token.startswith("conv:"):
            parts = token[5:].split(":")
            if len(parts) not in (2, 3):
                raise click.BadParameter(f"conv layer must be conv:C:K[:S], got {token!r}")
            try:
                layers.append(ConvLayer(*(int(p) for p in parts)))
            except ValueError as exc:
                raise click.BadParameter(f"bad conv layer {token!r}") from exc
            continue
        if token.startswith("mlp:"):
            token = token[4:]
        try:
            layers.append(int(token))
        except ValueError as exc:
            raise click.BadParameter(f"bad layer width {token!r}") from exc
    return tuple(layers)


def parse_shape(text: str | None):
    if not text:
        return None
    try:
        return tuple(int(s) for s in text.lower().split("x"))
    except ValueError as exc:
        raise click.BadParameter(f"input shape must look like CxHxW, got {text!r}") from exc


def parse_fractions(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise click.BadParameter(f"bad fraction list {text!r}") from exc


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc)
    )
    return when.replace(microsecond=0).isoformat()


def manifest_path(output) -> Path:
    return Path(f"{output}.manifest.json")


def write_manifest(command: str, config: dict, inputs: list, outputs: list, model_sha256=None) -> None:
    """Write ``<output>.manifest.json`` beside every output file."""
    doc = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "model_sha256": model_sha256,
        "tool_version": __version__,
        "timestamp": _timestamp(),
    }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    for out in outputs:
        manifest_path(out).write_text(text)


def _fail(exc: ProtoscopeError):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


seed_option = click.option(
    "--seed", type=click.IntRange(min=0), envvar=SEED_ENV, default=0, show_default=True,
    help=f"Random seed (falls back to ${SEED_ENV}).",
)


def proto_options(f):
    f = click.option("--delta-loss", type=float, default=0.01, show_default=True,
                     help="Stop descending once the target-class loss is at or below this.")(f)
    f = click.option("--eta", type=float, default=0.05, show_default=True,
                     help="Input step length per prototype update.")(f)
    f = click.option("--max-iters", type=int, default=2000, show_default=True)(f)
    f = click.option("--init", "init_distribution", type=click.Choice(INIT_DISTRIBUTIONS),
                     default="standard-normal", show_default=True)(f)
    return f


def train_options(f):
    f = click.option("--spec", "spec_text", default="mlp:64,64", show_default=True,
                     help="Hidden layers before the feature layer, e.g. mlp:64,64 or conv:4:3:1,mlp:32.")(f)
    f = click.option("--q", "feature_dim", type=int, default=32, show_default=True,
                     help="Feature layer width.")(f)
    f = click.option("--input-shape", default=None, help="CxHxW, required with a conv layer.")(f)
    f = click.option("--epochs", type=int, default=100, show_default=True)(f)
    f = click.option("--lr1", type=float, default=0.1, show_default=True)(f)
    f = click.option("--lr2", type=float, default=0.05, show_default=True)(f)
    f = click.option("--phase-split", type=int, default=None,
                     help="First epoch of the second learning rate [default: epochs // 2].")(f)
    f = click.option("--batch-size", type=int, default=32, show_default=True)(f)
    return f


def _train_config(epochs, lr1, lr2, phase_split, batch_size, seed) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        lr_phase1=lr1,
        lr_phase2=lr2,
        phase_split=epochs // 2 if phase_split is None else phase_split,
        batch_size=batch_size,
        seed=seed,
    )


@click.group()
@click.version_option(__version__, prog_name="protoscope")
def main():
    """Evaluate trained classifiers without data."""


@main.command("gen-data")
@click.option("--blobs", is_flag=True, help="Gaussian blob generator (currently the only one).")
@click.option("--k", type=int, required=True, help="Number of classes.")
@click.option("--per-class", type=int, required=True)
@click.option("--p", type=int, required=True, help="Input dimension.")
@click.option("--separation", type=float, default=10.0, show_default=True)
@click.option("--spread", type=float, default=0.5, show_default=True)
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), default="data.csv", show_default=True)
@click.option("--split-test", type=float, default=None,
              help="Also write stratified <out>.train.csv / <out>.test.csv at this test fraction.")
def gen_data(blobs, k, per_class, p, separation, spread, seed, out, split_test):
    """Generate a synthetic labeled dataset as CSV (label,f1,...,fp)."""
    if not blobs:
        raise click.UsageError("select a generator (--blobs)")
    config = dict(generator="blobs", k=k, per_class=per_class, p=p,
                  separation=separation, spread=spread, seed=seed, split_test=split_test)
    try:
        ds = gen_blobs(k, per_class, p, separation, spread, seed)
        write_csv(ds, out)
        outputs = [out]
        if split_test is not None:
            tr, te = split_train_test(ds, split_test, seed)
            stem = str(Path(out).with_suffix(""))
            for part, name in ((tr, f"{stem}.train.csv"), (te, f"{stem}.test.csv")):
                write_csv(part, name)
                outputs.append(name)
    except ProtoscopeError as exc:
        _fail(exc)
    write_manifest("gen-data", config, [], outputs)
    click.echo(f"wrote {ds.n} rows to {out}")


@main.command("train")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--header", is_flag=True, help="Skip the first CSV line.")
@train_options
@click.option("--fraction", type=float, default=1.0, show_default=True,
              help="Train on a stratified random fraction of the data.")
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), default="model.json", show_default=True)
@click.option("--history", type=click.Path(dir_okay=False), default=None,
              help="Write per-epoch epoch,loss,train_acc CSV here.")
def train_cmd(data_path, header, spec_text, feature_dim, input_shape, epochs, lr1, lr2,
              phase_split, batch_size, fraction, seed, out, history):
    """Train a classifier with two-phase SGD and save it as JSON."""
    hidden = parse_layers(spec_text)
    shape = parse_shape(input_shape)
    try:
        ds = load_csv(data_path, header=header)
        if fraction != 1.0:
            ds = partition_fraction(ds, fraction, seed)
        spec = NetworkSpec(ds.p, feature_dim, ds.k, hidden, seed, shape)
        cfg = _train_config(epochs, lr1, lr2, phase_split, batch_size, seed)
        model, hist = train(build_model(spec), ds, cfg)
    except ProtoscopeError as exc:
        _fail(exc)
    save_model(model, out, extra={"manifest": manifest_path(out).name})
    outputs = [out]
    if history:
        hist.write_csv(history)
        outputs.append(history)
    config = {"spec": spec.to_dict(), "train": cfg.to_dict(), "fraction": fraction,
              "label_map": list(ds.label_map or [])}
    write_manifest("train", config, [data_path], outputs, model.digest())
    final = f", final train accuracy {hist.train_acc[-1]:.4f}" if len(hist) else ""
    click.echo(f"saved model to {out}{final}")


@main.command("evaluate")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@proto_options
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), default="report.json", show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Also write a one-row CSV in table column order.")
@click.option("--protos", "protos_path", type=click.Path(dir_okay=False), default=None,
              help="Save the synthesized prototype set as JSON.")
@click.option("--fraction", type=float, default=None, help="Training fraction to record in the CSV row.")
@click.option("--validate", "validate_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Held-out CSV; adds true accuracy to the report. Not used by the metrics.")
@click.option("--header", is_flag=True, help="Skip the first line of the --validate CSV.")
def evaluate_cmd(model_path, delta_loss, eta, max_iters, init_distribution, seed, out, csv_path,
                 protos_path, fraction, validate_path, header):
    """Dataless evaluation: synthesize prototypes, compute metrics and bounds."""
    try:
        model = load_model(model_path)
        pcfg = ProtoConfig(delta_loss, eta, max_iters, init_distribution, seed)
        protos = generate_prototypes(model, pcfg)
        protos.metadata["manifest"] = manifest_path(out).name
        if protos_path:
            protos.save(protos_path)
        report = evaluate_dataless(model, protos)
        if validate_path:
            report.accuracy = test_accuracy(model, load_csv(validate_path, header=header))
    except ProtoscopeError as exc:
        _fail(exc)
    report.extra["manifest"] = manifest_path(out).name
    report.save(out)
    outputs = [out]
    if csv_path:
        Path(csv_path).write_text(report.to_csv(fraction))
        outputs.append(csv_path)
    if protos_path:
        outputs.append(protos_path)
    inputs = [model_path] + ([validate_path] if validate_path else [])
    write_manifest("evaluate", {"proto": pcfg.to_dict(), "fraction": fraction}, inputs, outputs,
                   model.digest())
    click.echo(
        f"h_w={report.h_w:.4f} angle={report.mean_weight_angle_deg:.2f}deg "
        f"bounds=[{report.lower_bound:.4f}, {report.upper_bound:.4f}]"
        + (f" accuracy={report.accuracy:.4f}" if report.accuracy is not None else "")
    )


@main.command("sweep")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--header", is_flag=True)
@click.option("--blobs", is_flag=True, help="Generate blob data instead of reading --data.")
@click.option("--k", type=int, default=4, show_default=True)
@click.option("--per-class", type=int, default=100, show_default=True)
@click.option("--p", type=int, default=8, show_default=True)
@click.option("--separation", type=float, default=10.0, show_default=True)
@click.option("--spread", type=float, default=0.5, show_default=True)
@click.option("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS), show_default=True)
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=5, show_default=True,
              help="Number of seeds per fraction (seed, seed+1, ...).")
@click.option("--test-fraction", type=float, default=0.3, show_default=True)
@train_options
@proto_options
@seed_option
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="sweep.csv", show_default=True)
def sweep_cmd(data_path, header, blobs, k, per_class, p, separation, spread, fractions, n_seeds,
              test_fraction, spec_text, feature_dim, input_shape, epochs, lr1, lr2, phase_split,
              batch_size, delta_loss, eta, max_iters, init_distribution, seed, jobs, out):
    """Train/evaluate/validate over a fraction x seed grid."""
    if bool(data_path) == blobs:
        raise click.UsageError("give exactly one of --data or --blobs")
    try:
        if blobs:
            ds = gen_blobs(k, per_class, p, separation, spread, seed)
        else:
            ds = load_csv(data_path, header=header)
        cfg = SweepConfig(
            fractions=parse_fractions(fractions),
            seeds=tuple(range(seed, seed + n_seeds)),
            test_fraction=test_fraction,
            split_seed=seed,
            hidden=parse_layers(spec_text),
            feature_dim=feature_dim,
            input_shape=parse_shape(input_shape),
            train=_train_config(epochs, lr1, lr2, phase_split, batch_size, seed),
            proto=ProtoConfig(delta_loss, eta, max_iters, init_distribution, seed),
        )
        rows = run_sweep(ds, cfg, jobs=jobs)
    except ProtoscopeError as exc:
        _fail(exc)
    write_sweep_csv(rows, out)
    config = {"sweep": cfg.to_dict(), "data": ds.provenance}
    write_manifest("sweep", config, [data_path] if data_path else [], [out])
    cells = [r for r in rows if r["seed"] != "mean"]
    ok = sum(r["status"] == "ok" for r in cells)
    click.echo(f"{ok}/{len(cells)} cells succeeded; wrote {out}")
    if ok == 0:
        sys.exit(4)


@main.command("report")
@click.option("--sweep", "sweep_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default="series.csv", show_default=True)
def report_cmd(sweep_path, out):
    """Turn sweep means into a fraction,lower,accuracy,upper series for plotting."""
    try:
        series = series_from_sweep(read_sweep_csv(sweep_path))
    except (ProtoscopeError, KeyError) as exc:
        click.echo(f"error: malformed sweep CSV: {exc}", err=True)
        sys.exit(2)
    write_series_csv(series, out)
    write_manifest("report", {}, [sweep_path], [out])
    click.echo(f"wrote {len(series)} rows to {out}")


if __name__ == "__main__":
    main()

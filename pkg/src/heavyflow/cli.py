"""Command-line interface: fit, eval, sample, experiment, check, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import verify
from .data import build_dataset
from .harness import (
    ExperimentConfig,
    default_output_dir,
    evaluate,
    generate,
    run_experiment,
    save_checkpoint,
)
from .model import VARIANTS, build_variant
from .train import TrainConfig, fit as train_fit

_FLOWS = click.Choice(VARIANTS, case_sensitive=False)


def _data_options(fn):
    fn = click.option("--data", "data_path", required=True, type=click.Path(exists=True),
                      help="Closing-price file (date column + ticker columns).")(fn)
    fn = click.option("--tickers", default=None,
                      help="Comma-separated subset of ticker columns.")(fn)
    fn = click.option("--delimiter", default=",", show_default=True)(fn)
    return fn


def _train_options(fn):
    fn = click.option("--epochs", default=300, show_default=True, type=int)(fn)
    fn = click.option("--lr", default=1e-3, show_default=True, type=float)(fn)
    fn = click.option("--batch-size", default=256, show_default=True, type=int)(fn)
    fn = click.option("--seed", default=0, show_default=True, type=int)(fn)
    fn = click.option("--clip-grad/--no-clip-grad", "clip_grad", default=True,
                      show_default=True, help="Clip gradients at global norm 10.")(fn)
    return fn


def _split_tickers(tickers):
    return [t.strip() for t in tickers.split(",")] if tickers else None


@click.group()
def main():
    """Density estimation for heavy-tailed returns with tail-transform flows."""


@main.command("fit")
@_data_options
@_train_options
@click.option("--flow", required=True, type=_FLOWS)
@click.option("--dim", default=None, type=int, help="Use only the first DIM columns.")
@click.option("--output", default=None, type=click.Path(),
              envvar="HEAVYFLOW_OUTPUT", help="Output directory.")
def fit_cmd(data_path, tickers, delimiter, epochs, lr, batch_size, seed,
            clip_grad, flow, dim, output):
    """Train a single flow and write its checkpoint and training curve."""
    dataset = build_dataset(data_path, delimiter=delimiter,
                            tickers=_split_tickers(tickers), seed=seed)
    if dim is not None:
        dataset.x = dataset.x[:, :dim]
    out = Path(output or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    model = build_variant(flow, dataset.d, seed=seed)
    cfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed,
                      clip_grad_norm=10.0 if clip_grad else None)
    report = train_fit(model, dataset, cfg)
    if report.failed:
        click.echo(f"training failed: {report.fail_reason}", err=True)
        sys.exit(2)
    ckpt = out / f"{flow}.npz"
    save_checkpoint(model, ckpt)
    with open(out / f"{flow}_curve.csv", "w") as fh:
        fh.write("epoch,train_nll,val_nll\n")
        for e, (tr, va) in enumerate(zip(report.train_nll, report.val_nll)):
            fh.write(f"{e},{float(tr)!r},{float(va)!r}\n")
    click.echo(json.dumps({
        "checkpoint": str(ckpt),
        "best_epoch": report.best_epoch,
        "best_val_nll": report.best_val_nll,
        "test_nll": report.test_nll,
    }, indent=2))


@main.command("eval")
@_data_options
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
def eval_cmd(data_path, tickers, delimiter, checkpoint):
    """Report per-row and mean NLL of a checkpoint on a price file."""
    dataset = build_dataset(data_path, delimiter=delimiter,
                            tickers=_split_tickers(tickers))
    rep = evaluate(checkpoint, dataset.x)
    click.echo(json.dumps({
        "variant": rep["variant"],
        "count": rep["count"],
        "mean_nll": rep["mean_nll"],
    }, indent=2))


@main.command("sample")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--count", default=1000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--output", required=True, type=click.Path(),
              help="CSV file for the synthetic returns.")
def sample_cmd(checkpoint, count, seed, output):
    """Generate synthetic log-return rows from a trained model."""
    samples = generate(checkpoint, count, seed, out_path=output)
    click.echo(f"wrote {len(samples)} rows to {output}")


@main.command("experiment")
@_data_options
@_train_options
@click.option("--flow", "flows", multiple=True, type=_FLOWS,
              help="Variant to run (repeatable; default: all five).")
@click.option("--dim", default=None, type=int)
@click.option("--repeats", default=10, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int,
              help="Parallel repeat workers.")
@click.option("--output", default=None, type=click.Path(),
              envvar="HEAVYFLOW_OUTPUT")
@click.option("--resample-split", is_flag=True, default=False,
              help="Resample the train/val split per repeat.")
def experiment_cmd(data_path, tickers, delimiter, epochs, lr, batch_size, seed,
                   clip_grad, flows, dim, repeats, jobs, output, resample_split):
    """Run repeated fits per variant and write summary + box-plot data."""
    dataset = build_dataset(data_path, delimiter=delimiter,
                            tickers=_split_tickers(tickers), seed=seed)
    if dim is not None:
        dataset.x = dataset.x[:, :dim]
    config = ExperimentConfig(
        variants=tuple(f.lower() for f in flows) or VARIANTS,
        repeats=repeats,
        base_seed=seed,
        train=TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed,
                          clip_grad_norm=10.0 if clip_grad else None),
        output_dir=str(output or default_output_dir()),
        resample_split=resample_split,
        jobs=jobs,
    )
    table, out = run_experiment(config, dataset)
    click.echo((out / "summary.txt").read_text())
    if table.n_failed:
        for row in table.rows:
            if row.n_failed:
                click.echo(f"{row.variant}: {row.n_failed} failed repeats", err=True)
        sys.exit(3)


@main.command("check")
def check_cmd():
    """Run the numerical verification suite (round trips, gradient checks)."""
    ok = verify.run_checks(echo=click.echo)
    sys.exit(0 if ok else 1)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--checkpoint", multiple=True, type=click.Path(exists=True),
              help="Checkpoint(s) to preload into the registry.")
def serve_cmd(host, port, checkpoint):
    """Serve trained models over HTTP (density evaluation and sampling)."""
    import uvicorn

    from .service import create_app

    app = create_app(preload=checkpoint)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

"""Experiment orchestration: repeats, aggregation, checkpoints, reports.

All emitted summary artifacts (per-repeat table, summary json/text,
training curves) are byte-deterministic for a given config and data;
wall-clock timings go to a separate file so reruns compare clean.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ReturnsDataset, temporal_split
from .model import VARIANTS, build_variant
from .train import TrainConfig, fit, mean_nll

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or version-incompatible checkpoint file."""


@dataclass
class ExperimentConfig:
    variants: tuple = VARIANTS
    repeats: int = 10
    base_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    resample_split: bool = False
    jobs: int = 1
    include_affine: bool = False

    def to_dict(self):
        return {
            "variants": list(self.variants),
            "repeats": self.repeats,
            "base_seed": self.base_seed,
            "train": {
                "epochs": self.train.epochs,
                "lr": self.train.lr,
                "batch_size": self.train.batch_size,
                "beta1": self.train.beta1,
                "beta2": self.train.beta2,
                "eps": self.train.eps,
                "clip_grad_norm": self.train.clip_grad_norm,
            },
            "resample_split": self.resample_split,
            "include_affine": self.include_affine,
        }


@dataclass
class RepeatResult:
    variant: str
    repeat: int
    seed: int
    failed: bool
    fail_reason: str
    test_nll: float
    best_epoch: int
    best_val_nll: float
    train_nll: list
    val_nll: list
    wall_clock_s: float


@dataclass
class VariantSummary:
    variant: str
    mean_nll: float | None
    std_err: float | None
    values: list
    n_success: int
    n_failed: int


@dataclass
class ResultTable:
    rows: list  # VariantSummary, in config order

    @property
    def n_failed(self):
        return sum(r.n_failed for r in self.rows)


# checkpoints ---------------------------------------------------------


def save_checkpoint(model, path, rng_state=None, columns=None):
    """Self-describing archive: variant, dim, named arrays, RNG state."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "dim": model.d,
        "include_affine": bool(model.include_affine),
        "rng_state": rng_state or {},
        "columns": list(columns) if columns else None,
    }
    arrays = {f"param::{k}": v for k, v in model.store.arrays().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes; returns (model, meta)."""
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in z:
        raise CheckpointError(f"{path}: missing checkpoint metadata")
    meta = json.loads(str(z["meta"]))
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: incompatible checkpoint version {version!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    model = build_variant(
        meta["variant"],
        meta["dim"],
        seed=0,
        include_affine=meta.get("include_affine", False),
    )
    stored = {k[len("param::") :]: z[k] for k in z.files if k.startswith("param::")}
    names = set(model.store.names())
    if names != set(stored):
        raise CheckpointError(f"{path}: parameter names do not match the architecture")
    model.store.restore(stored)
    return model, meta


def evaluate(checkpoint_path, X):
    """Per-row and mean NLL of a checkpointed model on a data matrix."""
    model, meta = load_checkpoint(checkpoint_path)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.d:
        raise ValueError(
            f"data has {X.shape[1]} columns but checkpoint expects {model.d}"
        )
    per_row = -np.asarray(model.log_prob(X))
    return {
        "per_row_nll": per_row,
        "mean_nll": float(np.mean(per_row)),
        "count": int(len(per_row)),
        "variant": meta["variant"],
    }


def generate(checkpoint_path, count, seed, out_path=None):
    """Sample synthetic rows from a checkpointed model; optionally write CSV."""
    if count < 0:
        raise ValueError("count must be >= 0")
    model, meta = load_checkpoint(checkpoint_path)
    samples = model.sample(count, seed)
    if out_path is not None:
        cols = meta.get("columns") or [f"x{i}" for i in range(model.d)]
        with open(out_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in samples:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return samples


# experiment runner ---------------------------------------------------


def _run_single_repeat(args):
    (variant, repeat, seed, dataset, train_cfg, include_affine, ckpt_path) = args
    model = build_variant(variant, dataset.d, seed=seed, include_affine=include_affine)
    report = fit(model, dataset, train_cfg)
    if not report.failed and ckpt_path is not None:
        shuffle_rng = np.random.default_rng([seed, 1])
        save_checkpoint(
            model,
            ckpt_path,
            rng_state={"train_shuffle": shuffle_rng.bit_generator.state},
        )
    return RepeatResult(
        variant=variant,
        repeat=repeat,
        seed=seed,
        failed=report.failed,
        fail_reason=report.fail_reason,
        test_nll=report.test_nll,
        best_epoch=report.best_epoch,
        best_val_nll=report.best_val_nll,
        train_nll=report.train_nll,
        val_nll=report.val_nll,
        wall_clock_s=report.wall_clock_s,
    )


def _fmt(x):
    return repr(float(x))


def _summarize(variant, results):
    ok = [r.test_nll for r in results if not r.failed]
    n_failed = sum(r.failed for r in results)
    mean = float(np.mean(ok)) if ok else None
    se = float(np.std(ok, ddof=1) / np.sqrt(len(ok))) if len(ok) >= 2 else None
    return VariantSummary(
        variant=variant,
        mean_nll=mean,
        std_err=se,
        values=ok,
        n_success=len(ok),
        n_failed=n_failed,
    )


def _write_outputs(out, config, results, table):
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(exist_ok=True)

    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(out / "per_repeat.csv", "w") as fh:
        fh.write("variant,repeat,seed,status,test_nll,best_epoch,best_val_nll\n")
        for r in results:
            status = "failed" if r.failed else "ok"
            tn = "" if r.failed else _fmt(r.test_nll)
            bv = "" if r.failed else _fmt(r.best_val_nll)
            fh.write(
                f"{r.variant},{r.repeat},{r.seed},{status},{tn},{r.best_epoch},{bv}\n"
            )

    for r in results:
        with open(out / "curves" / f"{r.variant}_rep{r.repeat}.csv", "w") as fh:
            fh.write("epoch,train_nll,val_nll\n")
            for e, (tr, va) in enumerate(zip(r.train_nll, r.val_nll)):
                fh.write(f"{e},{_fmt(tr)},{_fmt(va)}\n")

    summary = {
        row.variant: {
            "mean_nll": row.mean_nll,
            "std_err": row.std_err,
            "values": row.values,
            "n_success": row.n_success,
            "n_failed": row.n_failed,
        }
        for row in table.rows
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lines = [f"{'variant':<8} {'mean NLL':>12} {'std err':>12} {'ok':>3} {'fail':>4}"]
    for row in table.rows:
        mean = "n/a" if row.mean_nll is None else f"{row.mean_nll:.4f}"
        se = "n/a" if row.std_err is None else f"{row.std_err:.4f}"
        lines.append(
            f"{row.variant:<8} {mean:>12} {se:>12} {row.n_success:>3} {row.n_failed:>4}"
        )
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    with open(out / "timings.json", "w") as fh:
        json.dump(
            {f"{r.variant}_rep{r.repeat}": r.wall_clock_s for r in results},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def run_experiment(config: ExperimentConfig, dataset: ReturnsDataset):
    """Train repeats for every variant and aggregate test NLL statistics.

    Repeat seeds are base_seed + repeat index; repeats run as share-nothing
    workers when jobs > 1 and results are identical at any job count.
    Returns (ResultTable, output_path).
    """
    for v in config.variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    out = Path(config.output_dir)

    tasks = []
    for variant in config.variants:
        for repeat in range(config.repeats):
            seed = config.base_seed + repeat
            if config.resample_split:
                ds = temporal_split(dataset.x, dataset.dates, seed=seed)
            else:
                ds = dataset
            cfg = TrainConfig(
                epochs=config.train.epochs,
                lr=config.train.lr,
                batch_size=config.train.batch_size,
                beta1=config.train.beta1,
                beta2=config.train.beta2,
                eps=config.train.eps,
                seed=seed,
                clip_grad_norm=config.train.clip_grad_norm,
            )
            ckpt = out / "checkpoints" / f"{variant}_rep{repeat}.npz"
            tasks.append(
                (variant, repeat, seed, ds, cfg, config.include_affine, str(ckpt))
            )

    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_single_repeat, tasks))
    else:
        results = [_run_single_repeat(t) for t in tasks]

    table = ResultTable(
        rows=[
            _summarize(v, [r for r in results if r.variant == v])
            for v in config.variants
        ]
    )
    _write_outputs(out, config, results, table)
    return table, out


def default_output_dir():
    return os.environ.get("HEAVYFLOW_OUTPUT", "runs")

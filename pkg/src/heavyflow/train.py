"""NLL minimization with Adam and post-hoc best-epoch selection.

Training always runs the configured number of epochs; the reported model
is the parameter snapshot with the lowest full-validation NLL.  A
non-finite loss aborts the run and marks it failed in the report instead
of raising out of the experiment.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import EvaluationFault


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_grad_norm: float | None = 10.0  # None disables clipping

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")


@dataclass
class TrainReport:
    train_nll: list = field(default_factory=list)  # per-epoch mean over batches
    val_nll: list = field(default_factory=list)  # per-epoch full-validation mean
    best_epoch: int = -1
    best_val_nll: float = float("nan")
    test_nll: float = float("nan")
    wall_clock_s: float = 0.0
    failed: bool = False
    fail_reason: str = ""

    def to_dict(self):
        return {
            "train_nll": [float(v) for v in self.train_nll],
            "val_nll": [float(v) for v in self.val_nll],
            "best_epoch": int(self.best_epoch),
            "best_val_nll": float(self.best_val_nll),
            "test_nll": float(self.test_nll),
            "wall_clock_s": float(self.wall_clock_s),
            "failed": bool(self.failed),
            "fail_reason": self.fail_reason,
        }


def nll(model, batch, pv=None):
    """Summed negative log likelihood over the batch (differentiable)."""
    if len(np.atleast_2d(batch)) == 0:
        raise ValueError("batch must be nonempty")
    return -ad.batch_sum(model.log_prob(batch, pv))


def mean_nll(model, X):
    """Per-observation mean NLL on the plain evaluation path."""
    return float(nll(model, X)) / len(np.atleast_2d(X))


def adam_step(value, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; t is the 1-based step count."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a ParamStore; updates arrays in place."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(store[n]) for n in store.names()}
        self._v = {n: np.zeros_like(store[n]) for n in store.names()}

    def step(self, grads):
        self.t += 1
        for name in self.store.names():
            p = self.store[name]
            new_p, self._m[name], self._v[name] = adam_step(
                p,
                grads[name],
                self._m[name],
                self._v[name],
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            )
            np.copyto(p, new_p)


def collect_grads(gradients, tape_view):
    """Per-array gradient arrays from a backward pass over a tape view."""
    out = {}
    for name, vars_arr in tape_view.items():
        g = np.empty(vars_arr.shape)
        gflat = g.reshape(-1)
        for i, var in enumerate(vars_arr.reshape(-1)):
            gflat[i] = gradients[var]
        out[name] = g
    return out


def clip_global_norm(grads, max_norm):
    """Scale all gradients so their joint 2-norm is at most max_norm."""
    sq = 0.0
    for name in sorted(grads):
        g = grads[name]
        sq += float(np.sum(g * g))
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {n: g * scale for n, g in grads.items()}
    return grads, norm


def fit(model, dataset, config: TrainConfig):
    """Train on the dataset's train split, early-stop on validation NLL.

    Returns a TrainReport; the model is left at the best-validation
    parameters unless the run failed.
    """
    t_start = time.perf_counter()
    report = TrainReport()
    x_train = dataset.train
    x_val = dataset.val
    x_test = dataset.test
    n = len(x_train)
    # shuffle stream decoupled from the model-init stream
    shuffle_rng = np.random.default_rng([config.seed, 1])
    opt = Adam(model.store, config.lr, config.beta1, config.beta2, config.eps)
    best_snap = model.store.snapshot()
    best_val = float("inf")

    def _fail(reason):
        report.failed = True
        report.fail_reason = reason
        report.wall_clock_s = time.perf_counter() - t_start
        return report

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, config.batch_size):
                batch = x_train[order[start : start + config.batch_size]]
                tape = ad.Tape()
                pv = model.store.tape_view(tape)
                loss = nll(model, batch, pv)
                if not np.isfinite(loss.value):
                    return _fail(f"non-finite loss at epoch {epoch}")
                grads = collect_grads(tape.backward(loss), pv)
                if config.clip_grad_norm is not None:
                    grads, _ = clip_global_norm(grads, config.clip_grad_norm)
                opt.step(grads)
                total += loss.value
            val = mean_nll(model, x_val)
        except EvaluationFault as exc:
            return _fail(f"evaluation fault at epoch {epoch}: {exc}")
        if not np.isfinite(val):
            return _fail(f"non-finite validation NLL at epoch {epoch}")
        report.train_nll.append(total / n)
        report.val_nll.append(val)
        if val < best_val:
            best_val = val
            best_snap = model.store.snapshot()
            report.best_epoch = epoch

    model.store.restore(best_snap)
    report.best_val_nll = best_val
    try:
        report.test_nll = mean_nll(model, x_test)
    except EvaluationFault as exc:
        return _fail(f"evaluation fault on test set: {exc}")
    report.wall_clock_s = time.perf_counter() - t_start
    return report

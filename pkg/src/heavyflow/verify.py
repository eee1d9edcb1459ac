"""Numerical self-verification: round trips, gradient checks, tail checks.

Backs the ``check`` CLI subcommand so users can validate the numerics on
their own machine before trusting a fit.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import metrics, special, tails
from .layers import decode_rqs_params
from .layers import rqs_forward as _rqs_fwd
from .layers import rqs_inverse as _rqs_inv
from .model import build_variant
from .tails import TailMode, TailParams


def _check_special():
    z = np.linspace(-25, 25, 2001)
    err1 = np.max(np.abs(special.erf(z) + special.erfc(z) - 1.0))
    p = np.linspace(1e-6, 1 - 1e-6, 999)
    err2 = np.max(np.abs(special.normal_cdf(special.normal_quantile(p)) - p))
    ok = err1 < 1e-14 and err2 < 1e-12
    return ok, f"erf+erfc identity {err1:.2e}, quantile round trip {err2:.2e}"


def _draw_lambdas(rng, shape, mode):
    """Valid tail indices for a mode; extended mixes both branch signs."""
    pos = rng.uniform(0.05, 2.0, shape)
    if mode is TailMode.GPD_ONLY:
        return pos
    neg = rng.uniform(-1.0, -0.05, shape)
    return np.where(rng.random(shape) < 0.5, pos, neg)


def _check_roundtrip():
    rng = np.random.default_rng(0)
    z = rng.uniform(-8, 8, 20000)
    worst = 0.0
    for mode in (TailMode.GPD_ONLY, TailMode.EXTENDED):
        p = TailParams(
            mu=rng.uniform(-2, 2, z.shape),
            sigma=rng.uniform(0.2, 3.0, z.shape),
            lambda_plus=_draw_lambdas(rng, z.shape, mode),
            lambda_minus=_draw_lambdas(rng, z.shape, mode),
        )
        x = tails.tail_forward_ext(z, p, mode)
        zr = tails.tail_inverse_ext(x, p, mode)
        worst = max(worst, float(np.max(np.abs(zr - z))))
    return worst < 1e-8, f"max |inv(fwd(z)) - z| = {worst:.2e}"


def _check_derivatives():
    rng = np.random.default_rng(1)
    z = rng.uniform(-6, 6, 5000)
    z = np.where(np.abs(z) < 1e-2, 1e-2, z)
    p = TailParams(mu=0.3, sigma=1.4, lambda_plus=0.7, lambda_minus=0.3)
    h = 1e-5
    fd = (tails.tail_forward(z + h, p) - tails.tail_forward(z - h, p)) / (2 * h)
    an = tails.tail_forward_dz(z, p)
    rel = np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1e-9))
    return rel < 1e-6, f"forward derivative vs FD rel err {rel:.2e}"


def _check_origin_slope():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        p = TailParams(
            mu=rng.uniform(-2, 2),
            sigma=rng.uniform(0.5, 2.0),
            lambda_plus=rng.uniform(0.1, 2.0),
            lambda_minus=rng.uniform(0.1, 2.0),
        )
        slopes = []
        for h in (1e-3, 5e-4, 2.5e-4):
            slopes.append(
                float(tails.tail_forward(h, p) - tails.tail_forward(-h, p)) / (2 * h)
            )
        s1 = 2 * slopes[1] - slopes[0]
        s2 = 2 * slopes[2] - slopes[1]
        slope = (4 * s2 - s1) / 3
        target = float(p.sigma) * tails.SQRT_2_OVER_PI
        worst = max(worst, abs(slope - target) / target)
    return worst < 1e-8, f"origin slope vs sigma*sqrt(2/pi) rel err {worst:.2e}"


def _check_rqs():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        raw = list(rng.uniform(-1.5, 1.5, 23))
        knots = decode_rqs_params(raw)
        z = rng.uniform(-4, 4, 500)
        x, ld = _rqs_fwd(z, knots)
        zr, ldi = _rqs_inv(x, knots)
        worst = max(worst, float(np.max(np.abs(zr - z))))
        worst = max(worst, float(np.max(np.abs(ld + ldi))))
    return worst < 1e-8, f"spline round trip err {worst:.2e}"


def _check_gradients():
    rng = np.random.default_rng(4)
    model = build_variant("exf", 2, seed=7)
    X = rng.standard_normal((8, 2)) * 1.5
    tape = ad.Tape()
    pv = model.store.tape_view(tape)
    loss = ad.batch_sum(model.log_prob(X, pv))
    grads = tape.backward(loss)
    names = model.store.names()
    flat = [(n, i) for n in names for i in range(model.store[n].size)]
    worst = 0.0
    for n, i in [flat[j] for j in rng.choice(len(flat), 30, replace=False)]:
        arr = model.store[n]
        orig = arr.flat[i]
        h = 1e-5 * max(1.0, abs(orig))
        arr.flat[i] = orig + h
        fp = float(np.sum(model.log_prob(X)))
        arr.flat[i] = orig - h
        fm = float(np.sum(model.log_prob(X)))
        arr.flat[i] = orig
        fd = (fp - fm) / (2 * h)
        gv = grads[pv[n].flat[i]]
        worst = max(worst, abs(gv - fd) / max(abs(fd), 1e-7))
    return worst < 1e-4, f"model gradient vs FD rel err {worst:.2e}"


def _check_hill():
    rng = np.random.default_rng(5)
    u = rng.random(200000)
    est = metrics.hill_estimator(u ** (-0.5), 2000)
    return abs(est - 0.5) < 0.05, f"hill on exact Pareto(0.5) = {est:.4f}"


CHECKS = [
    ("special-functions", _check_special),
    ("tail-round-trip", _check_roundtrip),
    ("tail-derivatives", _check_derivatives),
    ("origin-slope", _check_origin_slope),
    ("spline-round-trip", _check_rqs),
    ("model-gradients", _check_gradients),
    ("hill-estimator", _check_hill),
]


def run_checks(echo=print):
    """Run all checks, print one PASS/FAIL line each; True if all passed."""
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok = all_ok and ok
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok

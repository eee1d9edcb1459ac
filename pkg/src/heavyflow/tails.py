"""Tail transforms that convert Gaussian tails into generalized-Pareto tails.

The forward map takes a standard-normal-distributed input and produces a
two-sided GPD-tailed output with separate, learnable tail indices for the
upper and lower tail, plus location and scale.  The extended variant also
admits negative tail indices, selecting a lighter power-law branch down to
an exact affine map at index -1.

Everything is written against the generic ops in :mod:`heavyflow.autodiff`,
so one code path serves plain floats, vectorized numpy arrays, and
tape-recorded variables.  Densities and Jacobians are evaluated in log
space throughout; ``erfc(|z|/sqrt 2)`` raised to a negative power is never
materialized on the inverse path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import value_of

SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)

# |z| beyond this makes erfc(|z|/sqrt 2) underflow to zero (scipy's erfc
# returns 0.0 past ~26.6); the transform saturates there with zero gradient.
Z_CAP = 37.0
# floor on log(q) before erfc_inv(q); erfc_inv(exp(-685)) ~ 26.16, i.e. the
# inverse saturates at the same |z| ~ 37 as the forward cap.
LOG_Q_FLOOR = -685.0
# tail indices this close to zero get clamped away from the excluded point
LAMBDA_EPS = 1e-4


class TailMode(Enum):
    """GPD_ONLY forbids non-positive tail indices; EXTENDED allows [-1, 0)."""

    GPD_ONLY = "gpd"
    EXTENDED = "extended"


@dataclass
class TailParams:
    """Per-dimension location, scale and upper/lower tail indices.

    Fields may be floats, numpy arrays or autodiff Vars.
    """

    mu: object
    sigma: object
    lambda_plus: object
    lambda_minus: object


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


def _check_sigma(p):
    _require(np.all(np.asarray(value_of(p.sigma)) > 0.0), "sigma must be positive")


def _check_lambdas(p, mode):
    lp = np.asarray(value_of(p.lambda_plus))
    lm = np.asarray(value_of(p.lambda_minus))
    if mode is TailMode.GPD_ONLY:
        _require(np.all(lp > 0.0) and np.all(lm > 0.0),
                 "GPD-only mode requires positive tail indices")
    else:
        _require(np.all(lp >= -1.0) and np.all(lm >= -1.0),
                 "extended mode requires tail indices >= -1")
        _require(np.all(lp != 0.0) and np.all(lm != 0.0),
                 "tail index 0 is excluded; clamp away from zero")


def _lambda_for(v, p):
    """Tail index of the side the (plain) value v falls on."""
    return ad.where(np.asarray(v) >= 0.0, p.lambda_plus, p.lambda_minus)


def gpd_quantile(u, lam):
    """GPD quantile (1/lam) * ((1-u)^(-lam) - 1) for 0 <= u < 1, lam != 0.

    Computed as expm1(-lam*log1p(-u))/lam, exact through the lam -> 0 limit.
    """
    uv = np.asarray(value_of(u))
    _require(np.all(uv >= 0.0) and np.all(uv < 1.0), "u must lie in [0, 1)")
    _require(np.all(np.asarray(value_of(lam)) != 0.0), "lam must be nonzero")
    return ad.expm1(-lam * ad.log1p(-u)) / lam


def two_tailed(u, lambda_plus, lambda_minus):
    """Signed GPD quantile on (-1, 1) with per-tail indices."""
    uv = np.asarray(value_of(u))
    _require(np.all(np.abs(uv) < 1.0), "u must lie in (-1, 1)")
    _require(
        np.all(np.asarray(value_of(lambda_plus)) > 0.0)
        and np.all(np.asarray(value_of(lambda_minus)) > 0.0),
        "tail indices must be positive",
    )
    lam = ad.where(uv >= 0.0, lambda_plus, lambda_minus)
    return ad.sign(u) * gpd_quantile(ad.absolute(u), lam)


def tail_forward(z, p: TailParams):
    """Gaussian-to-GPD map mu + sigma*(s/lam)*(erfc(|z|/sqrt2)^(-lam) - 1)."""
    _check_sigma(p)
    _check_lambdas(p, TailMode.GPD_ONLY)
    s = ad.sign(z)
    az = ad.minimum(ad.absolute(z), Z_CAP)
    lam = _lambda_for(value_of(z), p)
    bracket = ad.expm1(-lam * ad.log_erfc(az / SQRT2))
    return p.mu + p.sigma * s * bracket / lam


def log_tail_forward_dz(z, p: TailParams):
    """log dR/dz = log sigma + log sqrt(2/pi) - z^2/2 - (lam+1) log erfc(|z|/sqrt2).

    Past the saturation cap the derivative is reported at the cap point.
    """
    _check_sigma(p)
    _check_lambdas(p, TailMode.GPD_ONLY)
    az = ad.minimum(ad.absolute(z), Z_CAP)
    lam = _lambda_for(value_of(z), p)
    return (
        ad.log(p.sigma)
        + 0.5 * LOG_2_OVER_PI
        - 0.5 * az * az
        - (lam + 1.0) * ad.log_erfc(az / SQRT2)
    )


def tail_forward_dz(z, p: TailParams):
    """dR/dz; strictly positive."""
    return ad.exp(log_tail_forward_dz(z, p))


def _inverse_core(x, p, lam):
    """Shared inverse pieces: (log y, |z|/sqrt2 term). y := lam|x~| + 1."""
    xt = ad.absolute((x - p.mu) / p.sigma)
    ly = ad.log1p(lam * xt)  # exact near y = 1
    _require(np.all(np.asarray(value_of(ly)) >= 0.0), "invalid params: y <= 0")
    t = ad.clip(-ly / lam, LOG_Q_FLOOR, 0.0)
    return ly, ad.erfc_inv_exp(t)


def tail_inverse(x, p: TailParams):
    """Exact functional inverse of :func:`tail_forward`."""
    _check_sigma(p)
    _check_lambdas(p, TailMode.GPD_ONLY)
    xv = np.asarray(value_of(x)) - np.asarray(value_of(p.mu))
    lam = ad.where(xv >= 0.0, p.lambda_plus, p.lambda_minus)
    _, e = _inverse_core(x, p, lam)
    return np.sign(xv) * SQRT2 * e


def log_tail_inverse_dx(x, p: TailParams):
    """log dR^-1/dx = -log sigma + log sqrt(pi/2) - (1/lam+1) log y + erfc_inv(q)^2."""
    _check_sigma(p)
    _check_lambdas(p, TailMode.GPD_ONLY)
    xv = np.asarray(value_of(x)) - np.asarray(value_of(p.mu))
    lam = ad.where(xv >= 0.0, p.lambda_plus, p.lambda_minus)
    ly, e = _inverse_core(x, p, lam)
    return -ad.log(p.sigma) - 0.5 * LOG_2_OVER_PI - (1.0 / lam + 1.0) * ly + e * e


def tail_inverse_dx(x, p: TailParams):
    """dR^-1/dx; positive, reciprocal of the forward derivative."""
    return ad.exp(log_tail_inverse_dx(x, p))


def power_tail(z, xi):
    """Power branch sqrt(2/pi) * ((1 + z/xi)^xi - 1) for z >= 0, xi > 0.

    Matches the GPD branch in value and slope at z = 0.
    """
    _require(np.all(np.asarray(value_of(z)) >= 0.0), "power_tail requires z >= 0")
    _require(np.all(np.asarray(value_of(xi)) > 0.0), "power_tail requires xi > 0")
    return SQRT_2_OVER_PI * ad.expm1(xi * ad.log1p(z / xi))


def tail_forward_ext(z, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    """Extended map: GPD branch for lam > 0, power branch for lam in [-1, 0)."""
    if mode is TailMode.GPD_ONLY:
        return tail_forward(z, p)
    _check_sigma(p)
    _check_lambdas(p, mode)
    s = ad.sign(z)
    az = ad.absolute(z)
    az_g = ad.minimum(az, Z_CAP)  # erfc-underflow cap; GPD branch only
    lam = _lambda_for(value_of(z), p)
    pos = np.asarray(value_of(lam)) > 0.0
    gpd = ad.expm1(-lam * ad.log_erfc(az_g / SQRT2)) / lam
    pw = power_tail(az, lam + 2.0)
    return p.mu + p.sigma * s * ad.where(pos, gpd, pw)


def log_tail_forward_ext_dz(z, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    if mode is TailMode.GPD_ONLY:
        return log_tail_forward_dz(z, p)
    _check_sigma(p)
    _check_lambdas(p, mode)
    az = ad.absolute(z)
    az_g = ad.minimum(az, Z_CAP)
    lam = _lambda_for(value_of(z), p)
    pos = np.asarray(value_of(lam)) > 0.0
    gpd = -0.5 * az_g * az_g - (lam + 1.0) * ad.log_erfc(az_g / SQRT2)
    # power branch: dS/dz = sqrt(2/pi) (1 + z/xi)^(xi-1) with xi = lam + 2
    pw = (lam + 1.0) * ad.log1p(az / (lam + 2.0))
    return ad.log(p.sigma) + 0.5 * LOG_2_OVER_PI + ad.where(pos, gpd, pw)


def tail_forward_ext_dz(z, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    return ad.exp(log_tail_forward_ext_dz(z, p, mode))


def _inverse_ext_parts(x, p):
    """Both inverse branches (kept finite where masked out) plus the mask."""
    xv = np.asarray(value_of(x)) - np.asarray(value_of(p.mu))
    lam = ad.where(xv >= 0.0, p.lambda_plus, p.lambda_minus)
    pos = np.asarray(value_of(lam)) > 0.0
    xt = ad.absolute((x - p.mu) / p.sigma)

    lam_g = ad.where(pos, lam, 1.0)  # masked-out rows use a safe dummy index
    ly = ad.log1p(lam_g * xt)
    t = ad.clip(-ly / lam_g, LOG_Q_FLOOR, 0.0)
    e = ad.erfc_inv_exp(t)

    xi = ad.where(pos, 1.0, lam + 2.0)
    lw = ad.log1p(xt / SQRT_2_OVER_PI)
    return np.sign(xv), pos, lam_g, ly, e, xi, lw


def tail_inverse_ext(x, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    """Inverse of :func:`tail_forward_ext`, analytic in both branches."""
    if mode is TailMode.GPD_ONLY:
        return tail_inverse(x, p)
    _check_sigma(p)
    _check_lambdas(p, mode)
    s, pos, _, _, e, xi, lw = _inverse_ext_parts(x, p)
    z_gpd = SQRT2 * e
    z_pw = xi * ad.expm1(lw / xi)
    return s * ad.where(pos, z_gpd, z_pw)


def log_tail_inverse_ext_dx(x, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    if mode is TailMode.GPD_ONLY:
        return log_tail_inverse_dx(x, p)
    _check_sigma(p)
    _check_lambdas(p, mode)
    _, pos, lam_g, ly, e, xi, lw = _inverse_ext_parts(x, p)
    gpd = -(1.0 / lam_g + 1.0) * ly + e * e
    pw = (1.0 / xi - 1.0) * lw
    return -ad.log(p.sigma) - 0.5 * LOG_2_OVER_PI + ad.where(pos, gpd, pw)


def tail_inverse_ext_dx(x, p: TailParams, mode: TailMode = TailMode.EXTENDED):
    return ad.exp(log_tail_inverse_ext_dx(x, p, mode))


def tail_inverse_ext_with_logdet(x, p: TailParams, mode: TailMode):
    """(z, log dz/dx) in one pass; the layer hot path."""
    _check_sigma(p)
    _check_lambdas(p, mode)
    if mode is TailMode.GPD_ONLY:
        xv = np.asarray(value_of(x)) - np.asarray(value_of(p.mu))
        lam = ad.where(xv >= 0.0, p.lambda_plus, p.lambda_minus)
        ly, e = _inverse_core(x, p, lam)
        z = np.sign(xv) * SQRT2 * e
        ld = -ad.log(p.sigma) - 0.5 * LOG_2_OVER_PI - (1.0 / lam + 1.0) * ly + e * e
        return z, ld
    s, pos, lam_g, ly, e, xi, lw = _inverse_ext_parts(x, p)
    z = s * ad.where(pos, SQRT2 * e, xi * ad.expm1(lw / xi))
    ld = (
        -ad.log(p.sigma)
        - 0.5 * LOG_2_OVER_PI
        + ad.where(pos, -(1.0 / lam_g + 1.0) * ly + e * e, (1.0 / xi - 1.0) * lw)
    )
    return z, ld


def tail_log_det(zs, params):
    """Sum of log forward derivatives across dimensions (diagonal Jacobian)."""
    return ad.add_n([log_tail_forward_dz(z, p) for z, p in zip(zs, params)])


def tail_log_det_ext(zs, params, mode: TailMode = TailMode.EXTENDED):
    return ad.add_n(
        [log_tail_forward_ext_dz(z, p, mode) for z, p in zip(zs, params)]
    )


def clamp_away_from_zero(lam, eps=LAMBDA_EPS):
    """Push values in [-eps, eps] to the nearest allowed side (0 -> +eps)."""
    mask = np.asarray(value_of(lam)) >= 0.0
    return ad.where(mask, ad.maximum(lam, eps), ad.minimum(lam, -eps))

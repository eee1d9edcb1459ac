"""Invertible flow layers.

Layers expose two passes over lists of per-dimension columns (floats,
numpy batch vectors, or autodiff Vars):

* ``inverse(xs, pv) -> (zs, logdet)``, the density-estimation direction
  x -> z, with logdet = sum_i log |dz_i/dx_i|.  For autoregressive layers
  this is the single-network-pass direction.
* ``forward(zs, pv) -> (xs, logdet)``, the sampling direction z -> x;
  autoregressive layers run it dimension-by-dimension.

``pv`` is a parameter view: name -> plain float array (evaluation) or
object array of tape Vars (training).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tails
from .autodiff import value_of
from .tails import TailMode, TailParams


def _softplus_inv(y):
    """Raw value r with softplus(r) = y; stable for large y."""
    if y > 30.0:
        return float(y + np.log1p(-np.exp(-y)))
    return float(np.log(np.expm1(y)))


class ParamStore:
    """Ordered registry of named float64 parameter arrays."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name, init):
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(init, dtype=float)
        self._arrays[name] = arr
        return arr

    def names(self):
        return list(self._arrays)

    def arrays(self):
        return dict(self._arrays)

    def __getitem__(self, name):
        return self._arrays[name]

    @property
    def n_params(self):
        return int(sum(a.size for a in self._arrays.values()))

    def float_view(self):
        """Plain-value view for non-differentiated evaluation."""
        return self._arrays

    def tape_view(self, tape):
        """Fresh leaves on ``tape`` for every parameter element."""
        return {name: tape.leaves(arr) for name, arr in self._arrays.items()}

    def snapshot(self):
        return {name: arr.copy() for name, arr in self._arrays.items()}

    def restore(self, snap):
        for name, arr in self._arrays.items():
            np.copyto(arr, snap[name])


class MaskedConditioner:
    """Masked feed-forward net: the heads for dimension i see only x_{<i}.

    Two tanh hidden layers of width d + 10 with sequential degrees
    (inputs 1..d, hidden cycling 1..d-1, head i connecting to degrees
    <= i).  Output heads are zero-initialized so driven layers start at
    identity-like configurations.  For d = 1 the heads are pure biases.
    """

    def __init__(self, store, prefix, d, out_per_dim, rng):
        self.d = d
        self.out_per_dim = out_per_dim
        self._p = prefix
        width = d + 10
        self.width = width

        if d >= 2:
            m = np.array([(j % (d - 1)) + 1 for j in range(width)])
            self._in1 = [np.nonzero(np.arange(d) + 1 <= m[j])[0] for j in range(width)]
            self._in2 = [np.nonzero(m <= m[j])[0] for j in range(width)]
            self._out = [np.nonzero(m <= i)[0] for i in range(d)]

            w1 = np.zeros((width, d))
            for j, idx in enumerate(self._in1):
                a = 1.0 / math.sqrt(len(idx))
                w1[j, idx] = rng.uniform(-a, a, size=len(idx))
            w2 = np.zeros((width, width))
            for j, idx in enumerate(self._in2):
                a = 1.0 / math.sqrt(len(idx))
                w2[j, idx] = rng.uniform(-a, a, size=len(idx))
            store.add(prefix + ".w1", w1)
            store.add(prefix + ".b1", np.zeros(width))
            store.add(prefix + ".w2", w2)
            store.add(prefix + ".b2", np.zeros(width))
            store.add(prefix + ".w_out", np.zeros((d * out_per_dim, width)))
        store.add(prefix + ".b_out", np.zeros(d * out_per_dim))

    def apply(self, xs, pv):
        """Single network pass; returns per-dimension head value lists."""
        opd = self.out_per_dim
        b_out = pv[self._p + ".b_out"]
        if self.d == 1:
            return [[b_out[c] for c in range(opd)]]

        w1 = pv[self._p + ".w1"]
        b1 = pv[self._p + ".b1"]
        w2 = pv[self._p + ".w2"]
        b2 = pv[self._p + ".b2"]
        w_out = pv[self._p + ".w_out"]

        h1 = [
            ad.tanh(
                ad.linear_combination(
                    b1[j], list(w1[j, idx]), [xs[i] for i in idx]
                )
            )
            for j, idx in enumerate(self._in1)
        ]
        h2 = [
            ad.tanh(
                ad.linear_combination(
                    b2[j], list(w2[j, idx]), [h1[k] for k in idx]
                )
            )
            for j, idx in enumerate(self._in2)
        ]
        heads = []
        for i in range(self.d):
            idx = self._out[i]
            hsel = [h2[j] for j in idx]
            row0 = i * opd
            heads.append(
                [
                    ad.linear_combination(
                        b_out[row0 + c], list(w_out[row0 + c, idx]), hsel
                    )
                    for c in range(opd)
                ]
            )
        return heads


# rational-quadratic spline ------------------------------------------

RQS_BINS = 8
RQS_BOUND = 2.5
RQS_MIN_BIN = 1e-3
RQS_MIN_DERIV = 1e-3
_DERIV_SHIFT = _softplus_inv(1.0 - RQS_MIN_DERIV)  # softplus(raw+shift)+min = 1 at raw 0


@dataclass
class RQSKnots:
    """Decoded monotone spline on [-bound, bound]: identity outside."""

    widths: list
    heights: list
    derivs: list  # K+1 knot derivatives, boundary ones fixed at 1
    knots_x: list
    knots_y: list
    bound: float = RQS_BOUND


def _simplex_bins(raws, total, min_frac):
    k = len(raws)
    m = raws[0]
    for r in raws[1:]:
        m = ad.maximum(m, r)
    es = [ad.exp(r - m) for r in raws]
    tot = ad.add_n(es)
    lo = total * min_frac
    scale = total * (1.0 - k * min_frac)
    return [lo + scale * (e / tot) for e in es]


def _cum_knots(widths, bound):
    knots = [-bound]
    acc = -bound
    for w in widths:
        acc = acc + w
        knots.append(acc)
    return knots


def decode_rqs_params(raw, n_bins=RQS_BINS, bound=RQS_BOUND):
    """Raw conditioner outputs (3K-1 scalars) -> valid monotone knots."""
    k = n_bins
    widths = _simplex_bins(raw[:k], 2.0 * bound, RQS_MIN_BIN)
    heights = _simplex_bins(raw[k : 2 * k], 2.0 * bound, RQS_MIN_BIN)
    interior = [RQS_MIN_DERIV + ad.softplus(r + _DERIV_SHIFT) for r in raw[2 * k :]]
    derivs = [1.0] + interior + [1.0]
    return RQSKnots(
        widths=widths,
        heights=heights,
        derivs=derivs,
        knots_x=_cum_knots(widths, bound),
        knots_y=_cum_knots(heights, bound),
        bound=bound,
    )


def _bin_index(t, knots):
    """Bin index per row from plain knot values (interior comparisons only)."""
    tv = np.asarray(value_of(t))
    idx = np.zeros(tv.shape, dtype=int)
    for k in range(1, len(knots) - 1):
        idx += tv >= np.asarray(value_of(knots[k]))
    return idx


def _gather(knots, idx):
    wk = ad.select(idx, knots.widths)
    hk = ad.select(idx, knots.heights)
    xk = ad.select(idx, knots.knots_x)
    yk = ad.select(idx, knots.knots_y)
    dk = ad.select(idx, knots.derivs[:-1])
    dk1 = ad.select(idx, knots.derivs[1:])
    return wk, hk, xk, yk, dk, dk1


def _log_slope(sk, dk, dk1, xi, omx, denom):
    num = dk1 * xi * xi + 2.0 * sk * xi * omx + dk * omx * omx
    return 2.0 * ad.log(sk) + ad.log(num) - 2.0 * ad.log(denom)


def rqs_forward(z, knots: RQSKnots):
    """Monotone map on R: rational-quadratic inside the box, identity outside.

    Returns (x, log dx/dz).
    """
    b = knots.bound
    inside = np.abs(np.asarray(value_of(z))) <= b
    zin = ad.clip(z, -b, b)
    idx = _bin_index(zin, knots.knots_x)
    wk, hk, xk, yk, dk, dk1 = _gather(knots, idx)
    sk = hk / wk
    xi = (zin - xk) / wk
    omx = 1.0 - xi
    q = xi * omx
    denom = sk + (dk1 + dk - 2.0 * sk) * q
    y = yk + hk * (sk * xi * xi + dk * q) / denom
    logdz = _log_slope(sk, dk, dk1, xi, omx, denom)
    return ad.where(inside, y, z), ad.where(inside, logdz, 0.0)


def rqs_inverse(x, knots: RQSKnots):
    """Analytic inverse via the stable quadratic root.

    Returns (z, log dz/dx).
    """
    b = knots.bound
    inside = np.abs(np.asarray(value_of(x))) <= b
    xin = ad.clip(x, -b, b)
    idx = _bin_index(xin, knots.knots_y)
    wk, hk, xk, yk, dk, dk1 = _gather(knots, idx)
    sk = hk / wk
    yt = xin - yk
    u = dk1 + dk - 2.0 * sk
    qa = hk * (sk - dk) + yt * u
    qb = hk * dk - yt * u
    qc = -sk * yt
    disc = ad.maximum(qb * qb - 4.0 * qa * qc, 1e-300)
    xi = (2.0 * qc) / (-qb - ad.sqrt(disc))
    omx = 1.0 - xi
    denom = sk + u * xi * omx
    z = xk + xi * wk
    logdz = -_log_slope(sk, dk, dk1, xi, omx, denom)
    return ad.where(inside, z, x), ad.where(inside, logdz, 0.0)


def _zeros_like_cols(cols):
    shapes = [np.shape(value_of(c)) for c in cols]
    batch = next((s for s in shapes if s), ())
    return [np.zeros(batch) if batch else 0.0 for _ in cols]


class RQSLayer:
    """Autoregressive rational-quadratic spline layer."""

    def __init__(self, store, prefix, d, rng, n_bins=RQS_BINS, bound=RQS_BOUND):
        self.d = d
        self.n_bins = n_bins
        self.bound = bound
        self.cond = MaskedConditioner(store, prefix + ".cond", d, 3 * n_bins - 1, rng)

    def _knots(self, heads, i):
        return decode_rqs_params(heads[i], self.n_bins, self.bound)

    def inverse(self, xs, pv):
        heads = self.cond.apply(xs, pv)
        zs, lds = [], []
        for i in range(self.d):
            z, ld = rqs_inverse(xs[i], self._knots(heads, i))
            zs.append(z)
            lds.append(ld)
        return zs, ad.add_n(lds)

    def forward(self, zs, pv):
        cur = _zeros_like_cols(zs)
        lds = []
        for i in range(self.d):
            heads = self.cond.apply(cur, pv)
            x, ld = rqs_forward(zs[i], self._knots(heads, i))
            cur[i] = x
            lds.append(ld)
        return cur, ad.add_n(lds)


class AffineLayer:
    """Autoregressive elementwise x = shift + exp(log_scale) * z."""

    def __init__(self, store, prefix, d, rng):
        self.d = d
        self.cond = MaskedConditioner(store, prefix + ".cond", d, 2, rng)

    def inverse(self, xs, pv):
        heads = self.cond.apply(xs, pv)
        zs, lds = [], []
        for i in range(self.d):
            shift, ls = heads[i]
            zs.append((xs[i] - shift) * ad.exp(-ls))
            lds.append(-ls)
        return zs, ad.add_n(lds)

    def forward(self, zs, pv):
        cur = _zeros_like_cols(zs)
        lds = []
        for i in range(self.d):
            heads = self.cond.apply(cur, pv)
            shift, ls = heads[i]
            cur[i] = shift + ad.exp(ls) * zs[i]
            lds.append(ls)
        return cur, ad.add_n(lds)


class LULinearLayer:
    """x = P L U z with unit-lower L, positive-diagonal U, fixed reversal P."""

    DIAG_SHIFT = _softplus_inv(1.0 - 1e-4)

    def __init__(self, store, prefix, d, rng):
        self.d = d
        self._p = prefix
        store.add(prefix + ".lower", np.zeros((d, d)))
        store.add(prefix + ".upper", np.zeros((d, d)))
        store.add(prefix + ".raw_diag", np.full(d, self.DIAG_SHIFT))

    def _diag(self, pv):
        raw = pv[self._p + ".raw_diag"]
        return [1e-4 + ad.softplus(raw[i]) for i in range(self.d)]

    def forward(self, zs, pv):
        d = self.d
        lo = pv[self._p + ".lower"]
        up = pv[self._p + ".upper"]
        diag = self._diag(pv)
        u = [
            ad.linear_combination(
                0.0,
                [diag[i]] + list(up[i, i + 1 :]),
                [zs[i]] + zs[i + 1 :],
            )
            for i in range(d)
        ]
        v = [
            ad.linear_combination(0.0, [1.0] + list(lo[i, :i]), [u[i]] + u[:i])
            for i in range(d)
        ]
        xs = v[::-1]
        ld = ad.add_n([ad.log(di) for di in diag])
        return xs, ld

    def inverse(self, xs, pv):
        d = self.d
        lo = pv[self._p + ".lower"]
        up = pv[self._p + ".upper"]
        diag = self._diag(pv)
        v = xs[::-1]
        u = []
        for i in range(d):
            u.append(
                ad.linear_combination(0.0, [1.0] + [-w for w in lo[i, :i]], [v[i]] + u)
            )
        zs = [None] * d
        for i in range(d - 1, -1, -1):
            acc = ad.linear_combination(
                0.0,
                [1.0] + [-w for w in up[i, i + 1 :]],
                [u[i]] + zs[i + 1 :],
            )
            zs[i] = acc / diag[i]
        ld = ad.add_n([-ad.log(di) for di in diag])
        return zs, ld


class TailLayer:
    """Final layer applying the GPD/extended tail transform elementwise.

    ``marginal=True`` uses d independent free parameter 4-tuples instead of
    a masked conditioner.  Decoding shifts are chosen so zero raw values
    give mu = 0, sigma = sqrt(pi/2) (unit slope at the origin) and a mild
    initial tail index (0.25 for GPD mode, -0.9 for extended mode).
    """

    SIGMA_SHIFT = _softplus_inv(math.sqrt(math.pi / 2.0) - 1e-4)
    GPD_LAMBDA_SHIFT = _softplus_inv(0.25 - 1e-4)
    EXT_LAMBDA_SHIFT = _softplus_inv(0.1)

    def __init__(self, store, prefix, d, rng, mode=TailMode.EXTENDED, marginal=False):
        self.d = d
        self.mode = mode
        self.marginal = marginal
        self._p = prefix
        if marginal:
            store.add(prefix + ".raw", np.zeros((d, 4)))
            self.cond = None
        else:
            self.cond = MaskedConditioner(store, prefix + ".cond", d, 4, rng)

    def _decode(self, raw4):
        mu_raw, sig_raw, lp_raw, lm_raw = raw4
        sigma = 1e-4 + ad.softplus(sig_raw + self.SIGMA_SHIFT)
        if self.mode is TailMode.GPD_ONLY:
            lp = 1e-4 + ad.softplus(lp_raw + self.GPD_LAMBDA_SHIFT)
            lm = 1e-4 + ad.softplus(lm_raw + self.GPD_LAMBDA_SHIFT)
        else:
            lp = tails.clamp_away_from_zero(
                ad.softplus(lp_raw + self.EXT_LAMBDA_SHIFT) - 1.0
            )
            lm = tails.clamp_away_from_zero(
                ad.softplus(lm_raw + self.EXT_LAMBDA_SHIFT) - 1.0
            )
        return TailParams(mu=mu_raw, sigma=sigma, lambda_plus=lp, lambda_minus=lm)

    def _heads(self, xs, pv):
        if self.marginal:
            raw = pv[self._p + ".raw"]
            return [[raw[i, c] for c in range(4)] for i in range(self.d)]
        return self.cond.apply(xs, pv)

    def inverse(self, xs, pv):
        heads = self._heads(xs, pv)
        zs, lds = [], []
        for i in range(self.d):
            p = self._decode(heads[i])
            z, ld = tails.tail_inverse_ext_with_logdet(xs[i], p, self.mode)
            zs.append(z)
            lds.append(ld)
        return zs, ad.add_n(lds)

    def forward(self, zs, pv):
        if self.marginal:
            heads = self._heads(zs, pv)
            xs, lds = [], []
            for i in range(self.d):
                p = self._decode(heads[i])
                xs.append(tails.tail_forward_ext(zs[i], p, self.mode))
                lds.append(tails.log_tail_forward_ext_dz(zs[i], p, self.mode))
            return xs, ad.add_n(lds)
        cur = _zeros_like_cols(zs)
        lds = []
        for i in range(self.d):
            heads = self._heads(cur, pv)
            p = self._decode(heads[i])
            x = tails.tail_forward_ext(zs[i], p, self.mode)
            lds.append(tails.log_tail_forward_ext_dz(zs[i], p, self.mode))
            cur[i] = x
        return cur, ad.add_n(lds)

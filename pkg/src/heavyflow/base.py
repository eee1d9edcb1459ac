"""Base densities for the z-side of a flow.

Standard multivariate normal, and independent Student's T marginals with
trainable degrees of freedom (the heavy-tailed-base alternative).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as _stats

from . import autodiff as ad
from . import special
from .autodiff import value_of

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)
NU_FLOOR = 1e-3
NU_INIT = 30.0


class StdNormal:
    """N(0, I_d) base; no trainable parameters."""

    def __init__(self, d):
        self.d = d

    def log_prob_cols(self, cols, pv=None):
        terms = [-0.5 * c * c for c in cols]
        return ad.add_n(terms) - 0.5 * self.d * LOG_2PI

    def sample(self, count, rng):
        return rng.standard_normal((count, self.d))

    def cdf_1d(self, z, pv=None):
        return special.normal_cdf(z)


class StudentT:
    """Independent t_{nu_i} marginals; nu trained jointly with the flow.

    nu_i = softplus(raw_i) + 1e-3 keeps the degrees of freedom positive;
    initialization is near-Gaussian (nu = 30) so data pulls tails heavier.
    """

    def __init__(self, store, prefix, d, init_nu=NU_INIT):
        from .layers import _softplus_inv

        self.d = d
        self._name = prefix + ".raw_nu"
        self._raw = store.add(self._name, np.full(d, _softplus_inv(init_nu - NU_FLOOR)))

    def _nus(self, pv):
        raw = pv[self._name]
        return [NU_FLOOR + ad.softplus(raw[i]) for i in range(self.d)]

    def log_prob_cols(self, cols, pv):
        nus = self._nus(pv)
        terms = []
        for c, nu in zip(cols, nus):
            half = 0.5 * (nu + 1.0)
            terms.append(
                ad.log_gamma(half)
                - ad.log_gamma(0.5 * nu)
                - 0.5 * (ad.log(nu) + LOG_PI)
                - half * ad.log1p(c * c / nu)
            )
        return ad.add_n(terms)

    def nu_values(self, pv):
        return np.array([float(value_of(n)) for n in self._nus(pv)])

    def sample(self, count, rng):
        out = np.empty((count, self.d))
        nus = [NU_FLOOR + float(np.logaddexp(0.0, r)) for r in self._raw]
        for i, nu in enumerate(nus):
            n = rng.standard_normal(count)
            chi2 = rng.chisquare(nu, size=count)
            out[:, i] = n / np.sqrt(chi2 / nu)
        return out

    def cdf_1d(self, z, pv):
        nu = float(value_of(self._nus(pv)[0]))
        return _stats.t.cdf(z, df=nu)

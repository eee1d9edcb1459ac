"""Flow model: base distribution + ordered invertible layers.

Layer lists run z-side -> x-side; density evaluation applies inverses from
the x side and accumulates per-layer log-determinants in log space.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .base import StdNormal, StudentT
from .layers import AffineLayer, LULinearLayer, ParamStore, RQSLayer, TailLayer
from .tails import TailMode

VARIANTS = ("rqs", "gtaf", "ttf", "ttf_m", "exf")


class EvaluationFault(RuntimeError):
    """Non-finite intermediate during density evaluation (numerical blow-up)."""

    def __init__(self, layer_index, message):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


def _all_finite(cols):
    for c in cols:
        if not np.all(np.isfinite(value_of(c))):
            return False
    return True


class FlowModel:
    """Composable density estimator with exact log-density and sampling."""

    def __init__(self, base, layers, variant, store, d, include_affine=False):
        self.base = base
        self.layers = list(layers)
        self.variant = variant
        self.store = store
        self.d = d
        self.include_affine = include_affine

    @property
    def n_params(self):
        return self.store.n_params

    def param_view(self, tape=None):
        return self.store.float_view() if tape is None else self.store.tape_view(tape)

    def _columns(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} columns, got {X.shape[1]}")
        return [np.ascontiguousarray(X[:, i]) for i in range(self.d)]

    def log_prob(self, X, pv=None):
        """Per-row log density; differentiable when ``pv`` is a tape view.

        Raises :class:`EvaluationFault` on a non-finite intermediate, with
        the index of the layer that produced it.
        """
        if pv is None:
            pv = self.store.float_view()
        cols = self._columns(X)
        lds = []
        for k in range(len(self.layers) - 1, -1, -1):
            cols, ld = self.layers[k].inverse(cols, pv)
            if not (_all_finite(cols) and np.all(np.isfinite(value_of(ld)))):
                raise EvaluationFault(k, "non-finite inverse output")
            lds.append(ld)
        lp = self.base.log_prob_cols(cols, pv)
        return ad.add_n([lp] + lds)

    def sample(self, count, seed):
        """Push base samples through the forward stack (plain numpy path)."""
        rng = np.random.default_rng(seed)
        Z = self.base.sample(count, rng)
        if count == 0:
            return Z
        pv = self.store.float_view()
        cols = [Z[:, i] for i in range(self.d)]
        for layer in self.layers:
            cols, _ = layer.forward(cols, pv)
        return np.column_stack([np.asarray(c) for c in cols])

    def cdf_1d(self, x):
        """Model CDF for d = 1 via the inverse chain and the base CDF."""
        if self.d != 1:
            raise ValueError("cdf_1d requires a one-dimensional model")
        pv = self.store.float_view()
        cols = [np.atleast_1d(np.asarray(x, dtype=float))]
        for k in range(len(self.layers) - 1, -1, -1):
            cols, _ = self.layers[k].inverse(cols, pv)
        return self.base.cdf_1d(np.asarray(cols[0]), pv)


def build_variant(variant, d, seed=0, include_affine=False):
    """Construct one of the five architectures (layer lists z-side -> x-side).

    rqs / gtaf: [LU linear, RQS, affine] over a normal / Student-T base.
    ttf / ttf_m / exf: [RQS, LU linear, tail layer]; the tail layer's
    location-scale plays the affine role unless ``include_affine`` inserts
    an explicit affine layer after the RQS.
    """
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    store = ParamStore()
    rng = np.random.default_rng(seed)
    if variant in ("rqs", "gtaf"):
        if variant == "gtaf":
            base = StudentT(store, "base", d)
        else:
            base = StdNormal(d)
        layers = [
            LULinearLayer(store, "layers.0.lu", d, rng),
            RQSLayer(store, "layers.1.rqs", d, rng),
            AffineLayer(store, "layers.2.affine", d, rng),
        ]
    else:
        base = StdNormal(d)
        mode = TailMode.GPD_ONLY if variant == "exf" else TailMode.EXTENDED
        marginal = variant == "ttf_m"
        layers = [RQSLayer(store, "layers.0.rqs", d, rng)]
        if include_affine:
            layers.append(AffineLayer(store, f"layers.{len(layers)}.affine", d, rng))
        layers.append(LULinearLayer(store, f"layers.{len(layers)}.lu", d, rng))
        layers.append(
            TailLayer(
                store,
                f"layers.{len(layers)}.tail",
                d,
                rng,
                mode=mode,
                marginal=marginal,
            )
        )
    return FlowModel(
        base, layers, variant, store, d, include_affine=include_affine
    )

"""Layer contracts: masking, spline algebra, LU inversion, log-dets."""

import math

import numpy as np
import pytest

from heavyflow import autodiff as ad
from heavyflow.layers import (
    AffineLayer,
    LULinearLayer,
    MaskedConditioner,
    ParamStore,
    RQSLayer,
    TailLayer,
    decode_rqs_params,
    rqs_forward,
    rqs_inverse,
)
from heavyflow.tails import TailMode


def _cols(X):
    X = np.atleast_2d(X)
    return [X[:, i] for i in range(X.shape[1])]


def _mat(cols):
    return np.column_stack([np.asarray(ad.value_of(c)) for c in cols])


class TestMaskedConditioner:
    def test_d1_is_input_independent(self):
        store = ParamStore()
        cond = MaskedConditioner(store, "c", 1, 3, np.random.default_rng(0))
        store["c.b_out"][:] = [1.0, 2.0, 3.0]
        h1 = cond.apply([np.array([5.0])], store.float_view())
        h2 = cond.apply([np.array([-7.0])], store.float_view())
        assert [float(v) for v in h1[0]] == [1.0, 2.0, 3.0]
        assert [float(v) for v in h2[0]] == [1.0, 2.0, 3.0]

    def test_jacobian_mask(self):
        # perturbing x_j may change heads only for dimensions i > j
        d = 5
        store = ParamStore()
        rng = np.random.default_rng(1)
        cond = MaskedConditioner(store, "c", d, 2, rng)
        store["c.w_out"][:] = rng.normal(size=store["c.w_out"].shape)
        store["c.b_out"][:] = rng.normal(size=d * 2)
        x0 = rng.normal(size=d)
        base = cond.apply(_cols(x0.reshape(1, -1)), store.float_view())
        for j in range(d):
            x1 = x0.copy()
            x1[j] += 0.37
            pert = cond.apply(_cols(x1.reshape(1, -1)), store.float_view())
            for i in range(d):
                delta = max(
                    abs(float(a[0]) - float(b[0])) for a, b in zip(base[i], pert[i])
                )
                if i <= j:
                    assert delta == 0.0, f"head {i} leaked input {j}"

    def test_zero_weights_give_biases(self):
        d = 3
        store = ParamStore()
        cond = MaskedConditioner(store, "c", d, 2, np.random.default_rng(2))
        store["c.w1"][:] = 0.0
        store["c.w2"][:] = 0.0
        store["c.w_out"][:] = 0.0
        store["c.b_out"][:] = np.arange(6.0)
        heads = cond.apply(_cols(np.ones((1, d))), store.float_view())
        flat = [float(v[0]) if np.ndim(ad.value_of(v)) else float(v) for h in heads for v in h]
        assert flat == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


class TestRQS:
    def test_identity_outside_box(self):
        raw = list(np.random.default_rng(3).uniform(-1, 1, 23))
        knots = decode_rqs_params(raw)
        x, ld = rqs_forward(3.0, knots)
        assert float(x) == 3.0
        assert float(ld) == 0.0

    def test_identity_configuration(self):
        knots = decode_rqs_params([0.0] * 23)
        z = np.linspace(-2.4, 2.4, 97)
        x, ld = rqs_forward(z, knots)
        assert np.max(np.abs(np.asarray(x) - z)) < 1e-12
        assert np.max(np.abs(np.asarray(ld))) < 1e-12

    def test_inverse_round_trip_random_knots(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(50):
            knots = decode_rqs_params(list(rng.uniform(-2, 2, 23)))
            z = rng.uniform(-4, 4, 400)
            x, ld_f = rqs_forward(z, knots)
            zr, ld_i = rqs_inverse(np.asarray(x), knots)
            worst = max(worst, float(np.max(np.abs(np.asarray(zr) - z))))
            worst = max(worst, float(np.max(np.abs(np.asarray(ld_f) + np.asarray(ld_i)))))
        assert worst < 1e-8

    def test_derivative_positive_and_matches_fd(self):
        rng = np.random.default_rng(5)
        knots = decode_rqs_params(list(rng.uniform(-1.5, 1.5, 23)))
        z = rng.uniform(-2.45, 2.45, 200)
        _, ld = rqs_forward(z, knots)
        h = 1e-6
        xp, _ = rqs_forward(z + h, knots)
        xm, _ = rqs_forward(z - h, knots)
        fd = (np.asarray(xp) - np.asarray(xm)) / (2 * h)
        assert np.all(fd > 0)
        np.testing.assert_allclose(np.exp(np.asarray(ld)), fd, rtol=1e-5)


class TestLULinear:
    def test_identity_at_init(self):
        store = ParamStore()
        lu = LULinearLayer(store, "lu", 4, np.random.default_rng(6))
        z = np.random.default_rng(7).normal(size=(3, 4))
        x, ld = lu.forward(_cols(z), store.float_view())
        np.testing.assert_allclose(_mat(x), z[:, ::-1], atol=1e-12)
        assert abs(float(ld)) < 1e-10

    def test_diag_scaling_logdet(self):
        d = 6
        store = ParamStore()
        lu = LULinearLayer(store, "lu", d, np.random.default_rng(8))
        c = 2.5
        store["lu.raw_diag"][:] = math.log(math.expm1(c - 1e-4))
        _, ld = lu.forward(_cols(np.zeros((1, d))), store.float_view())
        assert float(ld) == pytest.approx(d * math.log(c), rel=1e-10)

    def test_inverse_round_trip_d10(self):
        d = 10
        rng = np.random.default_rng(9)
        store = ParamStore()
        lu = LULinearLayer(store, "lu", d, rng)
        store["lu.lower"][:] = rng.normal(scale=0.5, size=(d, d))
        store["lu.upper"][:] = rng.normal(scale=0.5, size=(d, d))
        store["lu.raw_diag"][:] = rng.normal(scale=0.3, size=d) + 0.54
        z = rng.normal(size=(20, d))
        x, ld_f = lu.forward(_cols(z), store.float_view())
        zr, ld_i = lu.inverse(x, store.float_view())
        assert np.max(np.abs(_mat(zr) - z)) < 1e-10
        assert float(ld_f) + float(ld_i) == pytest.approx(0.0, abs=1e-12)


class TestAffine:
    def test_identity_at_init(self):
        store = ParamStore()
        layer = AffineLayer(store, "a", 3, np.random.default_rng(10))
        x = np.random.default_rng(11).normal(size=(5, 3))
        z, ld = layer.inverse(_cols(x), store.float_view())
        np.testing.assert_allclose(_mat(z), x, atol=1e-14)
        np.testing.assert_allclose(np.asarray(ad.value_of(ld)), 0.0, atol=1e-14)

    def test_round_trip(self):
        rng = np.random.default_rng(12)
        store = ParamStore()
        layer = AffineLayer(store, "a", 4, rng)
        store["a.cond.w_out"][:] = rng.normal(scale=0.3, size=store["a.cond.w_out"].shape)
        store["a.cond.b_out"][:] = rng.normal(scale=0.3, size=8)
        z = rng.normal(size=(30, 4))
        x, ld_f = layer.forward(_cols(z), store.float_view())
        zr, ld_i = layer.inverse(x, store.float_view())
        assert np.max(np.abs(_mat(zr) - z)) < 1e-10
        np.testing.assert_allclose(
            np.asarray(ad.value_of(ld_f)), -np.asarray(ad.value_of(ld_i)), atol=1e-12
        )

    def test_logdet_additive_under_stacking(self):
        rng = np.random.default_rng(13)
        store = ParamStore()
        l1 = AffineLayer(store, "a1", 2, rng)
        l2 = AffineLayer(store, "a2", 2, rng)
        for p in ("a1", "a2"):
            store[f"{p}.cond.b_out"][:] = rng.normal(scale=0.4, size=4)
        x = rng.normal(size=(7, 2))
        z1, ld1 = l1.inverse(_cols(x), store.float_view())
        z2, ld2 = l2.inverse(z1, store.float_view())
        total = np.asarray(ad.value_of(ld1)) + np.asarray(ad.value_of(ld2))
        # compare against FD slope product of the composed map
        h = 1e-6
        for i in range(2):
            xp = x.copy()
            xp[:, i] += h
            xm = x.copy()
            xm[:, i] -= h
            zp = _mat(l2.inverse(l1.inverse(_cols(xp), store.float_view())[0], store.float_view())[0])
            zm = _mat(l2.inverse(l1.inverse(_cols(xm), store.float_view())[0], store.float_view())[0])
            slope = (zp[:, i] - zm[:, i]) / (2 * h)
            total -= np.log(np.abs(slope))
        assert np.max(np.abs(total)) < 1e-5


def _triangular_jacobian(layer, store, d, direction, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=d) * 0.8
    h = 1e-6
    J = np.zeros((d, d))
    fn = layer.inverse if direction == "inverse" else layer.forward
    for j in range(d):
        xp = x0.copy()
        xp[j] += h
        xm = x0.copy()
        xm[j] -= h
        op = _mat(fn(_cols(xp.reshape(1, -1)), store.float_view())[0])[0]
        om = _mat(fn(_cols(xm.reshape(1, -1)), store.float_view())[0])[0]
        J[:, j] = (op - om) / (2 * h)
    return J


@pytest.mark.parametrize("layer_cls", [RQSLayer, AffineLayer])
def test_autoregressive_jacobian_triangular(layer_cls):
    d = 5
    store = ParamStore()
    rng = np.random.default_rng(14)
    layer = layer_cls(store, "l", d, rng)
    store["l.cond.w_out"][:] = rng.normal(scale=0.2, size=store["l.cond.w_out"].shape)
    store["l.cond.b_out"][:] = rng.normal(scale=0.2, size=store["l.cond.b_out"].shape)
    J = _triangular_jacobian(layer, store, d, "inverse", seed=15)
    upper = np.triu(J, k=1)
    assert np.max(np.abs(upper)) < 1e-10


def test_tail_layer_triangular_and_roundtrip():
    d = 4
    store = ParamStore()
    rng = np.random.default_rng(16)
    layer = TailLayer(store, "t", d, rng, mode=TailMode.GPD_ONLY)
    store["t.cond.w_out"][:] = rng.normal(scale=0.2, size=store["t.cond.w_out"].shape)
    store["t.cond.b_out"][:] = rng.normal(scale=0.2, size=store["t.cond.b_out"].shape)
    J = _triangular_jacobian(layer, store, d, "inverse", seed=17)
    assert np.max(np.abs(np.triu(J, k=1))) < 1e-10

    # sequential forward inverts the single-pass inverse
    x = rng.normal(size=(6, d)) * 2.0
    z, _ = layer.inverse(_cols(x), store.float_view())
    xr, _ = layer.forward(z, store.float_view())
    assert np.max(np.abs(_mat(xr) - x)) < 1e-8


def test_marginal_tail_layer_parallel_forward():
    d = 3
    store = ParamStore()
    rng = np.random.default_rng(18)
    layer = TailLayer(store, "t", d, rng, mode=TailMode.EXTENDED, marginal=True)
    store["t.raw"][:] = rng.normal(scale=0.3, size=(d, 4))
    z = rng.normal(size=(10, d))
    x, ld_f = layer.forward(_cols(z), store.float_view())
    zr, ld_i = layer.inverse(x, store.float_view())
    assert np.max(np.abs(_mat(zr) - z)) < 1e-8
    np.testing.assert_allclose(
        np.asarray(ad.value_of(ld_f)), -np.asarray(ad.value_of(ld_i)), rtol=1e-9, atol=1e-10
    )


def test_layer_logdet_matches_fd_slopes():
    # every layer's reported log-det = log |prod slopes| via FD, d <= 5
    d = 3
    rng = np.random.default_rng(19)
    for make in (
        lambda s: RQSLayer(s, "l", d, rng),
        lambda s: AffineLayer(s, "l", d, rng),
        lambda s: LULinearLayer(s, "l", d, rng),
        lambda s: TailLayer(s, "l", d, rng, mode=TailMode.EXTENDED),
    ):
        store = ParamStore()
        layer = make(store)
        for name in store.names():
            if name.endswith(("w_out", "b_out", "raw")):
                store[name] += rng.normal(scale=0.2, size=store[name].shape)
            if name.endswith(("lower", "upper")):
                store[name] += rng.normal(scale=0.3, size=store[name].shape)
        x0 = rng.normal(size=(1, d)) * 0.7
        _, ld = layer.inverse(_cols(x0), store.float_view())
        J = _triangular_jacobian(layer, store, d, "inverse", seed=20)
        expected = np.log(np.abs(np.linalg.det(J)))
        got = float(np.asarray(ad.value_of(ld)).reshape(-1)[0])
        assert got == pytest.approx(expected, rel=1e-5, abs=1e-5), type(layer).__name__

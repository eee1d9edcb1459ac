"""Tape correctness: recorded examples, finite-difference properties, faults."""

import math

import numpy as np
import pytest

from heavyflow import autodiff as ad
from heavyflow import special


def grad_of(f, x0, h=1e-6):
    return (f(x0 + h) - f(x0 - h)) / (2 * h)


class TestRecord:
    def test_product_rule(self):
        tape = ad.Tape()
        a, b = tape.leaf(2.0), tape.leaf(3.0)
        out = tape.record("mul", (a, b), 6.0, (3.0, 2.0))
        g = tape.backward(out)
        assert g[a] == 3.0
        assert g[b] == 2.0

    def test_fan_in_accumulation(self):
        tape = ad.Tape()
        a = tape.leaf(1.5)
        out = tape.record("add", (a, a), 3.0, (1.0, 1.0))
        assert tape.backward(out)[a] == 2.0

    def test_foreign_tape_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        a = t1.leaf(1.0)
        with pytest.raises(ad.TapeError):
            t2.record("mul", (a,), 1.0, (1.0,))

    def test_consumed_tape_rejected(self):
        tape = ad.Tape()
        a = tape.leaf(1.0)
        tape.backward(a)
        with pytest.raises(ad.TapeError):
            tape.leaf(2.0)


class TestBackward:
    def test_constant_gradient_zero(self):
        tape = ad.Tape()
        a = tape.leaf(2.0)
        c = tape.leaf(5.0)
        out = a * 1.0
        assert tape.backward(out)[c] == 0.0

    def test_identity_chain(self):
        tape = ad.Tape()
        a = tape.leaf(0.3)
        x = a
        for _ in range(1000):
            x = x + 0.0
        assert tape.backward(x)[a] == 1.0

    def test_erfc_gradient(self):
        for z0 in (0.0, 1.0, 3.0):
            tape = ad.Tape()
            z = tape.leaf(z0)
            g = tape.backward(ad.erfc(z))[z]
            expected = -2.0 / math.sqrt(math.pi) * math.exp(-z0 * z0)
            assert g == pytest.approx(expected, rel=1e-12, abs=1e-12)
            fd = grad_of(special.erfc, z0)
            assert g == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_double_backward_rejected(self):
        tape = ad.Tape()
        a = tape.leaf(1.0)
        out = a * a
        tape.backward(out)
        with pytest.raises(ad.TapeError):
            tape.backward(out)

    def test_vector_loss_rejected(self):
        tape = ad.Tape()
        a = tape.leaf(1.0)
        out = a * np.ones(3)
        with pytest.raises(ad.TapeError):
            tape.backward(out)


def _composite(ops_rng, x_vals):
    """A deterministic composite touching the whole supported op set."""
    a, b, c = x_vals
    e1 = ad.exp(ad.tanh(a) * 0.7 - b / (ad.softplus(c) + 1.2))
    e2 = ad.log(ad.absolute(b) + 1.4) * ad.erfc(a * 0.5)
    e3 = ad.normal_cdf(c) + ad.erfc_inv(ad.clip(e2, 0.05, 1.95) * 0.5 + 0.3)
    e4 = ad.log_gamma(ad.absolute(a) + 0.5) + ad.maximum(b, c * 0.9)
    e5 = ad.normal_quantile(ad.clip(e3, 0.01, 0.99) * 0.5 + 0.2)
    e6 = ad.power(ad.absolute(c) + 0.5, 1.7) + ad.power(2.0, ad.tanh(b))
    return e1 + e2 * 0.3 - e4 * 0.1 + e5 * 0.05 + e6 * 0.02


def test_composite_gradients_match_fd():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        x0 = rng.uniform(-2.0, 2.0, 3)
        # keep away from non-differentiable loci (abs kinks, max ties)
        x0 = np.where(np.abs(x0) < 0.05, 0.1, x0)
        if abs(x0[1] - 0.9 * x0[2]) < 0.05:
            x0[1] += 0.2
        tape = ad.Tape()
        leaves = [tape.leaf(float(v)) for v in x0]
        out = _composite(rng, leaves)
        grads = tape.backward(out)
        for i in range(3):
            def f(v, i=i):
                vals = [float(w) for w in x0]
                vals[i] = v
                return float(ad.value_of(_composite(rng, vals)))

            h = 1e-5 * max(1.0, abs(x0[i]))
            fd = grad_of(f, float(x0[i]), h)
            gv = grads[leaves[i]]
            err = abs(gv - fd) / max(abs(fd), 1e-7)
            worst = max(worst, err)
    assert worst < 1e-5


def test_accumulation_order_independent():
    def build(perm):
        tape = ad.Tape()
        a = tape.leaf(1.1)
        terms = [a * 2.0, ad.exp(a) * 0.1, ad.tanh(a), a * a]
        total = ad.add_n([terms[i] for i in perm])
        return tape.backward(total)[a]

    g0 = build([0, 1, 2, 3])
    for perm in ([3, 2, 1, 0], [1, 3, 0, 2]):
        assert abs(build(perm) - g0) < 1e-15


class TestBatchSemantics:
    def test_scalar_param_grad_sums_over_batch(self):
        tape = ad.Tape()
        w = tape.leaf(2.0)
        x = np.array([1.0, 2.0, 3.0])
        loss = ad.batch_sum(w * x)
        assert tape.backward(loss)[w] == pytest.approx(6.0)

    def test_batch_equals_rowwise(self):
        x = np.array([0.3, -1.2, 2.5])

        def expr(v):
            return ad.value_of(ad.exp(ad.tanh(v) * 0.5) + ad.softplus(v))

        batch = expr(x)
        rows = np.array([expr(float(v)) for v in x])
        np.testing.assert_array_equal(batch, rows)

    def test_select_gradient(self):
        tape = ad.Tape()
        c0, c1 = tape.leaf(1.0), tape.leaf(2.0)
        idx = np.array([0, 1, 1])
        out = ad.batch_sum(ad.select(idx, [c0, c1]) * np.array([1.0, 10.0, 100.0]))
        g = tape.backward(out)
        assert g[c0] == 1.0
        assert g[c1] == 110.0

    def test_where_gradient(self):
        tape = ad.Tape()
        a, b = tape.leaf(1.0), tape.leaf(2.0)
        mask = np.array([True, False, True])
        out = ad.batch_sum(ad.where(mask, a, b))
        g = tape.backward(out)
        assert g[a] == 2.0
        assert g[b] == 1.0

    def test_clip_saturates_gradient(self):
        tape = ad.Tape()
        a = tape.leaf(5.0)
        out = ad.clip(a, -1.0, 1.0)
        assert out.value == 1.0
        assert tape.backward(out)[a] == 0.0


def test_abs_subgradient_zero_at_zero():
    tape = ad.Tape()
    a = tape.leaf(0.0)
    assert tape.backward(ad.absolute(a))[a] == 0.0


def test_linear_combination_matches_manual():
    tape = ad.Tape()
    b = tape.leaf(0.5)
    w = [tape.leaf(1.0), tape.leaf(-2.0)]
    x = [np.array([1.0, 2.0]), np.array([3.0, -1.0])]
    out = ad.batch_sum(ad.linear_combination(b, w, x))
    g = tape.backward(out)
    assert g[b] == 2.0
    assert g[w[0]] == 3.0
    assert g[w[1]] == 2.0

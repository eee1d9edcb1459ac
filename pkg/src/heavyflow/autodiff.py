"""Reverse-mode automatic differentiation on a scalar tape.

Every recorded node is one mathematical scalar.  Node values may be
python floats or 1-d numpy arrays: an array value means the same scalar
quantity evaluated for a whole batch of rows at once, so the tape keeps
its scalar structure while amortizing python overhead across the batch.
Gradients of scalar leaves (parameters) are reduced over the batch axis
automatically.

The module-level op functions (``exp``, ``log``, ``erfc``, ...) dispatch
on their arguments: any :class:`Var` input records a node on that Var's
tape, plain floats/arrays fall through to numpy, so the same numerical
code serves both training (differentiable) and bulk evaluation paths.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

from . import special

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SQRT_PI_OVER_2 = math.sqrt(math.pi) / 2.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class TapeError(RuntimeError):
    """Recording on a foreign/consumed tape, or an invalid backward call."""


class Var:
    """A value recorded on a tape; combine with operators or module ops."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"

    # arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    # value comparisons (piecewise-constant; no gradient) ------------
    def __lt__(self, other):
        return self.value < value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    def __gt__(self, other):
        return self.value > value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)


class Gradients:
    """Result of a backward pass; index with the Var whose grad you want."""

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var):
        if var.tape is not self._tape:
            raise TapeError("Var does not belong to the differentiated tape")
        g = self._grads[var.idx]
        return 0.0 if g is None else g


class Tape:
    """Arena of recorded nodes; one backward pass consumes it."""

    def __init__(self):
        self._kinds = []
        self._parents = []
        self._partials = []
        self._values = []
        self._consumed = False

    def __len__(self):
        return len(self._values)

    def leaf(self, value):
        """Register an input/parameter value and return its Var."""
        return self.record("leaf", (), value, ())

    def leaves(self, array):
        """Vectorize :meth:`leaf` over a numpy array -> object array of Vars."""
        arr = np.asarray(array, dtype=float)
        out = np.empty(arr.shape, dtype=object)
        flat = out.reshape(-1)
        for i, v in enumerate(arr.reshape(-1)):
            flat[i] = self.leaf(float(v))
        return out

    def record(self, kind, inputs, value, partials):
        """Append a node; backward accumulates input_grad += out_grad * partial."""
        if self._consumed:
            raise TapeError("tape already consumed by backward")
        for v in inputs:
            if v.tape is not self:
                raise TapeError(f"input of {kind!r} recorded on a different tape")
        idx = len(self._values)
        self._kinds.append(kind)
        self._parents.append(tuple(v.idx for v in inputs))
        self._partials.append(tuple(partials))
        self._values.append(value)
        return Var(self, idx, value)

    def backward(self, loss):
        """Reverse sweep from a scalar loss; returns a :class:`Gradients` map."""
        if self._consumed:
            raise TapeError("tape already consumed by backward")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("loss must be a Var on this tape")
        if isinstance(loss.value, np.ndarray) and loss.value.ndim > 0:
            raise TapeError("loss must be scalar; reduce the batch first")
        self._consumed = True

        values = self._values
        parents = self._parents
        partials = self._partials
        grads = [None] * len(values)
        grads[loss.idx] = 1.0
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            v = values[i]
            if isinstance(v, np.ndarray) and not isinstance(g, np.ndarray):
                # scalar grad into a batched node means "broadcast over the
                # batch"; materialize so reductions to scalar parents count
                # every row
                g = np.broadcast_to(g, v.shape)
                grads[i] = g
            ps = parents[i]
            if not ps:
                continue
            for p, q in zip(ps, partials[i]):
                contrib = g * q
                if isinstance(contrib, np.ndarray) and not isinstance(
                    values[p], np.ndarray
                ):
                    contrib = contrib.sum()
                if grads[p] is None:
                    grads[p] = contrib
                else:
                    grads[p] = grads[p] + contrib
        return Gradients(self, grads)


def value_of(x):
    """Unwrap a Var; pass plain values through."""
    return x.value if isinstance(x, Var) else x


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _record_mixed(tape, kind, value, pairs):
    """Record keeping only the Var arguments of (arg, partial) pairs."""
    inputs = tuple(a for a, _ in pairs if isinstance(a, Var))
    parts = tuple(p for a, p in pairs if isinstance(a, Var))
    return tape.record(kind, inputs, value, parts)


# binary ops ---------------------------------------------------------


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a + b
    v = value_of(a) + value_of(b)
    return _record_mixed(tape, "add", v, ((a, 1.0), (b, 1.0)))


def sub(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a - b
    v = value_of(a) - value_of(b)
    return _record_mixed(tape, "sub", v, ((a, 1.0), (b, -1.0)))


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a * b
    va, vb = value_of(a), value_of(b)
    return _record_mixed(tape, "mul", va * vb, ((a, vb), (b, va)))


def div(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a / b
    va, vb = value_of(a), value_of(b)
    v = va / vb
    return _record_mixed(tape, "div", v, ((a, 1.0 / vb), (b, -v / vb)))


def power(a, b):
    """a ** b; for Var exponents the base must be positive."""
    tape = _tape_of(a, b)
    if tape is None:
        return a**b
    va, vb = value_of(a), value_of(b)
    v = va**vb
    pairs = [(a, vb * va ** (vb - 1.0))]
    if isinstance(b, Var):
        pairs.append((b, v * np.log(va)))
    return _record_mixed(tape, "pow", v, tuple(pairs))


def maximum(a, b):
    """Elementwise max; ties send the gradient to the first argument."""
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    if tape is None:
        return np.maximum(va, vb)
    mask = (va >= vb) * 1.0
    return _record_mixed(
        tape, "max", np.maximum(va, vb), ((a, mask), (b, 1.0 - mask))
    )


def minimum(a, b):
    """Elementwise min; ties send the gradient to the first argument."""
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    if tape is None:
        return np.minimum(va, vb)
    mask = (va <= vb) * 1.0
    return _record_mixed(
        tape, "min", np.minimum(va, vb), ((a, mask), (b, 1.0 - mask))
    )


# unary ops ----------------------------------------------------------


def _unary(kind, x, fval, fpartial):
    if isinstance(x, Var):
        v = fval(x.value)
        return x.tape.record(kind, (x,), v, (fpartial(x.value, v),))
    return fval(x)


def neg(x):
    return _unary("neg", x, lambda v: -v, lambda v, out: -1.0)


def exp(x):
    return _unary("exp", x, np.exp, lambda v, out: out)


def expm1(x):
    return _unary("expm1", x, np.expm1, lambda v, out: out + 1.0)


def log(x):
    return _unary("log", x, np.log, lambda v, out: 1.0 / v)


def log1p(x):
    return _unary("log1p", x, np.log1p, lambda v, out: 1.0 / (1.0 + v))


def sqrt(x):
    return _unary("sqrt", x, np.sqrt, lambda v, out: 0.5 / out)


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda v, out: 1.0 - out * out)


def softplus(x):
    """log(1 + exp(x)), overflow-safe; derivative is the logistic sigmoid."""
    return _unary(
        "softplus",
        x,
        lambda v: np.logaddexp(0.0, v),
        lambda v, out: _sp.expit(v),
    )


def absolute(x):
    """|x| with the subgradient convention d|x|/dx = 0 at x = 0."""
    return _unary("abs", x, np.abs, lambda v, out: np.sign(v))


def erf(x):
    return _unary(
        "erf", x, special.erf, lambda v, out: _TWO_OVER_SQRT_PI * np.exp(-v * v)
    )


def erfc(x):
    return _unary(
        "erfc", x, special.erfc, lambda v, out: -_TWO_OVER_SQRT_PI * np.exp(-v * v)
    )


def log_erfc(x):
    """log(erfc(x)) with an underflow-safe fused derivative."""
    return _unary(
        "log_erfc",
        x,
        special.log_erfc,
        lambda v, out: -_TWO_OVER_SQRT_PI * np.exp(-v * v - out),
    )


def erfc_inv(x):
    return _unary(
        "erfc_inv",
        x,
        special.erfc_inv,
        lambda v, out: -_SQRT_PI_OVER_2 * np.exp(out * out),
    )


def erfc_inv_exp(t):
    """erfc_inv(exp(t)) fused so the derivative stays finite for t << 0."""
    return _unary(
        "erfc_inv_exp",
        t,
        lambda v: special.erfc_inv(np.exp(v)),
        lambda v, out: -_SQRT_PI_OVER_2 * np.exp(out * out + v),
    )


def normal_cdf(x):
    return _unary("normal_cdf", x, special.normal_cdf, lambda v, out: special.normal_pdf(v))


def normal_quantile(p):
    return _unary(
        "normal_quantile",
        p,
        special.normal_quantile,
        lambda v, out: _SQRT_2PI * np.exp(0.5 * out * out),
    )


def log_gamma(x):
    return _unary("log_gamma", x, special.log_gamma, lambda v, out: _sp.psi(v))


def sign(x):
    """Piecewise-constant sign of the underlying value; never a Var."""
    return np.sign(value_of(x))


# structured ops -----------------------------------------------------


def where(mask, a, b):
    """Select a where mask else b; mask is a plain boolean (no gradient)."""
    if isinstance(mask, (bool, np.bool_)):
        return a if mask else b
    tape = _tape_of(a, b)
    m = np.asarray(mask)
    v = np.where(m, value_of(a), value_of(b))
    if tape is None:
        return v
    fm = m.astype(float)
    return _record_mixed(tape, "where", v, ((a, fm), (b, 1.0 - fm)))


def select(idx, candidates):
    """Pick candidates[idx[row]] per row; gradient scatters to the chosen one."""
    if np.isscalar(idx) or (isinstance(idx, np.ndarray) and idx.ndim == 0):
        return candidates[int(idx)]
    idx = np.asarray(idx)
    vals = [np.broadcast_to(np.asarray(value_of(c), dtype=float), idx.shape) for c in candidates]
    stacked = np.stack(vals)
    v = stacked[idx, np.arange(idx.shape[0])]
    tape = _tape_of(*candidates)
    if tape is None:
        return v
    pairs = tuple((c, (idx == k) * 1.0) for k, c in enumerate(candidates))
    return _record_mixed(tape, "select", v, pairs)


def clip(x, lo, hi):
    """Saturating clamp: gradient 1 inside [lo, hi], 0 beyond."""
    if isinstance(x, Var):
        v = np.clip(x.value, lo, hi)
        mask = ((x.value >= lo) & (x.value <= hi)) * 1.0
        return x.tape.record("clip", (x,), v, (mask,))
    return np.clip(x, lo, hi)


def linear_combination(bias, weights, inputs):
    """bias + sum_i weights[i] * inputs[i], accumulated in fixed order.

    One tape node regardless of arity, so a masked network layer costs
    O(fan-in) arithmetic but only one record per unit.
    """
    tape = _tape_of(bias, *weights, *inputs)
    acc = value_of(bias)
    wvals = []
    xvals = []
    for w, x in zip(weights, inputs):
        wv, xv = value_of(w), value_of(x)
        wvals.append(wv)
        xvals.append(xv)
        acc = acc + wv * xv
    if tape is None:
        return acc
    pairs = [(bias, 1.0)]
    pairs.extend((w, xv) for w, xv in zip(weights, xvals))
    pairs.extend((x, wv) for x, wv in zip(inputs, wvals))
    return _record_mixed(tape, "linear", acc, tuple(pairs))


def add_n(terms):
    """Fixed-order sum of many scalars as a single node."""
    terms = list(terms)
    if not terms:
        return 0.0
    tape = _tape_of(*terms)
    acc = value_of(terms[0])
    for t in terms[1:]:
        acc = acc + value_of(t)
    if tape is None:
        return acc
    return _record_mixed(tape, "add_n", acc, tuple((t, 1.0) for t in terms))


def batch_sum(x):
    """Reduce a batched scalar over its batch axis to a true scalar."""
    if isinstance(x, Var):
        v = x.value
        total = float(np.sum(v)) if isinstance(v, np.ndarray) else float(v)
        return x.tape.record("batch_sum", (x,), total, (1.0,))
    return float(np.sum(x))

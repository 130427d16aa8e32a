"""Forward-mode automatic differentiation on numpy arrays.

A :class:`Dual` carries a value array together with a Jacobian block whose
trailing axis indexes the seed directions.  Seeding an m-vector with the
identity and pushing it through a scalar-valued function therefore yields the
full gradient in a single pass.  All likelihood primitives used elsewhere in
the package (softplus, sigmoid, normal cdf/pdf, inverse Mills ratio, ...) are
provided here as functions that accept either plain arrays or duals, so model
code can be written once and differentiated exactly.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

__all__ = [
    "Dual",
    "seed",
    "value",
    "exp",
    "log",
    "log1p",
    "sqrt",
    "tanh",
    "sigmoid",
    "softplus",
    "normal_pdf",
    "normal_logpdf",
    "normal_cdf",
    "normal_logcdf",
    "inverse_mills",
    "where",
    "matvec",
    "total",
    "mean",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class Dual:
    """Value plus Jacobian with respect to a fixed set of seed directions.

    ``val`` has an arbitrary shape; ``jac`` has shape ``val.shape + (m,)``
    where ``m`` is the number of seed directions.
    """

    __slots__ = ("val", "jac")
    __array_priority__ = 100  # keep numpy from hijacking reflected ops

    def __init__(self, val, jac):
        self.val = np.asarray(val, dtype=float)
        self.jac = np.asarray(jac, dtype=float)

    @property
    def nseeds(self):
        return self.jac.shape[-1]

    def _lift(self, other):
        """Return (val, jac-or-None) for the other operand."""
        if isinstance(other, Dual):
            return other.val, other.jac
        return np.asarray(other, dtype=float), None

    def _spread(self, jac, out_shape):
        """Broadcast a Jacobian block to match a broadcasted value shape."""
        target = tuple(out_shape) + (jac.shape[-1],)
        return jac if jac.shape == target else np.broadcast_to(jac, target)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        v, j = self._lift(other)
        out = self.val + v
        if j is None:
            return Dual(out, self._spread(self.jac, out.shape))
        return Dual(out, self.jac + j)

    __radd__ = __add__

    def __sub__(self, other):
        v, j = self._lift(other)
        out = self.val - v
        if j is None:
            return Dual(out, self._spread(self.jac, out.shape))
        return Dual(out, self.jac - j)

    def __rsub__(self, other):
        v, _ = self._lift(other)
        return Dual(v - self.val, -self.jac)

    def __mul__(self, other):
        v, j = self._lift(other)
        if j is None:
            return Dual(self.val * v, self.jac * v[..., None])
        return Dual(self.val * v, self.jac * v[..., None] + j * self.val[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, j = self._lift(other)
        inv = 1.0 / v
        if j is None:
            return Dual(self.val * inv, self.jac * inv[..., None])
        out = self.val * inv
        return Dual(out, (self.jac - j * out[..., None]) * inv[..., None])

    def __rtruediv__(self, other):
        v, _ = self._lift(other)
        out = v / self.val
        return Dual(out, -self.jac * (out / self.val)[..., None])

    def __neg__(self):
        return Dual(-self.val, -self.jac)

    def __pow__(self, k):
        k = float(k)
        return Dual(self.val**k, (k * self.val ** (k - 1.0))[..., None] * self.jac)

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.jac[idx])

    def __repr__(self):
        return f"Dual(val={self.val!r}, nseeds={self.nseeds})"


def seed(x):
    """Seed a 1-D parameter vector with the identity Jacobian."""
    x = np.asarray(x, dtype=float)
    return Dual(x, np.eye(x.size))


def value(x):
    """Plain value of a Dual or array."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def _unary(x, f, df):
    if isinstance(x, Dual):
        v = f(x.val)
        return Dual(v, df(x.val, v)[..., None] * x.jac)
    return f(np.asarray(x, dtype=float))


def exp(x):
    return _unary(x, np.exp, lambda v, out: out)


def log(x):
    return _unary(x, np.log, lambda v, out: 1.0 / v)


def log1p(x):
    return _unary(x, np.log1p, lambda v, out: 1.0 / (1.0 + v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, out: 0.5 / out)


def tanh(x):
    return _unary(x, np.tanh, lambda v, out: 1.0 - out * out)


def sigmoid(x):
    return _unary(x, _sp.expit, lambda v, out: out * (1.0 - out))


def softplus(x):
    """log(1 + e^x), stable for |x| large; derivative is sigmoid."""
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda v, out: _sp.expit(v))


def normal_pdf(x):
    return _unary(x, lambda v: np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi), lambda v, out: -v * out)


def normal_logpdf(x):
    return _unary(x, lambda v: -0.5 * v * v - _LOG_SQRT_2PI, lambda v, out: -v)


def normal_cdf(x):
    return _unary(x, _sp.ndtr, lambda v, out: np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi))


def normal_logcdf(x):
    # derivative of log Phi is the inverse Mills ratio phi/Phi
    return _unary(x, _sp.log_ndtr, lambda v, out: np.exp(-0.5 * v * v - _LOG_SQRT_2PI - out))


def inverse_mills(x):
    """phi(x) / Phi(x), evaluated in log space so the deep left tail
    (where both phi and Phi underflow) stays finite and accurate."""

    def _f(v):
        return np.exp(-0.5 * v * v - _LOG_SQRT_2PI - _sp.log_ndtr(v))

    # d/dx [phi/Phi] = -x m - m^2
    return _unary(x, _f, lambda v, out: -v * out - out * out)


def where(cond, a, b):
    """Branch selection; cond is a plain boolean array over values."""
    cond = np.asarray(cond)
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, aj = (a.val, a.jac) if isinstance(a, Dual) else (np.asarray(a, dtype=float), None)
        bv, bj = (b.val, b.jac) if isinstance(b, Dual) else (np.asarray(b, dtype=float), None)
        val = np.where(cond, av, bv)
        m = aj.shape[-1] if aj is not None else bj.shape[-1]
        if aj is None:
            aj = np.zeros(av.shape + (m,))
        if bj is None:
            bj = np.zeros(bv.shape + (m,))
        return Dual(val, np.where(cond[..., None], aj, bj))
    return np.where(cond, a, b)


def matvec(a, x):
    """Matrix @ vector where the vector may be a Dual."""
    a = np.asarray(a, dtype=float)
    if isinstance(x, Dual):
        return Dual(a @ x.val, a @ x.jac)
    return a @ np.asarray(x, dtype=float)


def total(x, axis=None):
    """Sum of entries (all axes by default)."""
    if isinstance(x, Dual):
        ax = tuple(range(x.val.ndim)) if axis is None else axis
        return Dual(np.sum(x.val, axis=ax), np.sum(x.jac, axis=ax))
    return np.sum(x, axis=axis)


def mean(x, axis=None):
    if isinstance(x, Dual):
        n = x.val.size if axis is None else x.val.shape[axis]
        return total(x, axis=axis) / n
    return np.mean(x, axis=axis)

"""Truncated univariate power series ("jets") with automatic-differentiation lifts.

A :class:`Jet` of order ``K`` stores the coefficients ``c[0..K]`` of
``u(s) = sum_k c[k] s**k``.  Coefficients may be scalars or carry a trailing
shape (vector-valued series); every operation acts elementwise on the
trailing shape and truncates at ``K``.

Jets interoperate with numpy ufuncs (``np.exp(jet)``, ``np.float64(2) * jet``),
so the model functions in :mod:`csdwave.model` accept floats, arrays or jets.
"""

from __future__ import annotations

import csv
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import bernoulli

from .errors import SingularJetError

# |phi| below this uses the series branch of phi / (exp(-phi) - 1)
GHK_SWITCH = 1e-4
# jets divide by a series with constant term ~phi, losing ~|phi|^-k at order k;
# inside this radius they use the Bernoulli series (radius of convergence 2 pi)
JET_SERIES_RADIUS = 0.1
JET_SERIES_EXTRA = 25


def _kappa_coefficients(n: int) -> np.ndarray:
    # phi / (exp(-phi) - 1) = -sum_k B+_k phi^k / k!   (B+_1 = +1/2)
    b = bernoulli(n).astype(float)
    b[1] = 0.5
    return np.array([-b[k] / math.factorial(k) for k in range(n + 1)])


_KAPPA = _kappa_coefficients(80)
# scalar series branch: 1, phi/2, phi^2/12, -phi^4/720
_KAPPA_SCALAR = _KAPPA[:5].copy()
_KAPPA_SCALAR[3] = 0.0


class Jet:
    """Truncated power series ``sum_{k<=K} c_k s^k``."""

    __slots__ = ("c",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim == 0:
            c = c[None]
        self.c = c

    # -- construction -------------------------------------------------
    @classmethod
    def constant(cls, value, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, order: int, slope=1.0) -> "Jet":
        """The jet of ``value + slope * s``."""
        j = cls.constant(value, order)
        if order >= 1:
            j.c[1] = slope
        return j

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.c.shape[1:]

    @property
    def value(self):
        return self.c[0]

    def copy(self) -> "Jet":
        return Jet(self.c.copy())

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, c={self.c!r})"

    def __len__(self) -> int:
        return self.c.shape[0]

    def __getitem__(self, k):
        return self.c[k]

    def derivative(self, k: int):
        """k-th derivative of the series at s = 0."""
        return math.factorial(k) * self.c[k]

    def __call__(self, s):
        """Evaluate the polynomial at ``s`` by Horner's rule."""
        out = np.zeros_like(self.c[0]) + 0.0 * np.asarray(s)
        for ck in self.c[::-1]:
            out = out * s + ck
        return out

    def truncate(self, order: int) -> "Jet":
        if order <= self.order:
            return Jet(self.c[: order + 1].copy())
        c = np.zeros((order + 1,) + self.shape)
        c[: self.order + 1] = self.c
        return Jet(c)

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other) -> "Jet | None":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError(f"jet orders differ: {self.order} vs {other.order}")
            return other
        if np.ndim(other) == 0 or np.shape(other) == self.shape:
            return None
        raise TypeError(f"cannot combine Jet of shape {self.shape} with {np.shape(other)}")

    def __neg__(self):
        return Jet(-self.c)

    def __pos__(self):
        return self

    def __add__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(self.c + o.c)
        c = self.c.copy()
        c[0] = c[0] + other
        return Jet(c)

    def __radd__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(o.c + self.c)
        c = self.c.copy()
        c[0] = other + c[0]
        return Jet(c)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(self.c - o.c)
        c = self.c.copy()
        c[0] = c[0] - other
        return Jet(c)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(o.c - self.c)
        c = -self.c
        c[0] = other - self.c[0]
        return Jet(c)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(cauchy_product(self.c, o.c))
        return Jet(self.c * other)

    def __rmul__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(cauchy_product(o.c, self.c))
        return Jet(other * self.c)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(_divide(self.c, o.c))
        return Jet(self.c / other)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is not None:
            return Jet(_divide(o.c, self.c))
        num = np.zeros_like(self.c)
        num[0] = other
        return Jet(_divide(num, self.c))

    def __pow__(self, a):
        if isinstance(a, Jet):
            return exp(a * log(self))
        if float(a).is_integer() and a >= 0:
            return self.pow_int(int(a))
        return Jet(_real_power(self.c, float(a)))

    def pow_int(self, n: int) -> "Jet":
        """``self**n`` by binary exponentiation (exact for integer data)."""
        if n < 0:
            return self.pow_int(-n).recip()
        result = Jet.constant(np.ones(self.shape), self.order)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def recip(self) -> "Jet":
        return 1.0 / self

    def scale(self, a) -> "Jet":
        return Jet(a * self.c)

    # -- elementary lifts ---------------------------------------------
    def exp(self):
        return Jet(_exp(self.c))

    def expm1(self):
        e = _exp(self.c)
        e[0] = np.expm1(self.c[0])
        return Jet(e)

    def log(self):
        if np.any(self.c[0] <= 0):
            raise SingularJetError("log of a jet with nonpositive constant term")
        return Jet(_log(self.c))

    def log1p(self):
        return log(1.0 + self)

    def sqrt(self):
        return self ** 0.5

    def cosh(self):
        e = self.exp()
        return 0.5 * (e + e.recip())

    def sinh(self):
        e = self.exp()
        return 0.5 * (e - e.recip())

    def tanh(self):
        e2 = (2.0 * self).exp()
        return (e2 - 1.0) / (e2 + 1.0)

    # -- numpy interop ------------------------------------------------
    _UNARY = {
        "exp": "exp", "expm1": "expm1", "log": "log", "log1p": "log1p",
        "sqrt": "sqrt", "cosh": "cosh", "sinh": "sinh", "tanh": "tanh",
        "negative": "__neg__", "positive": "__pos__", "reciprocal": "recip",
    }
    _BINARY = {
        "add": ("__add__", "__radd__"),
        "subtract": ("__sub__", "__rsub__"),
        "multiply": ("__mul__", "__rmul__"),
        "true_divide": ("__truediv__", "__rtruediv__"),
        "divide": ("__truediv__", "__rtruediv__"),
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        name = ufunc.__name__
        if name in self._UNARY and len(inputs) == 1:
            return getattr(self, self._UNARY[name])()
        if name == "square":
            return self * self
        if name in self._BINARY:
            a, b = inputs
            if isinstance(a, Jet):
                return getattr(a, self._BINARY[name][0])(b)
            return getattr(b, self._BINARY[name][1])(a)
        if name == "power" and inputs[0] is self:
            return self ** inputs[1]
        return NotImplemented

    # -- io -----------------------------------------------------------
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["order"] + [f"c{i}" for i in range(int(np.prod(self.shape)) or 1)])
            for k, ck in enumerate(self.c):
                w.writerow([k] + [repr(float(v)) for v in np.ravel(ck)])

    @classmethod
    def from_csv(cls, path) -> "Jet":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        c = rows[:, 1:]
        return cls(c[:, 0] if c.shape[1] == 1 else c)


# -- coefficient recurrences -------------------------------------------

def cauchy_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    K = a.shape[0] - 1
    if a.ndim == 1 and b.ndim == 1:
        return np.convolve(a, b)[: K + 1]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    for k in range(K + 1):
        out[k] = np.sum(a[: k + 1] * b[k::-1], axis=0)
    return out


def _divide(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.any(b[0] == 0):
        raise SingularJetError("division by a jet with zero constant term")
    K = a.shape[0] - 1
    c = np.empty(np.broadcast_shapes(a.shape, b.shape))
    c[0] = a[0] / b[0]
    for k in range(1, K + 1):
        c[k] = (a[k] - np.sum(b[1 : k + 1] * c[k - 1 :: -1][:k], axis=0)) / b[0]
    return c


def _exp(u: np.ndarray) -> np.ndarray:
    K = u.shape[0] - 1
    e = np.empty_like(u)
    e[0] = np.exp(u[0])
    if K == 0:
        return e
    j = np.arange(1, K + 1).reshape((-1,) + (1,) * (u.ndim - 1))
    ju = j * u[1:]
    for k in range(1, K + 1):
        e[k] = np.sum(ju[:k] * e[k - 1 :: -1][:k], axis=0) / k
    return e


def _log(u: np.ndarray) -> np.ndarray:
    K = u.shape[0] - 1
    out = np.empty_like(u)
    out[0] = np.log(u[0])
    for k in range(1, K + 1):
        j = np.arange(1, k).reshape((-1,) + (1,) * (u.ndim - 1))
        acc = np.sum(j * out[1:k] * u[k - 1 : 0 : -1], axis=0) if k > 1 else 0.0
        out[k] = (u[k] - acc / k) / u[0]
    return out


def _real_power(u: np.ndarray, a: float) -> np.ndarray:
    if np.any(u[0] <= 0):
        raise SingularJetError("real power of a jet with nonpositive constant term")
    K = u.shape[0] - 1
    p = np.empty_like(u)
    p[0] = u[0] ** a
    for k in range(1, K + 1):
        j = np.arange(1, k + 1).reshape((-1,) + (1,) * (u.ndim - 1))
        p[k] = np.sum(((a + 1) * j - k) * u[1 : k + 1] * p[k - 1 :: -1][:k], axis=0) / (k * u[0])
    return p


# -- generic elementary functions (floats, arrays, jets) -----------------

def exp(u):
    return u.exp() if isinstance(u, Jet) else np.exp(u)


def log(u):
    return u.log() if isinstance(u, Jet) else np.log(u)


def expm1(u):
    return u.expm1() if isinstance(u, Jet) else np.expm1(u)


def power(u, a):
    return u ** a


def sigmoid(u):
    """``1 / (1 + exp(-u))``."""
    return 1.0 / (1.0 + exp(-u))


def value_of(u):
    """Constant term of a jet, or the value itself."""
    return u.c[0] if isinstance(u, Jet) else u


def _horner(coeffs, u):
    acc = coeffs[-1]
    for a in coeffs[-2::-1]:
        acc = acc * u + a
    return acc


def ghk_kernel(phi):
    """``phi / (exp(-phi) - 1)`` with the removable singularity at 0 filled in.

    For ``|phi| < GHK_SWITCH`` a Bernoulli series is used; for jets the series is
    carried to the jet's order so every coefficient is exact.
    """
    if isinstance(phi, Jet):
        if phi.order == 0:
            return Jet(np.asarray(ghk_kernel(phi.c[0]))[None])
        small = np.abs(phi.c[0]) < JET_SERIES_RADIUS
        if not np.any(small):
            return phi / phi.__neg__().expm1()
        n = min(_KAPPA.size - 1, phi.order + JET_SERIES_EXTRA)
        series = _horner(_KAPPA[: n + 1], phi)
        if np.all(small):
            return series
        shifted = phi + np.where(small, 1.0, 0.0)
        closed = shifted / shifted.__neg__().expm1()
        return Jet(np.where(small, series.c, closed.c))
    if isinstance(phi, float) and abs(phi) < 700.0:
        if abs(phi) < GHK_SWITCH:
            return float(_horner(_KAPPA_SCALAR, phi))
        return phi / math.expm1(-phi)
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < GHK_SWITCH
    safe = np.where(small, 1.0, phi)
    exact = safe / np.expm1(-safe)
    series = _horner(_KAPPA_SCALAR, phi)
    out = np.where(small, series, exact)
    return out[()] if out.ndim == 0 else out


def ghk_kernel_derivative(phi):
    """d/dphi of :func:`ghk_kernel` (floats and arrays)."""
    if isinstance(phi, float) and GHK_SWITCH <= abs(phi) < 700.0:
        em = math.expm1(-phi)
        return (em + phi * math.exp(-phi)) / em**2
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < GHK_SWITCH
    safe = np.where(small, 1.0, phi)
    em = np.expm1(-safe)
    exact = (em + safe * np.exp(-safe)) / em**2
    dser = np.array([k * _KAPPA_SCALAR[k] for k in range(1, 5)])
    series = _horner(dser, phi)
    out = np.where(small, series, exact)
    return out[()] if out.ndim == 0 else out


def field_jet(F: Callable[[Sequence[Jet]], Sequence[Jet]], W: Sequence[Jet]) -> list[Jet]:
    """Truncated Taylor coefficients of ``s -> F(W(s))`` through the order of ``W``."""
    out = F(list(W))
    order = W[0].order
    return [o if isinstance(o, Jet) else Jet.constant(o, order) for o in out]

"""Truncated Taylor arithmetic in two variables (forward-mode derivatives).

A :class:`Jet` holds the Taylor coefficients ``d^a f / a!`` of a function of
``(y1, y2)`` for all multi-indices with ``|a| <= order`` at a batch of points.
Arithmetic and the elementary functions used by surface parametrizations are
exact up to rounding, so derivatives of composite expressions come out
without finite differences or symbolic expansion.
"""
from __future__ import annotations

import math

import numpy as np

MAX_ORDER = 3
INDEX = [(a, k - a) for k in range(MAX_ORDER + 1) for a in range(k, -1, -1)]
_POS = {ab: i for i, ab in enumerate(INDEX)}
_DEG = np.array([a + b for a, b in INDEX])


def _pairs():
    ia, ib, ig = [], [], []
    for i, (a1, b1) in enumerate(INDEX):
        for j, (a2, b2) in enumerate(INDEX):
            g = (a1 + a2, b1 + b2)
            if g in _POS:
                ia.append(i)
                ib.append(j)
                ig.append(_POS[g])
    order = np.argsort(ig, kind="stable")
    ia, ib, ig = np.array(ia)[order], np.array(ib)[order], np.array(ig)[order]
    starts = np.flatnonzero(np.r_[True, ig[1:] != ig[:-1]])
    return ia, ib, ig[starts], starts


_IA, _IB, _IG, _STARTS = _pairs()


class Jet:
    """Taylor coefficients (len(INDEX), n) valid up to total degree ``order``."""

    __slots__ = ("c", "order")

    def __init__(self, c, order: int = MAX_ORDER):
        c = np.asarray(c, dtype=float)
        if c.shape[0] != len(INDEX):
            raise ValueError("coefficient array has the wrong number of rows")
        self.order = int(order)
        if self.order < MAX_ORDER:
            c = c.copy()
            c[_DEG > self.order] = 0.0
        self.c = c

    # -- construction
    @classmethod
    def constant(cls, value, n: int | None = None, order: int = MAX_ORDER) -> "Jet":
        value = np.asarray(value, dtype=float)
        n = value.size if n is None else n
        c = np.zeros((len(INDEX), n))
        c[0] = value
        return cls(c, order)

    @classmethod
    def variable(cls, value, which: int, order: int = MAX_ORDER) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((len(INDEX), value.size))
        c[0] = value
        c[_POS[(1, 0) if which == 0 else (0, 1)]] = 1.0
        return cls(c, order)

    @property
    def n(self) -> int:
        return self.c.shape[1]

    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    def derivative(self, a: int, b: int) -> np.ndarray:
        """Partial derivative ``d^(a,b)`` at the points."""
        if a + b > self.order:
            raise ValueError("derivative order exceeds the jet order")
        return self.c[_POS[(a, b)]] * math.factorial(a) * math.factorial(b)

    def tile(self, reps: int) -> "Jet":
        return Jet(np.tile(self.c, (1, reps)), self.order)

    # -- arithmetic
    def _coerce(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(np.broadcast_to(np.asarray(other, dtype=float), (self.n,)), self.n)

    def __add__(self, other):
        o = self._coerce(other)
        return Jet(self.c + o.c, min(self.order, o.order))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c, self.order)

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet(self.c - o.c, min(self.order, o.order))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float), self.order)
        prod = self.c[_IA] * other.c[_IB]
        c = np.zeros_like(self.c)
        c[_IG] = np.add.reduceat(prod, _STARTS, axis=0)
        return Jet(c, min(self.order, other.order))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other, dtype=float), self.order)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Jet.constant(np.ones(self.n), self.n, self.order)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- elementary functions via the nilpotent part
    def _split(self):
        t = Jet(self.c.copy(), self.order)
        t.c[0] = 0.0
        return self.c[0], t

    def _series(self, coeffs) -> "Jet":
        """``sum_j coeffs[j] t^j`` for the nilpotent part ``t`` (coeffs are (n,) arrays)."""
        _, t = self._split()
        out = Jet.constant(coeffs[0], self.n, self.order)
        tp = t
        for j in range(1, MAX_ORDER + 1):
            out = out + tp * coeffs[j]
            tp = tp * t
        return out

    def reciprocal(self) -> "Jet":
        f0 = self.c[0]
        return self._series([(-1.0) ** j / f0 ** (j + 1) for j in range(MAX_ORDER + 1)])

    def sqrt(self) -> "Jet":
        f0 = self.c[0]
        s = np.sqrt(f0)
        coeffs = [s]
        for j in range(1, MAX_ORDER + 1):
            binom = np.prod([0.5 - i for i in range(j)]) / math.factorial(j)
            coeffs.append(binom * s / f0 ** j)
        return self._series(coeffs)

    def sin(self) -> "Jet":
        f0 = self.c[0]
        s, c = np.sin(f0), np.cos(f0)
        return self._series([s, c, -s / 2, -c / 6])

    def cos(self) -> "Jet":
        f0 = self.c[0]
        s, c = np.sin(f0), np.cos(f0)
        return self._series([c, -s, -c / 2, s / 6])

    # -- differentiation lowers the order by one
    def partial(self, which: int) -> "Jet":
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        c = np.zeros_like(self.c)
        for i, (a, b) in enumerate(INDEX):
            if a + b > self.order - 1:
                continue
            if which == 0:
                c[i] = (a + 1) * self.c[_POS[(a + 1, b)]]
            else:
                c[i] = (b + 1) * self.c[_POS[(a, b + 1)]]
        return Jet(c, self.order - 1)


# ---------------------------------------------------------------------------
# small vector/matrix helpers on lists of jets


def dot(u, v) -> Jet:
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def cross(u, v) -> list:
    return [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]


def matvec(A, v) -> list:
    return [dot(A[i], v) for i in range(3)]


def matmul(A, C) -> list:
    return [[sum((A[i][k] * C[k][j] for k in range(1, 3)), A[i][0] * C[0][j]) for j in range(3)]
            for i in range(3)]


def transpose(A) -> list:
    return [[A[j][i] for j in range(3)] for i in range(3)]


def values(vec) -> np.ndarray:
    """Stack the values of a vector (3,) or matrix (3, 3) of jets -> (n, 3) or (n, 3, 3)."""
    if isinstance(vec[0], Jet):
        return np.stack([v.value for v in vec], axis=-1)
    return np.stack([values(row) for row in vec], axis=-2)

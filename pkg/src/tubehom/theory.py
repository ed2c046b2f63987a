"""Shapiro-Lopatinskij check for the boundary system of powers of the Laplacian.

With the tangential frequency normalized to one, the half-line symbol of the
k-th power is (tau - i)^k and the boundary operators have symbols
((tau + i)(tau - i))^(l-1), l = 1..k.  The condition asks that the boundary
symbols be linearly independent modulo (tau - i)^k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PolyC:
    """Polynomial in tau with complex coefficients, stored lowest degree first.

    ``residual`` accumulates a bound for the rounding committed by divisions.
    """

    __slots__ = ("coef", "residual")

    def __init__(self, coef, residual: float = 0.0):
        c = np.atleast_1d(np.asarray(coef, dtype=complex)).copy()
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1, complex)
        self.coef = c
        self.residual = float(residual)

    @classmethod
    def tau(cls) -> PolyC:
        return cls([0, 1])

    @property
    def degree(self) -> int:
        return -1 if self.is_zero() else self.coef.size - 1

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coef) <= tol))

    def __call__(self, x: complex) -> complex:
        out = 0j
        for c in self.coef[::-1]:
            out = out * x + c
        return out

    def __add__(self, other) -> PolyC:
        other = other if isinstance(other, PolyC) else PolyC([other])
        n = max(self.coef.size, other.coef.size)
        a = np.zeros(n, complex)
        a[: self.coef.size] += self.coef
        a[: other.coef.size] += other.coef
        return PolyC(a, self.residual + other.residual)

    __radd__ = __add__

    def __neg__(self) -> PolyC:
        return PolyC(-self.coef, self.residual)

    def __sub__(self, other) -> PolyC:
        other = other if isinstance(other, PolyC) else PolyC([other])
        return self + (-other)

    def __mul__(self, other) -> PolyC:
        if not isinstance(other, PolyC):
            return PolyC(self.coef * complex(other), self.residual * abs(complex(other)))
        return PolyC(np.convolve(self.coef, other.coef), self.residual + other.residual)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> PolyC:
        out = PolyC([1])
        for _ in range(n):
            out = out * self
        return out

    def __divmod__(self, other: PolyC) -> tuple[PolyC, PolyC]:
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        r = self.coef.copy()
        d = other.coef
        dq = r.size - d.size
        if dq < 0:
            return PolyC([0]), PolyC(r, self.residual)
        q = np.zeros(dq + 1, complex)
        lead = d[-1]
        for i in range(dq, -1, -1):
            q[i] = r[i + d.size - 1] / lead
            r[i: i + d.size] -= q[i] * d
            r[i + d.size - 1] = 0.0
        quot, rem = PolyC(q), PolyC(r[: max(d.size - 1, 1)])
        back = quot * other + rem - self
        err = float(np.max(np.abs(back.coef)))
        quot.residual = rem.residual = self.residual + err
        return quot, rem

    def __mod__(self, other: PolyC) -> PolyC:
        return divmod(self, other)[1]

    def __floordiv__(self, other: PolyC) -> PolyC:
        return divmod(self, other)[0]

    def padded(self, n: int) -> np.ndarray:
        out = np.zeros(n, complex)
        m = min(n, self.coef.size)
        out[:m] = self.coef[:m]
        return out

    def __repr__(self) -> str:
        terms = [f"({c.real:g}{c.imag:+g}j)*tau^{i}" for i, c in enumerate(self.coef) if c != 0]
        return " + ".join(terms) or "0"


@dataclass
class BoundarySystem:
    k: int
    lplus: PolyC
    boundary: list[PolyC]


def build_system(k: int) -> BoundarySystem:
    if not 1 <= k <= 8:
        raise ValueError("k must be between 1 and 8")
    t = PolyC.tau()
    lplus = (t - 1j) ** k
    both = (t + 1j) * (t - 1j)
    return BoundarySystem(k, lplus, [both ** (l - 1) for l in range(1, k + 1)])


@dataclass
class IndependenceVerdict:
    passed: bool
    rank: int
    sigma_min: float
    sigma_max: float
    matrix: np.ndarray
    orders_distinct: bool
    orders_below: bool
    normal_symbols_nonzero: bool
    residual: float
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


def check_independence(system: BoundarySystem, threshold: float = 1e-8) -> IndependenceVerdict:
    """Remainders of the boundary symbols modulo L+, stacked as a k x k matrix."""
    k = system.k
    rems = [b % system.lplus for b in system.boundary]
    M = np.array([r.padded(k) for r in rems])
    sv = np.linalg.svd(M, compute_uv=False) if M.size else np.zeros(0)
    smin = float(sv.min()) if sv.size else 0.0
    smax = float(sv.max()) if sv.size else 0.0
    rank = int(np.count_nonzero(sv > threshold))
    orders = [b.degree for b in system.boundary]
    distinct = len(set(orders)) == len(orders)
    below = all(0 <= o < 2 * k for o in orders)
    # principal symbol at the conormal (tangential frequency 0, tau = 1) is the leading coefficient
    normal_ok = all(not b.is_zero() and abs(b.coef[-1]) > 0 for b in system.boundary)
    resid = max((r.residual for r in rems), default=0.0)
    passed = rank == k and smin > threshold and distinct and below and normal_ok
    return IndependenceVerdict(passed, rank, smin, smax, M, distinct, below, normal_ok, resid)


@dataclass
class Witness:
    l0: int
    value: complex
    expected: complex
    remainder: float

    @property
    def matches(self) -> bool:
        return abs(self.value - self.expected) <= 1e-12 * max(1.0, abs(self.expected))


def lowest_order_witness(system: BoundarySystem, a) -> Witness:
    """Evaluate sum_l a_l B_l / (tau - i)^(l0 - 1) at tau = i, l0 the first nonzero index."""
    a = np.asarray(a, dtype=complex)
    if a.size != system.k:
        raise ValueError("coefficient vector must have length k")
    nz = np.flatnonzero(a)
    if nz.size == 0:
        raise ValueError("coefficient vector must be nonzero")
    l0 = int(nz[0]) + 1
    Q = PolyC([0])
    for coef, b in zip(a, system.boundary):
        Q = Q + b * coef
    t = PolyC.tau()
    q, r = divmod(Q, (t - 1j) ** (l0 - 1))
    expected = (2j) ** (l0 - 1) * a[l0 - 1]
    return Witness(l0, complex(q(1j)), complex(expected), float(np.max(np.abs(r.coef))))

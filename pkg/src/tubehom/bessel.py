"""Bessel functions of integer order and their zeros.

J_nu is evaluated by Miller's backward recurrence, normalized with the identity
J_0 + 2 (J_2 + J_4 + ...) = 1.  Zeros are bracketed by a scan, refined by
Brent's method and polished with one Newton step.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize


class BracketError(RuntimeError):
    pass


def _series(nu: int, x: float) -> float:
    """Ascending series, used for small arguments."""
    term = (0.5 * x) ** nu / math.factorial(nu)
    total, k = term, 0
    q = -0.25 * x * x
    while abs(term) > 1e-17 * abs(total) or k < 3:
        k += 1
        term *= q / (k * (k + nu))
        total += term
        if k > 200:
            break
    return total


def besselj_orders(nmax: int, x: float) -> np.ndarray:
    """J_0(x), ..., J_nmax(x) for x > 0 by backward recurrence."""
    x = float(x)
    if x == 0.0:
        out = np.zeros(nmax + 1)
        out[0] = 1.0
        return out
    big = max(nmax, x)
    start = int(big + 30 + 12 * big ** (1.0 / 3.0))
    start += start % 2
    out = np.zeros(nmax + 1)
    j_next, j_cur = 0.0, 1e-250
    norm = 0.0
    for k in range(start, 0, -1):
        j_prev = 2.0 * k / x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        # j_cur now holds the unnormalized J_{k-1}
        if abs(j_cur) > 1e200:
            j_cur *= 1e-200
            j_next *= 1e-200
            out *= 1e-200
            norm *= 1e-200
        if k - 1 <= nmax:
            out[k - 1] = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
    norm += j_cur
    return out / norm


def besselj(nu: int, x: float) -> float:
    """J_nu(x) for integer nu >= 0 and real x."""
    if nu < 0:
        return (-1) ** nu * besselj(-nu, x)
    if x < 0:
        return (-1) ** nu * besselj(nu, -x)
    if x < 1e-3 or (x < 1.0 and nu > 0):
        return _series(nu, x)
    return float(besselj_orders(nu + 1, x)[nu])


def besselj_derivative(nu: int, x: float) -> float:
    if nu == 0:
        return -besselj(1, x)
    return 0.5 * (besselj(nu - 1, x) - besselj(nu + 1, x))


def bessel_j_zero(nu: int, k: int, step: float = 0.25) -> float:
    """k-th positive zero of J_nu."""
    if nu < 0 or k < 1:
        raise ValueError("need nu >= 0 and k >= 1")
    upper = nu + math.pi * (k + 2) + 10.0
    for _attempt in range(10):
        x = max(float(nu), step)
        fx = besselj(nu, x)
        found = 0
        while x < upper:
            y = x + step
            fy = besselj(nu, y)
            if fx == 0.0:
                found += 1
                if found == k:
                    return x
            elif fx * fy < 0:
                found += 1
                if found == k:
                    z = optimize.brentq(lambda t: besselj(nu, t), x, y, xtol=1e-15, rtol=1e-15, maxiter=200)
                    d = besselj_derivative(nu, z)
                    if d != 0.0:
                        z_new = z - besselj(nu, z) / d
                        if x <= z_new <= y and abs(besselj(nu, z_new)) <= abs(besselj(nu, z)):
                            z = z_new
                    return z
            x, fx = y, fy
        upper *= 2.0
        step *= 0.5
    raise BracketError(f"could not bracket zero {k} of J_{nu}")


def bessel_zeros_below(limit: float, nu_max: int | None = None) -> list[tuple[float, int, int]]:
    """All zeros j_{nu,k} < limit as (value, nu, k), sorted by value."""
    out = []
    nu = 0
    while True:
        if nu_max is not None and nu > nu_max:
            break
        if nu >= limit:
            break
        k = 1
        while True:
            z = bessel_j_zero(nu, k)
            if z >= limit:
                break
            out.append((z, nu, k))
            k += 1
        nu += 1
    out.sort()
    return out


# ---------------------------------------------------------------------------
# Annulus oracle (independent of the routines above)
# ---------------------------------------------------------------------------


def _annulus_function(a: float, b: float, n: int):
    from scipy import special

    def f(kk):
        return special.jv(n, kk * a) * special.yv(n, kk * b) - special.jv(n, kk * b) * special.yv(n, kk * a)
    return f


def annulus_roots(inner: float, outer: float, n: int, count: int) -> list[float]:
    """Lowest ``count`` roots k of J_n(k a) Y_n(k b) - J_n(k b) Y_n(k a)."""
    a, b = float(inner), float(outer)
    if not 0 < a < b:
        raise ValueError("need 0 < inner < outer")
    base = math.pi / (b - a)
    f = _annulus_function(a, b, n)
    step = 0.02 * base
    kk = 0.25 * base
    fk = f(kk)
    roots: list[float] = []
    limit = base * (count + 2) + n / a + 1.0
    while kk < limit and len(roots) < count:
        k1 = kk + step
        f1 = f(k1)
        if fk * f1 < 0:
            roots.append(optimize.brentq(f, kk, k1, xtol=1e-14, rtol=1e-15, maxiter=200))
        kk, fk = k1, f1
    return roots


def annulus_eigenvalues(inner: float, outer: float, count: int, n_max: int | None = None) -> list[tuple[float, int]]:
    """Lowest Dirichlet eigenvalues (with multiplicity) of the annulus inner < r < outer.

    Eigenvalues are k^2 for roots of the Bessel cross product; n >= 1 roots are
    double.  Uses scipy's Bessel functions, so it serves as an oracle independent
    of the in-house evaluation.  Returns (eigenvalue, angular order n) pairs.
    """
    found: list[tuple[float, int]] = []
    n_max = n_max if n_max is not None else count + 2
    for n in range(n_max + 1):
        for r in annulus_roots(inner, outer, n, count):
            found.extend([(r * r, n)] * (1 if n == 0 else 2))
    found.sort()
    return found[:count]

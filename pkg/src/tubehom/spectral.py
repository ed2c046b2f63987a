"""Eigensolvers, fiber spectra, band labelling and eigenvalue inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bessel import bessel_j_zero, bessel_zeros_below, besselj
from .operators import DiscreteOperator, FiberProjector, fiber_modes
from .geometry import TubeGrid

DENSE_LIMIT = 4000


class SolverError(RuntimeError):
    """Eigensolver failure; carries the achieved residual when known."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass
class EigenSystem:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    symbol: str = ""
    eps: float | None = None
    bands: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.values.size

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        return self.vectors.T @ (self.weights * u)

    def gram_defect(self) -> float:
        G = self.vectors.T @ (self.weights[:, None] * self.vectors)
        return float(np.max(np.abs(G - np.eye(self.count))))


def inertia_below(S: sp.spmatrix, sigma: float) -> int:
    """Number of eigenvalues of the symmetric matrix S below sigma.

    Uses a symmetric-pivoted sparse LU of S - sigma I; with a symmetric
    permutation the signs of U's diagonal give the inertia (Sylvester).
    """
    n = S.shape[0]
    A = (S - sigma * sp.identity(n, format="csc")).tocsc()
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise SolverError("inertia count needs a symmetric pivoting order")
    d = lu.U.diagonal()
    if np.any(d == 0):
        raise SolverError("shift hits an eigenvalue exactly")
    return int(np.count_nonzero(d < 0))


def _cluster_orthonormalize(values, vecs, gap=1e-8):
    """Re-orthonormalize eigenvectors within clusters of (nearly) equal eigenvalues."""
    i = 0
    n = values.size
    while i < n:
        j = i + 1
        while j < n and values[j] - values[j - 1] < gap * max(1.0, abs(values[j])):
            j += 1
        if j - i > 1:
            q, _ = np.linalg.qr(vecs[:, i:j])
            vecs[:, i:j] = q
        i = j
    return vecs


def eigensolve(op: DiscreteOperator, count: int, tol: float = 1e-10, seed: int = 0,
               dense_limit: int = DENSE_LIMIT, max_attempts: int = 6) -> EigenSystem:
    """Lowest ``count`` eigenpairs, eigenvectors orthonormal in the operator weights.

    Small problems use a dense symmetric solver.  Large ones use shift-invert
    Lanczos with a shift below the spectrum; the shift is certified by a sparse
    inertia count and completeness of the returned cluster is verified the same way.
    """
    n = op.n
    if count > n:
        raise ValueError("count exceeds the number of unknowns")
    S = op.symmetric_matrix()
    dscale = 1.0 / np.sqrt(op.weights)
    if n <= dense_limit:
        vals, vecs = sla.eigh(S.toarray(), subset_by_index=(0, count - 1))
        method = "dense"
    else:
        sigma = -1.0
        for _ in range(60):
            if inertia_below(S, sigma) == 0:
                break
            sigma = 2.0 * sigma - 1.0
        else:
            raise SolverError("could not place a shift below the spectrum")
        rng = np.random.default_rng(seed)
        k = count
        for _attempt in range(max_attempts):
            v0 = rng.standard_normal(n)
            try:
                vals, vecs = spla.eigsh(S, k=k, sigma=sigma, which="LM", v0=v0, tol=0,
                                        maxiter=20 * n)
            except spla.ArpackNoConvergence as exc:
                raise SolverError("shift-invert Lanczos did not converge",
                                  residual=None) from exc
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
            top = vals[-1]
            probe = top - 1e-7 * max(1.0, abs(top))
            below = int(np.count_nonzero(vals < probe))
            if inertia_below(S, probe) == below:
                break
            k = min(n - 1, k + max(4, k // 2))
        else:
            raise SolverError("inertia check failed: eigenvalues missing below the computed cluster")
        vals, vecs = vals[:count], vecs[:, :count]
        method = "shift-invert"
    vecs = _cluster_orthonormalize(vals, np.array(vecs))
    U = vecs * dscale[:, None]
    res = np.array([op.norm(op.apply(U[:, i]) - vals[i] * U[:, i]) for i in range(count)])
    # rounding in S limits the attainable residual to a small multiple of eps_mach * |S|
    floor = 100 * np.finfo(float).eps * spla.norm(S, 1)
    bad = res > tol * np.maximum(1.0, np.abs(vals)) + floor
    if np.any(bad):
        raise SolverError("eigen-residual above tolerance", residual=float(res.max()))
    return EigenSystem(values=np.asarray(vals), vectors=U, residuals=res, weights=op.weights,
                       symbol=op.symbol, eps=op.eps,
                       meta={"method": method, "residual_floor": float(floor), "tol": tol})


def dense_eigensystem(op: DiscreteOperator) -> EigenSystem:
    """All eigenpairs (small problems only)."""
    return eigensolve(op, op.n, dense_limit=max(op.n, DENSE_LIMIT))


# ---------------------------------------------------------------------------
# Fiber spectra
# ---------------------------------------------------------------------------


@dataclass
class FiberSpectrum:
    values: np.ndarray
    labels: list
    functions: list[Callable[[np.ndarray], np.ndarray]]

    @property
    def ground(self) -> Callable[[np.ndarray], np.ndarray]:
        return self.functions[0]


def _interval_mode(k: int):
    def f(w):
        return np.sin((k + 1) * np.pi * (np.asarray(w) + 1.0) / 2.0)
    return f


def _disk_mode(nu: int, j: float, parity: str):
    # int_0^1 J_nu(j r)^2 r dr = J_{nu+1}(j)^2 / 2; the angular integral is 2 pi for nu = 0, else pi
    nrm = math.sqrt(math.pi if nu == 0 else 0.5 * math.pi) * abs(besselj(nu + 1, j))

    def f(points):
        p = np.atleast_2d(points)
        r = np.hypot(p[:, 0], p[:, 1])
        th = np.arctan2(p[:, 1], p[:, 0])
        radial = np.array([besselj(nu, j * x) for x in r])
        ang = 1.0 if nu == 0 else (np.cos(nu * th) if parity == "cos" else np.sin(nu * th))
        return radial * ang / nrm
    return f


def disk_eigenvalues(count: int) -> list[tuple[float, int, int]]:
    """Lowest Dirichlet eigenvalues of the unit disk with multiplicity: (lambda, nu, k)."""
    limit = 2.0 * math.sqrt(count) + 6.0
    while True:
        zeros = bessel_zeros_below(limit)
        expanded = []
        for z, nu, k in zeros:
            expanded.extend([(z * z, nu, k)] * (1 if nu == 0 else 2))
        if len(expanded) >= count:
            return expanded[:count]
        limit *= 1.5


def fiber_spectrum(codim: int, count: int) -> FiberSpectrum:
    """Analytic Dirichlet spectrum of the unit fiber ball with L2-normalized eigenfunctions."""
    if codim == 1:
        vals = np.array([((k + 1) * np.pi / 2) ** 2 for k in range(count)])
        return FiberSpectrum(vals, list(range(count)), [_interval_mode(k) for k in range(count)])
    if codim == 2:
        ev = disk_eigenvalues(count)
        vals, labels, funcs = [], [], []
        seen: dict = {}
        for lam, nu, k in ev:
            parity = "cos" if nu == 0 or (nu, k) not in seen else "sin"
            seen[(nu, k)] = True
            j = bessel_j_zero(nu, k)
            vals.append(j * j)
            labels.append((nu, k, parity))
            funcs.append(_disk_mode(nu, j, parity))
        return FiberSpectrum(np.array(vals), labels, funcs)
    raise ValueError("codim must be 1 or 2")


def band_projectors(grid: TubeGrid, levels: int, gap: float = 1e-6) -> list[tuple[float, FiberProjector]]:
    """Projectors onto the discrete fiber eigenspaces, degenerate levels grouped."""
    fib = grid.fiber
    vals, modes = fiber_modes(fib)
    w = fib.weights[fib.interior]
    out = []
    i = 0
    while i < vals.size and len(out) < levels:
        j = i + 1
        while j < vals.size and vals[j] - vals[j - 1] < gap * vals[j]:
            j += 1
        out.append((float(vals[i:j].mean()), FiberProjector(modes[:, i:j], w, grid, f"E{len(out)}")))
        i = j
    return out


@dataclass
class BandReport:
    index: np.ndarray
    eigenvalue: np.ndarray
    residual: np.ndarray
    band: np.ndarray
    overlap: np.ndarray
    horizontal: np.ndarray
    mixed: np.ndarray

    @property
    def min_horizontal(self) -> float:
        ok = ~self.mixed
        return float(self.horizontal[ok].min()) if ok.any() else float("nan")


def common_eigen_check(eig: EigenSystem, vertical: DiscreteOperator,
                       projectors: list[tuple[float, FiberProjector]], threshold: float = 0.9,
                       shift: float = 0.0) -> BandReport:
    """Band labels by maximal fiber overlap, vertical residuals and horizontal parts.

    ``shift`` is added back to eigenvalues of a renormalized operator
    (the horizontal part is mu - (lambda_k - shift)).
    """
    n = eig.count
    over = np.zeros((n, len(projectors)))
    for s in range(n):
        u = eig.vectors[:, s]
        nu2 = vertical.inner(u, u)
        for b, (_, P) in enumerate(projectors):
            pu = P.apply(u)
            over[s, b] = vertical.inner(pu, pu) / nu2
    band = np.argmax(over, axis=1)
    best = over[np.arange(n), band]
    lam = np.array([projectors[b][0] for b in band])
    res = np.array([vertical.norm(vertical.apply(eig.vectors[:, s]) - lam[s] * eig.vectors[:, s])
                    for s in range(n)])
    horiz = eig.values - (lam - shift)
    return BandReport(np.arange(n), eig.values.copy(), res, band, best, horiz, best < threshold)


# ---------------------------------------------------------------------------
# Eigenvalue inequalities
# ---------------------------------------------------------------------------


@dataclass
class SmoothEVResult:
    eps: float
    threshold: float
    hypothesis_i: bool
    hypothesis_ii: bool
    holds_i: list[bool] | None
    holds_ii: list[bool] | None
    min_margin_i: float | None
    min_margin_ii: float | None

    @property
    def verdict_i(self) -> str:
        if not self.hypothesis_i:
            return "hypothesis not met"
        return "PASS" if all(self.holds_i) else "FAIL"

    @property
    def verdict_ii(self) -> str:
        if not self.hypothesis_ii:
            return "hypothesis not met"
        return "PASS" if all(self.holds_ii) else "FAIL"


def smooth_ev_check(lams, eps: float) -> SmoothEVResult:
    """Exact rational check of the two eigenvalue inequalities for k >= 1.

    (i)  eps <= 1 - l0/l1      implies (lk - l0)/eps^2 >= lk/eps
    (ii) eps^2 <= 1 - l0/l1    implies (lk - l0)/eps^2 >= lk
    The float inputs are converted exactly to rationals; no tolerance is used.
    """
    L = [Fraction(float(x)) for x in lams]
    if len(L) < 2:
        raise ValueError("need at least two eigenvalues")
    if any(b < a for a, b in zip(L, L[1:])):
        raise ValueError("eigenvalues must be sorted")
    if L[1] == L[0]:
        raise ValueError("degenerate input: lambda_1 = lambda_0")
    e = Fraction(float(eps))
    thr = 1 - L[0] / L[1]
    hyp_i, hyp_ii = e <= thr, e * e <= thr
    holds_i = holds_ii = None
    m_i = m_ii = None
    if hyp_i:
        margins = [(lk - L[0]) / (e * e) - lk / e for lk in L[1:]]
        holds_i = [m >= 0 for m in margins]
        m_i = float(min(margins))
    if hyp_ii:
        margins = [(lk - L[0]) / (e * e) - lk for lk in L[1:]]
        holds_ii = [m >= 0 for m in margins]
        m_ii = float(min(margins))
    return SmoothEVResult(float(eps), float(thr), hyp_i, hyp_ii, holds_i, holds_ii, m_i, m_ii)

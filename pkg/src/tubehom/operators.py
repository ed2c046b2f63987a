"""Discrete operators on the fixed unit-tube grid.

Every operator is stored as a pair (K, weights): K is a sparse matrix on the
interior unknowns and ``weights`` the quadrature weights of the inner product.
The action is u -> K u / weights, so an operator is symmetric in the weighted
inner product exactly when K is a symmetric matrix.  Dirichlet boundary nodes are
eliminated, never stored as unknowns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry import DensityField, FermiFrame, FiberGrid, Geometry, MetricField, TubeGrid


class OperatorError(ValueError):
    """Raised for invalid or mismatched operator input."""


class ConventionError(RuntimeError):
    """Raised when ground-state and renormalization conventions disagree."""


@dataclass
class DiscreteOperator:
    K: sp.csr_matrix
    weights: np.ndarray
    grid: TubeGrid
    symbol: str = ""
    order: int = 2
    eps: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.weights.size

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.K @ u) / (self.weights if u.ndim == 1 else self.weights[:, None])

    __call__ = apply

    def matrix(self) -> sp.csr_matrix:
        """Plain matrix of the action, W^{-1} K."""
        return sp.diags(1.0 / self.weights) @ self.K

    def symmetric_matrix(self) -> sp.csr_matrix:
        """D^{-1/2} K D^{-1/2}, similar to the action and symmetric when K is."""
        d = sp.diags(1.0 / np.sqrt(self.weights))
        return (d @ self.K @ d).tocsr()

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.weights * u, v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.weights * u, u)))

    def _check(self, other: DiscreteOperator):
        if self.n != other.n or not np.array_equal(self.weights, other.weights):
            raise OperatorError(f"operand mismatch: {self.symbol} vs {other.symbol}")

    def __add__(self, other: DiscreteOperator) -> DiscreteOperator:
        self._check(other)
        return DiscreteOperator((self.K + other.K).tocsr(), self.weights, self.grid,
                                f"({self.symbol}+{other.symbol})", max(self.order, other.order), self.eps)

    def __sub__(self, other: DiscreteOperator) -> DiscreteOperator:
        self._check(other)
        return DiscreteOperator((self.K - other.K).tocsr(), self.weights, self.grid,
                                f"({self.symbol}-{other.symbol})", max(self.order, other.order), self.eps)

    def __mul__(self, c: float) -> DiscreteOperator:
        return DiscreteOperator((c * self.K).tocsr(), self.weights, self.grid, f"{c:g}*{self.symbol}",
                                self.order, self.eps)

    __rmul__ = __mul__

    def shift(self, c: float) -> DiscreteOperator:
        """self + c * identity."""
        return DiscreteOperator((self.K + sp.diags(c * self.weights)).tocsr(), self.weights, self.grid,
                                f"({self.symbol}+{c:g})", self.order, self.eps)

    def compose(self, other: DiscreteOperator) -> DiscreteOperator:
        """self after other: K_self W^{-1} K_other."""
        self._check(other)
        K = (self.K @ sp.diags(1.0 / self.weights) @ other.K).tocsr()
        return DiscreteOperator(K, self.weights, self.grid, f"{self.symbol}.{other.symbol}",
                                self.order + other.order, self.eps)

    def symmetry_residual(self, rng: np.random.Generator, pairs: int = 20) -> float:
        worst = 0.0
        for _ in range(pairs):
            u, v = rng.standard_normal(self.n), rng.standard_normal(self.n)
            au, av = self.apply(u), self.apply(v)
            d = abs(self.inner(au, v) - self.inner(u, av))
            worst = max(worst, d / (self.norm(au) * self.norm(v) + self.norm(u) * self.norm(av)))
        return worst


@dataclass
class DiscreteState:
    values: np.ndarray
    tag: str = "m0"


# ---------------------------------------------------------------------------
# Stiffness assembly
# ---------------------------------------------------------------------------


def _stiffness(grid: TubeGrid, coef_s: np.ndarray | None, coef_f: np.ndarray | None) -> sp.csr_matrix:
    """Flux-form stiffness on all nodes, restricted to the interior unknowns.

    ``coef_s`` and ``coef_f`` are node values (ns, nf) of sqrt(det g) g^ss and
    sqrt(det g) g^{alpha alpha}; face values are arithmetic means of the two nodes.
    """
    fib = grid.fiber
    ns, nf = grid.ns, fib.points.shape[0]
    rows, cols, vals = [], [], []

    def add(p, q, c):
        rows.extend([p, q, p, q])
        cols.extend([p, q, q, p])
        vals.extend([c, c, -c, -c])

    if coef_s is not None:
        idx = np.arange(ns * nf).reshape(ns, nf)
        nxt = np.roll(idx, -1, axis=0)
        face = 0.5 * (coef_s + np.roll(coef_s, -1, axis=0)) * fib.weights / grid.hs
        add(idx.ravel(), nxt.ravel(), face.ravel())
    if coef_f is not None:
        p, q = fib.faces[:, 0], fib.faces[:, 1]
        base = (np.arange(ns) * nf)[:, None]
        face = 0.5 * (coef_f[:, p] + coef_f[:, q]) * fib.face_factor * grid.hs
        add((base + p).ravel(), (base + q).ravel(), face.ravel())
    rows = np.concatenate([np.ravel(r) for r in rows])
    cols = np.concatenate([np.ravel(c) for c in cols])
    vals = np.concatenate([np.ravel(v) for v in vals])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(ns * nf, ns * nf)).tocsr()
    keep = (np.arange(ns)[:, None] * nf + fib.interior[None, :]).ravel()
    K = K[keep][:, keep].tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def _metric_density(metric: MetricField) -> np.ndarray:
    """sqrt(det g) with the constant eps^codim removed (so that eps-families share weights)."""
    return np.sqrt(metric.det()) / metric.eps ** metric.codim


def assemble_laplace_beltrami(metric: MetricField, grid: TubeGrid | None = None,
                              measure: str = "m") -> DiscreteOperator:
    """Conservative discretization of -(1/sqrt g) d_i(sqrt g g^ij d_j).

    measure ``m`` returns the operator with weights sqrt(g) * cell volume; ``m0``
    returns its conjugate rho^{1/2} Lap rho^{-1/2} with the reference weights.
    Supported for metrics that are diagonal in the grid coordinates: zero mixed
    block and a fiber block proportional to the identity.
    """
    grid = grid or metric.grid
    if measure not in ("m", "m0"):
        raise OperatorError(f"unknown measure {measure!r}")
    if not metric.is_diagonal_product():
        raise OperatorError("assembly needs a zero mixed block and an isotropic fiber block "
                            "(use a parallel frame)")
    beta = metric.b[..., 0, 0]
    if np.min(metric.a) <= 0 or np.min(beta) <= 0:
        raise OperatorError("singular metric node")
    sig = _metric_density(metric)
    K = _stiffness(grid, sig / metric.a, sig / beta)
    w0 = grid.weights()
    sig_in = grid.to_interior(sig)
    if measure == "m":
        return DiscreteOperator(K, w0 * sig_in, grid, "Lap_g", 2, metric.eps, {"measure": "m"})
    d = sp.diags(1.0 / np.sqrt(sig_in))
    return DiscreteOperator((d @ K @ d).tocsr(), w0, grid, "conj Lap_g", 2, metric.eps,
                            {"measure": "m0"})


def assemble_vertical(grid: TubeGrid) -> DiscreteOperator:
    """Fiberwise flat Dirichlet Laplacian, block diagonal over base nodes."""
    ones = np.ones((grid.ns, grid.fiber.points.shape[0]))
    return DiscreteOperator(_stiffness(grid, None, ones), grid.weights(), grid, "Lap0_V", 2)


def assemble_reference(geometry: Geometry) -> DiscreteOperator:
    """Laplacian of the unscaled reference metric."""
    op = assemble_laplace_beltrami(geometry.reference(1.0), geometry.grid, "m0")
    op.symbol, op.eps = "Lap0", 1.0
    return op


def assemble_horizontal(lap0: DiscreteOperator, vertical: DiscreteOperator) -> DiscreteOperator:
    op = lap0 - vertical
    op.symbol = "Lap0_H"
    return op


def horizontal_form(lap_h: DiscreteOperator, u: np.ndarray) -> float:
    """<u, Lap0_H u>_0."""
    return lap_h.inner(u, lap_h.apply(u))


def assemble_reference_family(eps: float, vertical: DiscreteOperator, horizontal: DiscreteOperator,
                              lam0: float, renorm: str | None = None) -> DiscreteOperator:
    """eps^-2 (Lap0_V - lam0) + Lap0_H."""
    if eps <= 0:
        raise OperatorError("eps must be positive")
    vertical._check(horizontal)
    K = (vertical.K - sp.diags(lam0 * vertical.weights)) / eps**2 + horizontal.K
    return DiscreteOperator(K.tocsr(), vertical.weights, vertical.grid, "Lap0(eps)", 2, eps,
                            {"lam0": lam0, "renorm": renorm})


def conjugate_by_density(u: DiscreteState, rho: DensityField, grid: TubeGrid, direction: str) -> DiscreteState:
    """``out``: m0-normalized -> m-normalized (times rho^-1/2); ``in`` is the inverse."""
    r = rho.interior(grid)
    if np.min(r) <= 0:
        raise OperatorError("nonpositive density")
    if direction == "out":
        if u.tag != "m0":
            raise OperatorError("conjugation 'out' expects an m0 state")
        return DiscreteState(u.values / np.sqrt(r), "m")
    if direction == "in":
        if u.tag != "m":
            raise OperatorError("conjugation 'in' expects an m state")
        return DiscreteState(u.values * np.sqrt(r), "m0")
    raise OperatorError(f"unknown direction {direction!r}")


def assemble_induced_family(eps: float, geometry: Geometry, lam0: float,
                            renorm: str | None = None) -> DiscreteOperator:
    """rho^{1/2} (Lap_g(eps) - lam0/eps^2) rho^{-1/2}, symmetric in the reference weights."""
    g, _, dens = geometry.at(eps)
    op = assemble_laplace_beltrami(g, geometry.grid, "m0")
    op = op.shift(-lam0 / eps**2)
    op.symbol, op.eps, op.meta = "Lap(eps)", eps, {"lam0": lam0, "renorm": renorm,
                                                     "max_rho": float(dens.rho.max())}
    return op


# ---------------------------------------------------------------------------
# Fiber ground state and the projection onto E0
# ---------------------------------------------------------------------------


def fiber_stiffness(fiber: FiberGrid) -> tuple[np.ndarray, np.ndarray]:
    """Dense flat Dirichlet stiffness and weights of one fiber (interior nodes)."""
    nf = fiber.points.shape[0]
    K = np.zeros((nf, nf))
    p, q, c = fiber.faces[:, 0], fiber.faces[:, 1], fiber.face_factor
    np.add.at(K, (p, p), c)
    np.add.at(K, (q, q), c)
    np.add.at(K, (p, q), -c)
    np.add.at(K, (q, p), -c)
    i = fiber.interior
    return K[np.ix_(i, i)], fiber.weights[i]


def fiber_modes(fiber: FiberGrid, count: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Lowest discrete fiber eigenpairs; modes orthonormal in the fiber weights."""
    K, w = fiber_stiffness(fiber)
    d = 1.0 / np.sqrt(w)
    vals, vecs = sla.eigh(d[:, None] * K * d[None, :])
    modes = vecs * d[:, None]
    if count is not None:
        vals, modes = vals[:count], modes[:, :count]
    # fix signs: positive mean (ground state is positive), else positive first large entry
    for j in range(modes.shape[1]):
        col = modes[:, j]
        ref = col.sum() if abs(col.sum()) > 1e-8 * np.abs(col).sum() else col[np.argmax(np.abs(col) > 1e-6 * np.abs(col).max())]
        if ref < 0:
            modes[:, j] = -col
    return vals, modes


def analytic_ground_state(fiber: FiberGrid) -> np.ndarray:
    """Interior samples of the continuum fiber ground state (not yet normalized)."""
    from .bessel import bessel_j_zero, besselj

    pts = fiber.points[fiber.interior]
    if fiber.codim == 1:
        return np.cos(0.5 * np.pi * pts[:, 0])
    j01 = bessel_j_zero(0, 1)
    r = np.linalg.norm(pts, axis=1)
    return np.array([besselj(0, j01 * x) for x in r])


@dataclass(frozen=True)
class GroundState:
    """Fiber ground state and eigenvalue for a renormalization convention."""

    values: np.ndarray
    lam0: float
    renorm: str


def ground_state(fiber: FiberGrid, renorm: str = "discrete") -> GroundState:
    from .spectral import fiber_spectrum

    w = fiber.weights[fiber.interior]
    if renorm == "discrete":
        vals, modes = fiber_modes(fiber, 1)
        return GroundState(modes[:, 0], float(vals[0]), renorm)
    if renorm == "analytic":
        u = analytic_ground_state(fiber)
        u = u / np.sqrt(np.dot(w * u, u))
        return GroundState(u, float(fiber_spectrum(fiber.codim, 1).values[0]), renorm)
    raise ConventionError(f"unknown renormalization {renorm!r}")


@dataclass
class FiberProjector:
    """Orthogonal projection onto span(modes) in every fiber: (E u)(s) = sum_j <m_j, u(s)> m_j."""

    modes: np.ndarray
    fiber_weights: np.ndarray
    grid: TubeGrid
    symbol: str = "E"
    meta: dict = field(default_factory=dict)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        U = np.reshape(u, self.grid.shape)
        return (U * self.fiber_weights) @ self.modes

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.coefficients(u) @ self.modes.T).ravel()

    __call__ = apply

    def lift(self, base: np.ndarray) -> np.ndarray:
        """modes[:, 0] x base for a single-mode projector."""
        return np.outer(base, self.modes[:, 0]).ravel()


def e0_projection(u0: np.ndarray | GroundState, grid: TubeGrid) -> FiberProjector:
    renorm = None
    lam0 = None
    if isinstance(u0, GroundState):
        renorm, lam0, u0 = u0.renorm, u0.lam0, u0.values
    w = grid.fiber.weights[grid.fiber.interior]
    nrm = np.sqrt(np.dot(w * u0, u0))
    if abs(nrm - 1.0) > 1e-10:
        warnings.warn(f"fiber ground state not normalized (norm {nrm:.6g}); renormalizing", stacklevel=2)
        u0 = u0 / nrm
    return FiberProjector(np.asarray(u0)[:, None], w, grid, "E0", {"renorm": renorm, "lam0": lam0})


def check_convention(projector: FiberProjector, op: DiscreteOperator):
    """Hard error if the projector and the renormalized family use different conventions."""
    a, b = projector.meta.get("renorm"), op.meta.get("renorm")
    if a is not None and b is not None and a != b:
        raise ConventionError(f"E0 uses the {a} ground state but the operator is renormalized with {b}")
    la, lb = projector.meta.get("lam0"), op.meta.get("lam0")
    if la is not None and lb is not None and la != lb:
        raise ConventionError("E0 ground eigenvalue differs from the renormalization constant")


# ---------------------------------------------------------------------------
# Rotation fields, the operator A and the residual
# ---------------------------------------------------------------------------


def rotation_field(mu: int, alpha: int, grid: TubeGrid) -> DiscreteOperator:
    """L_{mu alpha} = w^alpha d_mu - w^mu d_alpha (0-based fiber indices).

    On the disk L_{01} = -d_theta, discretized by centered differences on each
    ring; the center node is fixed by rotations.  Codimension 1 gives the zero
    operator with meta flag ``trivial``.
    """
    w = grid.weights()
    n = grid.n_unknowns
    if grid.codim == 1:
        return DiscreteOperator(sp.csr_matrix((n, n)), w, grid, f"L{mu}{alpha}", 1, meta={"trivial": True})
    if not (0 <= mu < 2 and 0 <= alpha < 2):
        raise OperatorError("rotation indices out of range")
    if mu == alpha:
        return DiscreteOperator(sp.csr_matrix((n, n)), w, grid, f"L{mu}{alpha}", 1, meta={"trivial": True})
    fib = grid.fiber
    nt, ht = fib.ntheta, 2 * np.pi / fib.ntheta
    sign = -1.0 if (mu, alpha) == (0, 1) else 1.0
    nfi = fib.n_interior
    rows, cols, vals = [], [], []
    for i in range(fib.nr - 1):
        j = np.arange(nt)
        p = 1 + i * nt + j
        q = 1 + i * nt + (j + 1) % nt
        m = 1 + i * nt + (j - 1) % nt
        rows += [p, p]
        cols += [q, m]
        vals += [np.full(nt, sign / (2 * ht)), np.full(nt, -sign / (2 * ht))]
    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    Lf = sp.coo_matrix((v, (r, c)), shape=(nfi, nfi)).tocsr()
    L = sp.kron(sp.identity(grid.ns), Lf, format="csr")
    return DiscreteOperator((sp.diags(w) @ L).tocsr(), w, grid, f"L{mu}{alpha}", 1)


def assemble_A(frame: FermiFrame, W_L: np.ndarray, grid: TubeGrid,
               curvature: np.ndarray | None = None) -> tuple[DiscreteOperator, DiscreteOperator]:
    """A = -(1/12) R_{b n m a} L_{bn} L_{am} + W_L(s); returns (A, second-order part)."""
    R = frame.curvature if curvature is None else np.asarray(curvature)
    k = grid.codim
    w = grid.weights()
    n = grid.n_unknowns
    P = DiscreteOperator(sp.csr_matrix((n, n)), w, grid, "P_A", 2)
    Rn = R[1:, 1:, 1:, 1:] if R.shape[0] == k + 1 else R
    if Rn.shape != (k,) * 4:
        raise OperatorError("curvature tensor index bounds do not match the codimension")
    if k == 2 and np.any(Rn):
        L = {(i, j): rotation_field(i, j, grid) for i in range(2) for j in range(2)}
        K = sp.csr_matrix((n, n))
        for b in range(2):
            for nn in range(2):
                for m in range(2):
                    for a in range(2):
                        coef = Rn[b, nn, m, a]
                        if coef and b != nn and a != m:
                            K = K + coef * L[b, nn].compose(L[a, m]).K
        P = DiscreteOperator((-K / 12.0).tocsr(), w, grid, "P_A", 2)
    W = np.repeat(np.asarray(W_L, float), grid.fiber.n_interior)
    A = DiscreteOperator((P.K + sp.diags(w * W)).tocsr(), w, grid, "A", 2, meta={"P_A": P})
    return A, P


@dataclass(frozen=True)
class ResidualReport:
    eps: float
    norms: np.ndarray
    relative: np.ndarray
    quotient: np.ndarray

    @property
    def max_relative(self) -> float:
        return float(self.relative.max())


def residual_R(eps: float, lap: DiscreteOperator, lap_ref: DiscreteOperator, A: DiscreteOperator,
               panel: list[np.ndarray], lap0: DiscreteOperator) -> tuple[DiscreteOperator, ResidualReport]:
    """eps R(eps) = Lap(eps) - Lap0(eps) - A with its action on a panel of smooth states.

    ``relative`` divides by the operator Sobolev surrogate |u|_0 + |Lap0 u|_0.
    """
    op = lap - lap_ref - A
    op.symbol, op.eps = "epsR", eps
    norms, rel = [], []
    for u in panel:
        r = op.norm(op.apply(u))
        norms.append(r)
        rel.append(r / (lap0.norm(u) + lap0.norm(lap0.apply(u))))
    norms, rel = np.array(norms), np.array(rel)
    return op, ResidualReport(eps, norms, rel, rel / eps)


def dump_operator(op: DiscreteOperator, path) -> None:
    """Matrix Market file of the action matrix W^{-1} K."""
    import scipy.io

    scipy.io.mmwrite(str(path), op.matrix(), comment=f"{op.symbol} eps={op.eps}")


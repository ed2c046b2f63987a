"""Heat semigroups, the limit semigroup, the homogenization study and inequality suites.

Semigroups are always exp(-(t/2) Lap), evaluated by spectral expansion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bessel import annulus_roots
from .config import RunConfig
from .geometry import CurveSpec, Geometry, build_geometry, constant_curvature_tensor, effective_potential
from .operators import (DiscreteOperator, assemble_A, assemble_horizontal,
                        assemble_induced_family, assemble_reference, assemble_reference_family,
                        assemble_vertical, check_convention, e0_projection, fiber_modes, ground_state)
from .spectral import EigenSystem, SolverError, eigensolve, fiber_spectrum, smooth_ev_check

TIME_CONVENTION = "u(t) = exp(-(t/2) Lap) u0"


def fit_loglog(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


@dataclass
class EvolutionResult:
    state: np.ndarray
    t: float
    modes_used: int
    truncation_bound: float
    certified: bool
    wall_time: float
    coefficients: np.ndarray = field(repr=False, default=None)


def evolve(eig: EigenSystem, u0, t: float, tol: float = 1e-10) -> EvolutionResult:
    """sum_s exp(-t mu_s / 2) <u_s, u0> u_s, dropping modes with exp(-t mu_s/2)|u0| < tol.

    The omitted part (including everything above the computed modes) is bounded by
    exp(-t mu_cut / 2)|u0|, mu_cut the lowest omitted eigenvalue.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    start = time.perf_counter()
    u0 = getattr(u0, "values", u0)
    nrm = float(np.sqrt(np.dot(eig.weights * u0, u0)))
    damp = np.exp(-0.5 * t * eig.values)
    keep = damp * nrm >= tol
    m = int(np.argmin(keep)) if not keep.all() else eig.count
    c = eig.coefficients(u0)
    state = eig.vectors[:, :m] @ (damp[:m] * c[:m])
    complete = eig.count == eig.vectors.shape[0]
    if m < eig.count:
        bound = float(damp[m] * nrm)
    else:
        bound = 0.0 if complete else float(damp[-1] * nrm)
    return EvolutionResult(state, t, m, bound, bound <= tol, time.perf_counter() - start, c)


class LimitOperator:
    """Periodic second-order base Laplacian plus a potential, diagonalized densely."""

    def __init__(self, W_L: np.ndarray, length: float):
        W_L = np.asarray(W_L, float)
        ns = W_L.size
        h = length / ns
        main = np.full(ns, 2.0 / h**2) + W_L
        B = np.diag(main) - np.diag(np.full(ns - 1, 1.0 / h**2), 1) - np.diag(np.full(ns - 1, 1.0 / h**2), -1)
        B[0, -1] = B[-1, 0] = -1.0 / h**2
        self.values, self.vectors = sla.eigh(B)
        self.W_L, self.length, self.h = W_L, length, h

    def evolve(self, v0: np.ndarray, t: float) -> np.ndarray:
        return self.vectors @ (np.exp(-0.5 * t * self.values) * (self.vectors.T @ v0))


def limit_semigroup(W_L: np.ndarray, v0: np.ndarray, t: float, length: float = 2 * np.pi) -> np.ndarray:
    """exp(-(t/2)(Lap_L + W_L)) v0 on the periodic arclength grid."""
    return LimitOperator(W_L, length).evolve(np.asarray(v0, float), t)


def sobolev_norm(u: np.ndarray, k: int, lap0: DiscreteOperator, eig: EigenSystem | None = None) -> float:
    """|u|_0 + |Lap0^k u|_0 (Lap0^0 = identity, so k = 0 gives 2|u|_0).

    With a complete eigensystem the power is applied spectrally, otherwise by
    repeated application of the sparse operator (the same discrete quantity).
    """
    if not 0 <= k <= 3:
        raise ValueError("k must be between 0 and 3")
    base = lap0.norm(u)
    if eig is not None and eig.count == u.size:
        c = eig.coefficients(u)
        return base + float(np.sqrt(np.sum(eig.values ** (2 * k) * c**2)))
    v = u
    for _ in range(k):
        v = lap0.apply(v)
    return base + lap0.norm(v)


@dataclass
class InterpolationResult:
    k: int
    n: int
    exponent: float
    lhs: float
    rhs: float
    slack: float
    young_slack: float
    young_sharp_slack: float
    upper_index: int


def interpolation_check(u: np.ndarray, k: int, n: int, eig: EigenSystem,
                        alpha: float = 0.1) -> InterpolationResult:
    """Hoelder interpolation of spectral norms |u|_j = (sum mu^j c^2)^(1/2).

    For k <= 2n checks |u|_k <= |u|_0^(1-k/2n) |u|_2n^(k/2n).  For k = 2n+1 the
    upper norm index is raised to 2n+2.  Also reports two Young-type forms with
    theta = k/top: the loose form (1-theta) alpha^(-1/(1-theta)) |u|_0 + alpha/theta |u|_top
    and the sharp form (1-theta) alpha^(-theta/(1-theta)) |u|_0 + theta alpha |u|_top.
    """
    if not 1 <= k <= 2 * n + 1:
        raise ValueError("need 1 <= k <= 2n+1")
    if np.min(eig.values) < -1e-12 * max(1.0, np.max(np.abs(eig.values))):
        raise ValueError("spectral norms need a nonnegative spectrum")
    mu = np.clip(eig.values, 0.0, None)
    c2 = eig.coefficients(u) ** 2
    top = 2 * n if k <= 2 * n else 2 * n + 2
    theta = k / top

    def norm(j):
        return float(np.sqrt(np.sum(mu**j * c2)))

    lhs, n0, ntop = norm(k), norm(0), norm(top)
    rhs = n0 ** (1 - theta) * ntop**theta
    p = 1 - theta
    if p > 0:
        young = p * alpha ** (-1 / p) * n0 + (1 / theta) * alpha * ntop
        sharp = p * alpha ** (-theta / p) * n0 + theta * alpha * ntop
    else:
        # k equals the upper index: the Young forms reduce to the identity |u|_k <= |u|_k
        young = sharp = ntop
    return InterpolationResult(k, n, theta, lhs, rhs, rhs - lhs, young - lhs, sharp - lhs, top)


# ---------------------------------------------------------------------------
# The homogenization study context
# ---------------------------------------------------------------------------


def geometry_from_config(cfg: RunConfig, nw: int | None = None, curve: CurveSpec | None = None) -> Geometry:
    g = cfg["grid"]
    curve = curve or cfg.curve
    K = cfg["curvature"]["sectional"]
    R = constant_curvature_tensor(curve.ambient_dim, K) if K else None
    return build_geometry(curve, cfg["frame"], nw=nw or g["nw"], nr=g["nr"], ntheta=g["ntheta"],
                          curvature=R)


@dataclass
class PotentialCertificate:
    convention: str
    metric: str
    certified: bool
    candidates: dict
    oracle: dict
    shift_errors: dict
    radius: float
    eps: float

    def to_dict(self) -> dict:
        return {"convention": self.convention, "metric": self.metric, "certified": self.certified,
                "candidates": self.candidates, "oracle": self.oracle,
                "shift_errors": {str(k): v for k, v in self.shift_errors.items()},
                "radius": self.radius, "eps": self.eps}


def annulus_limits(radius: float, orders=(0, 1, 2), eps_list=(0.1, 0.05, 0.025)) -> dict:
    """eps -> 0 limit of (lowest order-n annulus eigenvalue - lam0/eps^2), Richardson in eps^2."""
    e1, e2, e3 = eps_list
    if not (np.isclose(e2, e1 / 2) and np.isclose(e3, e2 / 2)):
        raise ValueError("oracle epsilons must halve successively")
    lam0 = (np.pi / 2) ** 2
    out = {}
    for n in orders:
        f = []
        for e in eps_list:
            k = annulus_roots(radius - e, radius + e, n, 1)[0]
            f.append(k * k - lam0 / e**2)
        r1 = [(4 * f[1] - f[0]) / 3, (4 * f[2] - f[1]) / 3]
        out[n] = (16 * r1[1] - r1[0]) / 15
    return out


def potential_candidates(geo: Geometry, eps: float) -> dict:
    g, g0, dens = geo.at(eps)
    out = {}
    for met in (g, g0):
        for conv in ("plus", "minus"):
            out[f"{met.which}/{conv}"] = effective_potential(dens, met, conv)
    return out


def certify_potential(cfg: RunConfig) -> PotentialCertificate:
    """Select the effective-potential convention that matches the annulus oracle.

    The oracle is the unit-width-normalized annulus around a round circle; the
    candidate W_L values are computed on a circle of the same radius with the
    configured fiber grid.  Ties (within 0.1% of the best error) are resolved in
    favour of the nonnegative-Laplacian sign and the induced metric.
    """
    pot = cfg["potential"]
    radius = cfg["curve"]["radius"] if cfg["curve"]["kind"] == "circle" else 1.0
    curve = CurveSpec(kind="circle", radius=radius, ambient_dim=2, ns=32)
    geo = build_geometry(curve, "parallel", nw=cfg["grid"]["nw"])
    eps = pot["eps"]
    cands = {k: float(np.mean(v.W_L)) for k, v in potential_candidates(geo, eps).items()}
    oracle = annulus_limits(radius, (0, 1, 2), tuple(pot["oracle_epsilons"]))
    target = oracle[0]
    errs = {k: abs(v - target) for k, v in cands.items()}
    best = min(errs.values())
    pref = ["induced/plus", "induced/minus", "reference/plus", "reference/minus"]
    chosen = next(k for k in pref if errs[k] <= best + 1e-3 * abs(target))
    forced_metric, forced_conv = pot["metric"], pot["convention"]
    metric, conv = chosen.split("/")
    if forced_metric != "auto":
        metric = forced_metric
    if forced_conv != "auto":
        conv = forced_conv
    W = cands[f"{metric}/{conv}"]
    shift_err = {n: abs(oracle[n] - (n * n / radius**2 + W)) / abs(n * n / radius**2 + W) for n in oracle}
    certified = all(v <= pot["tolerance"] for v in shift_err.values())
    return PotentialCertificate(conv, metric, certified, cands, {str(k): v for k, v in oracle.items()},
                                shift_err, radius, eps)


class Study:
    """Geometry, ground state, reference operators and cached eigensystems for one grid."""

    def __init__(self, cfg: RunConfig, W_convention: tuple[str, str], nw: int | None = None,
                 geometry: Geometry | None = None):
        self.cfg = cfg
        self.geometry = geometry or geometry_from_config(cfg, nw)
        self.grid = self.geometry.grid
        self.renorm = cfg["renorm"]
        self.ground = ground_state(self.grid.fiber, self.renorm)
        self.lam0 = self.ground.lam0
        self.E0 = e0_projection(self.ground, self.grid)
        self.lap0 = assemble_reference(self.geometry)
        self.vertical = assemble_vertical(self.grid)
        self.horizontal = assemble_horizontal(self.lap0, self.vertical)
        self.metric_choice, self.convention = W_convention
        eps_pot = cfg["potential"]["eps"]
        g, g0, dens = self.geometry.at(eps_pot)
        W = effective_potential(dens, g if self.metric_choice == "induced" else g0, self.convention)
        self.W = W
        self.W_L = W.W_L
        self.limit = LimitOperator(self.W_L, self.grid.length)
        solver = cfg["solver"]
        self.tol, self.trunc_tol = solver["tol"], solver["truncation_tol"]
        self.count, self.max_count = solver["count"], solver["max_count"]
        self.seed = cfg.seed
        self._ops: dict = {}
        self._eigs: dict = {}

    # operators and spectra
    def operator(self, eps: float) -> DiscreteOperator:
        if eps not in self._ops:
            self._ops[eps] = assemble_induced_family(eps, self.geometry, self.lam0, self.renorm)
        return self._ops[eps]

    def reference_family(self, eps: float) -> DiscreteOperator:
        return assemble_reference_family(eps, self.vertical, self.horizontal, self.lam0, self.renorm)

    def eigensystem(self, eps: float, count: int | None = None) -> EigenSystem:
        count = min(count or self.count, self.grid.n_unknowns)
        have = self._eigs.get(eps)
        if have is None or have.count < count:
            self._eigs[eps] = eigensolve(self.operator(eps), count, self.tol, self.seed)
        return self._eigs[eps]

    def evolve(self, eps: float, u0: np.ndarray, t: float) -> EvolutionResult:
        """Evolve, enlarging the computed spectrum until the truncation is certified."""
        count = self.eigensystem(eps).count
        while True:
            res = evolve(self.eigensystem(eps, count), u0, t, self.trunc_tol)
            if res.certified or count >= min(self.max_count, self.grid.n_unknowns):
                return res
            count = min(2 * count, self.max_count, self.grid.n_unknowns)

    # states
    def base_mode(self, mode: int | None = None) -> np.ndarray:
        mode = self.cfg["initial"]["mode"] if mode is None else mode
        return np.cos(2 * np.pi * mode * self.grid.s / self.grid.length)

    def initial_state(self, eps: float | None = None) -> np.ndarray:
        ini = self.cfg["initial"]
        v = self.base_mode()
        if ini["fiber_mode"] == 0:
            fiber = self.ground.values
        else:
            fiber = fiber_modes(self.grid.fiber, ini["fiber_mode"] + 1)[1][:, ini["fiber_mode"]]
        u = self.grid.product_state(fiber, v)
        if ini["perturbation"] and eps is not None:
            w1 = self.grid.fiber.points[self.grid.fiber.interior, 0]
            u = u + ini["perturbation"] * eps * self.grid.product_state(w1 * fiber, v)
        return u

    def limit_state(self, u_eps: np.ndarray, t: float) -> np.ndarray:
        """E0 exp(-(t/2)(Lap_L + W_L)) E0 u, lifted to the tube."""
        v0 = self.E0.coefficients(u_eps)[:, 0]
        return self.E0.lift(self.limit.evolve(v0, t))


# ---------------------------------------------------------------------------
# Homogenization error and the sweep
# ---------------------------------------------------------------------------


@dataclass
class ErrorRecord:
    eps: float
    t: float
    l2: float
    sobolev2: float
    sobolev4: float
    certified_truncation: bool
    modes: int
    semigroup_norm: float
    limit_norm: float


def homogenization_error(eps: float, t: float, u_eps: np.ndarray, study: Study) -> ErrorRecord:
    op = study.operator(eps)
    check_convention(study.E0, op)
    ev = study.evolve(eps, u_eps, t)
    lim = study.limit_state(u_eps, t)
    diff = ev.state - lim
    lap0 = study.lap0
    l2 = lap0.norm(diff)
    return ErrorRecord(eps, t, l2, sobolev_norm(diff, 1, lap0), sobolev_norm(diff, 2, lap0),
                       ev.certified, ev.modes_used, lap0.norm(ev.state), lap0.norm(lim))


def refined_nw(nw: int, factor: float) -> int:
    n = int(round((nw - 1) * factor)) + 1
    return n if n % 2 else n + 1


@dataclass
class SweepReport:
    epsilons: list
    times: list
    rows: list
    rates: dict
    suites: dict
    conventions: dict
    wall_times: dict
    study: Study | None = field(default=None, repr=False)
    fine: Study | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return all(v.get("passed", True) for v in self.suites.values())

    def errors(self, t: float, key: str = "l2_error", certified_only: bool = False):
        eps, err = [], []
        for r in self.rows:
            if r["t"] == t and r["cell_status"] == "ok" and (not certified_only or r["rate_flag"] == "certified"):
                eps.append(r["epsilon"])
                err.append(r[key])
        return np.array(eps), np.array(err)


def _rate(eps, err) -> float | None:
    ok = err > 0
    if np.count_nonzero(ok) < 2:
        return None
    return fit_loglog(eps[ok], err[ok])


def sweep(cfg: RunConfig, certificate: PotentialCertificate | None = None, log=None) -> SweepReport:
    """Homogenization errors on the (eps, t) grid, Richardson certification, rates and suites."""
    t_start = time.perf_counter()
    log = log or (lambda msg: None)
    cert = certificate or certify_potential(cfg)
    conv = (cert.metric, cert.convention)
    study = Study(cfg, conv)
    ref = cfg["refinement"]
    fine = Study(cfg, conv, nw=refined_nw(cfg["grid"]["nw"], ref["factor"])) \
        if ref["enabled"] and study.grid.codim == 1 else None
    rows = []
    for eps in cfg.epsilons:
        log(f"sweep: eps = {eps}")
        u_eps = study.initial_state(eps)
        for t in cfg.times:
            row = {"epsilon": eps, "t": t}
            try:
                rec = homogenization_error(eps, t, u_eps, study)
                row.update(l2_error=rec.l2, sobolev2_error=rec.sobolev2, sobolev4_error=rec.sobolev4)
                status = "ok" if rec.certified_truncation else "truncation-uncertified"
                flag = "uncertified"
                if fine is not None:
                    rec_f = homogenization_error(eps, t, fine.initial_state(eps), fine)
                    change = abs(rec.l2 - rec_f.l2) / max(rec.l2, 1e-300)
                    row["refinement_change"] = change
                    if change < ref["threshold"]:
                        flag = "certified"
                row.update(rate_flag=flag, cell_status=status)
            except (SolverError, ValueError, RuntimeError) as exc:
                row.update(l2_error=float("nan"), sobolev2_error=float("nan"), sobolev4_error=float("nan"),
                           rate_flag="uncertified", cell_status=f"failed: {exc}")
            rows.append(row)
    report = SweepReport(cfg.epsilons, cfg.times, rows, {}, {}, {
        "time_convention": TIME_CONVENTION, "renorm": cfg["renorm"], "lam0": study.lam0,
        "W_metric": cert.metric, "W_sign": cert.convention, "W_certified": cert.certified,
        "W_L_mean": float(np.mean(study.W_L))}, {})
    for t in cfg.times:
        report.rates[t] = {}
        for key in ("l2_error", "sobolev2_error", "sobolev4_error"):
            e, err = report.errors(t, key, certified_only=fine is not None)
            report.rates[t][key] = _rate(e, err)
    report.wall_times["cells"] = time.perf_counter() - t_start
    suites = cfg["suites"]
    if suites["uniform"]:
        log("suite: uniform bounds")
        report.suites["uniform_bound"] = uniform_bound_suite(study, cfg.epsilons, cfg.times).to_dict()
    if suites["boundary"]:
        log("suite: boundary scaling")
        b = cfg["boundary"]
        report.suites["boundary_scaling"] = boundary_scaling(study, b["n"], b["epsilons"], b["t"]).to_dict()
    if suites["regularity"]:
        log("suite: regularity")
        report.suites["regularity"] = regularity_suite(study, cfg.epsilons).to_dict()
    report.wall_times["total"] = time.perf_counter() - t_start
    report.study, report.fine = study, fine
    return report


# ---------------------------------------------------------------------------
# Uniform bounds
# ---------------------------------------------------------------------------


def envelope(k: int, t: float) -> float:
    """max over x >= 0 of x^(2k) exp(-t x)."""
    return (2 * k / t) ** (2 * k) * math.exp(-2 * k)


@dataclass
class UniformBoundReport:
    checked: int = 0
    violations: int = 0
    skipped: list = field(default_factory=list)
    shifted_checked: int = 0
    shifted_violations: int = 0
    equicontinuity_checked: int = 0
    equicontinuity_violations: int = 0
    max_ratio: float = 0.0
    maximizer_error: float = float("nan")
    cells: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.shifted_violations == 0 and \
            self.equicontinuity_violations == 0 and self.maximizer_error <= 1e-12

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "cells"}
        d["passed"] = self.passed
        d["cells"] = self.cells
        return d


# rounding allowance for comparing two floating evaluations of the same sum
_ROUND = 1e-13


def _uniform_cells(mu, c2, unorm2, times, rep, label, shifted):
    ok = True
    for k in (1, 2):
        for t in times:
            lhs = float(np.sum(mu ** (2 * k) * np.exp(-t * mu) * c2))
            bound = envelope(k, t) * unorm2
            ratio = lhs / unorm2
            bad = lhs > bound * (1 + _ROUND)
            if shifted:
                rep.shifted_checked += 1
                rep.shifted_violations += int(bad)
            else:
                rep.checked += 1
                rep.violations += int(bad)
                rep.max_ratio = max(rep.max_ratio, ratio / envelope(k, t))
            rep.cells.append({"eps": label, "k": k, "t": t, "ratio": ratio, "envelope": envelope(k, t),
                              "shifted": shifted, "violated": bool(bad)})
            ok &= not bad
        for t1 in times:
            for t2 in times:
                if t2 <= t1 or t2 - t1 > 4:
                    continue
                d = np.exp(-0.5 * t1 * mu) - np.exp(-0.5 * t2 * mu)
                lhs = float(np.sum(mu ** (2 * k) * d**2 * c2))
                bound = (t2 - t1) * envelope(k + 1, t1) * unorm2
                rep.equicontinuity_checked += 1
                rep.equicontinuity_violations += int(lhs > bound * (1 + _ROUND))
    return ok


def uniform_bound_suite(study: Study, eps_list, times) -> UniformBoundReport:
    """Spectral-calculus bounds for |Lap(eps)^k u(eps, t)|^2 over the sweep.

    Cells whose discrete spectrum has a negative bottom are skipped; for them the
    same bounds are checked for the shifted operator Lap(eps) - mu_min, which is
    nonnegative.  The maximizer test uses a single eigenmode with t = 2k/mu.
    """
    rep = UniformBoundReport()
    for eps in eps_list:
        eig = study.eigensystem(eps)
        u = study.initial_state(eps)
        c2 = eig.coefficients(u) ** 2
        unorm2 = float(np.dot(eig.weights * u, u))
        mu = eig.values
        floor = eig.meta.get("residual_floor", 0.0) + 1e-9
        if mu[0] < -floor:
            rep.skipped.append({"eps": eps, "bottom": float(mu[0])})
        else:
            _uniform_cells(np.clip(mu, 0, None), c2, unorm2, times, rep, eps, False)
        _uniform_cells(mu - mu[0], c2, unorm2, times, rep, eps, True)
    # single-mode maximizer: u = eigenvector s, t = 2k / mu_s, so the ratio is the envelope
    eig = study.eigensystem(eps_list[0])
    s = int(np.argmax(eig.values > 0.5))
    mu_s = eig.values[s]
    err = 0.0
    for k in (1, 2):
        t = 2 * k / mu_s
        u = eig.vectors[:, s]
        c2 = eig.coefficients(u) ** 2
        lhs = float(np.sum(np.clip(eig.values, 0, None) ** (2 * k) * np.exp(-t * eig.values) * c2))
        err = max(err, abs(lhs / float(np.dot(eig.weights * u, u)) - envelope(k, t)) / envelope(k, t))
    rep.maximizer_error = err
    return rep


# ---------------------------------------------------------------------------
# Boundary trace scaling
# ---------------------------------------------------------------------------


def boundary_trace(study: Study, u: np.ndarray, n: int = 1) -> float:
    """L2 norm over the tube boundary of (Lap0_V - lam0) Lap0_V^(n-1) u.

    Values at the boundary are extrapolated quadratically from the three
    nearest interior fiber nodes (the boundary value of u itself is zero).
    """
    v = u
    for _ in range(n - 1):
        v = study.vertical.apply(v)
    g = study.vertical.apply(v) - study.lam0 * v
    grid = study.grid
    full = grid.to_full(g)
    fib = grid.fiber
    if grid.codim == 1:
        left = 3 * full[:, 1] - 3 * full[:, 2] + full[:, 3]
        right = 3 * full[:, -2] - 3 * full[:, -3] + full[:, -4]
        return float(np.sqrt(grid.hs * np.sum(left**2 + right**2)))
    rings = full[:, 1:].reshape(grid.ns, fib.nr, fib.ntheta)
    edge = 3 * rings[:, -2] - 3 * rings[:, -3] + rings[:, -4]
    return float(np.sqrt(grid.hs * (2 * np.pi / fib.ntheta) * np.sum(edge**2)))


@dataclass
class BoundaryReport:
    n: int
    t: float
    epsilons: list
    traces: list
    normalized: list
    status: list
    slope: float | None
    note: str = ""

    @property
    def used(self) -> int:
        return sum(s == "ok" for s in self.status)

    @property
    def vanishing(self) -> bool:
        """Trace zero to solver accuracy at every eps (product states on a flat tube)."""
        return max(self.normalized) < 1e-8

    @property
    def passed(self) -> bool:
        if self.vanishing:
            return True
        return self.slope is not None and 2.5 <= self.slope <= 3.5

    def to_dict(self) -> dict:
        return dict(self.__dict__, used=self.used, vanishing=self.vanishing, passed=self.passed)


def boundary_scaling(study: Study, n: int, eps_list, t: float, noise_floor: float = 1e-12) -> BoundaryReport:
    """Fit the eps-exponent of the normalized boundary trace of the evolved state."""
    traces, normed, status = [], [], []
    for eps in eps_list:
        u0 = study.initial_state(eps)
        ev = study.evolve(eps, u0, t)
        tr = boundary_trace(study, ev.state, n)
        nrm = sobolev_norm(ev.state, n, study.lap0)
        traces.append(tr)
        normed.append(tr / nrm)
        if not ev.certified:
            status.append("truncation-uncertified")
        elif tr < noise_floor:
            status.append("below-noise")
        else:
            status.append("ok")
    if max(normed) < 1e-8:
        # identically vanishing trace: nothing to fit
        status = ["below-noise" if s == "ok" else s for s in status]
    e = np.array([x for x, s in zip(eps_list, status) if s == "ok"])
    y = np.array([x for x, s in zip(normed, status) if s == "ok"])
    slope, note = (fit_loglog(e, y), "") if e.size >= 4 else (None, "insufficient range")
    return BoundaryReport(n, t, list(eps_list), traces, normed, status, slope, note)


# ---------------------------------------------------------------------------
# Uniform regularity
# ---------------------------------------------------------------------------


def stencil_h2_norm(grid, u: np.ndarray) -> float:
    """Discrete H^2 norm from first and second differences (codimension 1)."""
    full = grid.to_full(u)
    hs = grid.hs
    w = grid.fiber.points[:, 0]
    hw = w[1] - w[0]
    ds = (np.roll(full, -1, 0) - np.roll(full, 1, 0)) / (2 * hs)
    dss = (np.roll(full, -1, 0) - 2 * full + np.roll(full, 1, 0)) / hs**2
    dw = np.gradient(full, hw, axis=1, edge_order=2)
    dww = np.zeros_like(full)
    dww[:, 1:-1] = (full[:, 2:] - 2 * full[:, 1:-1] + full[:, :-2]) / hw**2
    dww[:, 0] = 2 * dww[:, 1] - dww[:, 2]
    dww[:, -1] = 2 * dww[:, -2] - dww[:, -3]
    dsw = (np.roll(dw, -1, 0) - np.roll(dw, 1, 0)) / (2 * hs)
    wt = hs * grid.fiber.weights
    total = sum(np.sum(wt * f**2) for f in (full, ds, dw, dss, dww, dsw))
    return float(np.sqrt(total))


@dataclass
class RegularityReport:
    epsilons: list
    K1: list
    D1: list
    D2: list
    panel_size: int
    ratios: dict
    monotone_growth: dict

    @property
    def passed(self) -> bool:
        return all(r < 3 for r in self.ratios.values()) and not any(self.monotone_growth.values())

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


def _panel_initial(study: Study, rng: np.random.Generator) -> list[np.ndarray]:
    grid = study.grid
    s = 2 * np.pi * grid.s / grid.length
    u0 = study.ground.values
    u1 = fiber_modes(grid.fiber, 2)[1][:, 1]
    states = [grid.product_state(u0, np.cos(n * s)) for n in range(4)]
    states += [grid.product_state(u0, np.sin(n * s)) for n in range(1, 4)]
    states += [grid.product_state(u1, np.cos(n * s)) for n in range(3)]
    for _ in range(4):
        a = rng.standard_normal(4)
        b = rng.standard_normal(2)
        v = sum(a[n] * np.cos(n * s) for n in range(4))
        states.append(grid.product_state(u0, v) + 0.1 * grid.product_state(u1, b[0] + b[1] * np.sin(s)))
    return states


def regularity_suite(study: Study, eps_list, min_panel: int = 20) -> RegularityReport:
    """Fitted constants of the uniform regularity estimates over an evolved-state panel."""
    rng = np.random.default_rng(study.seed + 7)
    initial = _panel_initial(study, rng)
    times = study.cfg.times
    K1, D1, D2 = [], [], []
    size = 0
    for eps in eps_list:
        op = study.operator(eps)
        k1 = d1 = d2 = 0.0
        size = 0
        for u0 in initial:
            n0 = op.norm(u0)
            for t in times:
                u = study.evolve(eps, u0, t).state
                nu = op.norm(u)
                if nu < 1e-12 * n0:
                    continue
                size += 1
                au = op.apply(u)
                aau = op.apply(au)
                na, naa = op.norm(au), op.norm(aau)
                h2 = stencil_h2_norm(study.grid, u) if study.grid.codim == 1 else \
                    sobolev_norm(u, 1, study.lap0)
                k1 = max(k1, h2 / (na + nu))
                d1 = max(d1, sobolev_norm(u, 1, study.lap0) / (nu + na))
                d2 = max(d2, sobolev_norm(u, 2, study.lap0) / (nu + na + naa))
        if size < min_panel:
            raise ValueError(f"regularity panel too small ({size} states)")
        K1.append(k1)
        D1.append(d1)
        D2.append(d2)

    def ratio(x):
        return float(max(x) / min(x))

    def growth(x):
        # constants listed along decreasing eps: flag a strictly increasing run with real growth
        order = np.argsort(eps_list)[::-1]
        y = np.array(x)[order]
        return bool(np.all(np.diff(y) > 0) and y[-1] / y[0] >= 1.5)

    return RegularityReport(list(eps_list), K1, D1, D2, size,
                            {"K1": ratio(K1), "D1": ratio(D1), "D2": ratio(D2)},
                            {"K1": growth(K1), "D1": growth(D1), "D2": growth(D2)})


# ---------------------------------------------------------------------------
# Kato-type suites on the reference family
# ---------------------------------------------------------------------------


@dataclass
class KatoReport:
    epsilons: list
    states: int
    lower_violations: int
    cross_violations: int
    triple_violations: int
    worst_margin: float
    passed_flag: bool = True

    @property
    def passed(self) -> bool:
        return self.lower_violations == 0 and self.cross_violations == 0 and self.triple_violations == 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        d.pop("passed_flag")
        return d


def kato_suite(study: Study, eps_list, states: int = 100, delta: float = 1e-6) -> KatoReport:
    """Lower bounds for |Lap0(eps) u| on random states, using the E0 splitting.

    Checks |Lap0(eps)u|^2 >= eps^-2 |V u_perp|^2 + |H u|^2 + (2/eps) <H u_perp, V u_perp> - tol,
    <H u_perp, V u_perp> >= -tol with tol = 1e-8 |Lap0 u|^2, and the triple bound
    |Lap0(eps) u| >= max(eps^-1 |V u_perp|, |H u|, sqrt(2/eps) <V u_perp, H u_perp>^(1/2)) (1 - delta).
    """
    rng = np.random.default_rng(study.seed + 11)
    V, H, E0, lap0 = study.vertical, study.horizontal, study.E0, study.lap0
    low = cross = triple = 0
    worst = np.inf
    for eps in eps_list:
        D = study.reference_family(eps)
        for _ in range(states):
            u = rng.standard_normal(V.n)
            up = u - E0.apply(u)
            Du, Vp, Hp, Hu = D.apply(u), V.apply(up), H.apply(up), H.apply(u)
            tol = 1e-8 * lap0.norm(lap0.apply(u)) ** 2
            lhs = D.norm(Du) ** 2
            cr = D.inner(Hp, Vp)
            rhs = D.norm(Vp) ** 2 / eps**2 + D.norm(Hu) ** 2 + 2 / eps * cr
            worst = min(worst, (lhs - rhs) / tol)
            low += int(lhs < rhs - tol)
            cross += int(cr < -tol)
            if eps <= 0.75:
                bound = max(D.norm(Vp) / eps, D.norm(Hu), math.sqrt(2 / eps * max(cr, 0.0)))
                triple += int(math.sqrt(lhs) < bound * (1 - delta))
    return KatoReport(list(eps_list), states, low, cross, triple, float(worst))


@dataclass
class PerturbationKatoReport:
    epsilons: list
    C: list
    annulator: float

    @property
    def variation(self) -> float:
        if max(self.C) == 0.0:
            return 1.0  # A vanishes identically
        return float(max(self.C) / min(self.C))

    @property
    def passed(self) -> bool:
        return self.variation < 3 and self.annulator < 1e-8

    def to_dict(self) -> dict:
        return dict(self.__dict__, variation=self.variation, passed=self.passed)


def perturbation_kato_suite(study: Study, eps_list, states: int = 100) -> PerturbationKatoReport:
    """C(eps) = max |A u| / (eps |Lap0(eps) u| + |u|) over smooth and random states."""
    grid = study.grid
    A, P = assemble_A(study.geometry.frame, study.W_L, grid)
    rng = np.random.default_rng(study.seed + 13)
    s = 2 * np.pi * grid.s / grid.length
    vals, modes = fiber_modes(grid.fiber, 8)
    panel = [grid.product_state(modes[:, j], np.cos(n * s)) for j in range(8) for n in range(4)]
    for _ in range(states):
        a = rng.standard_normal((8, 4))
        panel.append(sum(a[j, n] * grid.product_state(modes[:, j], np.cos(n * s))
                         for j in range(8) for n in range(4)))
    # annulator: <u0 x v, P_A (u0 x v)> = 0 for random v
    ann = 0.0
    for _ in range(10):
        u = grid.product_state(study.ground.values, rng.standard_normal(grid.ns))
        ann = max(ann, abs(P.inner(u, P.apply(u))) / max(P.inner(u, u), 1e-300))
    C = []
    for eps in eps_list:
        D = study.reference_family(eps)
        C.append(max(A.norm(A.apply(u)) / (eps * D.norm(D.apply(u)) + D.norm(u)) for u in panel))
    return PerturbationKatoReport(list(eps_list), C, ann)


@dataclass
class CommutatorReport:
    grids: list
    residuals: list
    order: float | None
    exact: bool

    @property
    def passed(self) -> bool:
        return self.exact or (self.order is not None and self.order >= 1)

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


def commutator_check(cfg: RunConfig, sizes=((32, 21), (64, 41), (128, 81))) -> CommutatorReport:
    """|[V, H] u| / |Lap0 u| for a smooth fiber-supported state under refinement."""
    res, hs = [], []
    for ns, nw in sizes:
        curve = CurveSpec(kind=cfg["curve"]["kind"], radius=cfg["curve"]["radius"], a=cfg["curve"]["a"],
                          b=cfg["curve"]["b"], ambient_dim=cfg["curve"]["ambient_dim"], ns=ns,
                          points=cfg.curve.points)
        geo = build_geometry(curve, cfg["frame"], nw=nw, nr=max(8, nw // 5), ntheta=cfg["grid"]["ntheta"])
        grid = geo.grid
        lap0 = assemble_reference(geo)
        V = assemble_vertical(grid)
        H = assemble_horizontal(lap0, V)
        pts = grid.fiber.points[grid.fiber.interior]
        r2 = np.sum(pts**2, axis=1)
        bump = np.where(r2 < 0.81, np.exp(-1.0 / np.clip(0.81 - r2, 1e-300, None)), 0.0) * (1 + pts[:, 0])
        u = grid.product_state(bump, np.cos(2 * np.pi * grid.s / grid.length) + 0.5)
        c = V.apply(H.apply(u)) - H.apply(V.apply(u))
        res.append(lap0.norm(c) / lap0.norm(lap0.apply(u)))
        hs.append(grid.hs)
    exact = max(res) < 1e-10
    order = None if exact else fit_loglog(hs, res)
    return CommutatorReport([list(s) for s in sizes], res, order, exact)


# ---------------------------------------------------------------------------
# Eigenvalue inequalities and the verify bundle
# ---------------------------------------------------------------------------


def smooth_ev_suite(kmax: int = 50) -> dict:
    """Both eigenvalue inequalities for the analytic interval and disk spectra, k <= kmax."""
    out = {}
    for name, codim in (("interval", 1), ("disk", 2)):
        lams = fiber_spectrum(codim, kmax + 1).values
        thr = float(1 - lams[0] / lams[1])
        cells = []
        for eps in (thr, 0.6, 0.5, 0.1, 0.9):
            r = smooth_ev_check(lams, eps)
            cells.append({"eps": eps, "verdict_i": r.verdict_i, "verdict_ii": r.verdict_ii,
                          "margin_i": r.min_margin_i, "margin_ii": r.min_margin_ii})
        ok = all("FAIL" not in (c["verdict_i"], c["verdict_ii"]) for c in cells)
        out[name] = {"threshold": thr, "cells": cells, "passed": ok}
    return {"spectra": out, "passed": all(v["passed"] for v in out.values())}


def interpolation_suite(study: Study, eps: float, states: int = 100, modes: int = 50) -> dict:
    """Hoelder slack on random combinations of reference-family eigenmodes."""
    eig = eigensolve(study.reference_family(eps), modes, study.tol, study.seed)
    rng = np.random.default_rng(study.seed + 17)
    worst = np.inf
    worst_young = np.inf
    for _ in range(states):
        u = eig.vectors @ rng.standard_normal(eig.count)
        for n in (1, 2):
            for k in range(1, 2 * n + 2):
                r = interpolation_check(u, k, n, eig)
                scale = max(r.lhs, 1e-300)
                worst = min(worst, r.slack / scale)
                worst_young = min(worst_young, r.young_slack / scale)
    return {"eps": eps, "states": states, "worst_relative_slack": float(worst),
            "worst_young_slack": float(worst_young), "passed": bool(worst >= -1e-12 and worst_young >= -1e-12)}


def verify(cfg: RunConfig, log=None) -> dict:
    """Every invariant suite on the configured geometry; each entry carries ``passed``."""
    log = log or (lambda msg: None)
    cert = certify_potential(cfg)
    study = Study(cfg, (cert.metric, cert.convention))
    eps_kato = [e for e in cfg.epsilons if e <= 0.75]
    out = {}
    log("verify: kato")
    out["kato"] = kato_suite(study, eps_kato, cfg["suites"]["kato_states"]).to_dict()
    log("verify: perturbation kato")
    out["perturbation_kato"] = perturbation_kato_suite(study, cfg.epsilons).to_dict()
    log("verify: uniform bounds")
    out["uniform_bound"] = uniform_bound_suite(study, cfg.epsilons, cfg.times).to_dict()
    log("verify: interpolation")
    out["interpolation"] = interpolation_suite(study, cfg.epsilons[0])
    log("verify: boundary scaling")
    b = cfg["boundary"]
    out["boundary_scaling"] = boundary_scaling(study, b["n"], b["epsilons"], b["t"]).to_dict()
    log("verify: commutators")
    out["commutator"] = commutator_check(cfg).to_dict()
    out["smooth_ev"] = smooth_ev_suite()
    out["potential"] = {**cert.to_dict(), "passed": cert.certified}
    return out

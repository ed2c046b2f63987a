"""Closed curves, Fermi frames, tube grids, metric blocks, density and effective potential.

All tube fields live on the fixed unit tube: a periodic arclength grid along the
curve times a grid on the unit fiber ball (the interval (-1, 1) in codimension 1,
the unit disk in codimension 2).  Rescaled quantities at width eps are evaluated
at the physical point (s, eps*w) and pulled back to the unit tube.

Metric blocks use the splitting
    g_ss = a + c^T b^{-1} c,   g_s.alpha = c_alpha,   g_alpha.beta = b_alpha.beta
so that det g = a * det b.  The block ``a`` is the horizontal part of the metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate


class GeometryError(ValueError):
    """Raised for invalid curves, grids or metrics."""


# ---------------------------------------------------------------------------
# Curves and frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveSpec:
    """A closed curve together with its sampling along arclength.

    kind is one of ``circle`` (radius), ``ellipse`` (a, b), ``cylinder``
    (a closed geodesic of length 2*pi*radius, so the tube is the flat product
    of a circle and the fiber ball) or ``sampled`` (points of a closed curve).
    """

    kind: str = "circle"
    radius: float = 1.0
    a: float = 2.0
    b: float = 1.0
    points: tuple | None = None
    ambient_dim: int = 2
    ns: int = 256

    @property
    def codim(self) -> int:
        return self.ambient_dim - 1


@dataclass(frozen=True)
class FermiFrame:
    """Arclength-sampled curve with tangent, normal frame, curvature and connection.

    ``kappa[i, alpha]`` is <gamma''(s_i), nu_alpha(s_i)>; ``connection[i, sigma, alpha]``
    is <nu_sigma, d nu_alpha / ds>.  ``curvature`` is the ambient curvature tensor in
    the frame basis (index 0 is the tangent, indices 1.. the normals).
    """

    s: np.ndarray
    length: float
    position: np.ndarray
    tangent: np.ndarray
    normals: np.ndarray
    kappa: np.ndarray
    connection: np.ndarray
    curvature: np.ndarray
    frame_choice: str = "parallel"
    holonomy_defect: float = 0.0
    orthonormality_residual: float = 0.0

    @property
    def ns(self) -> int:
        return self.s.size

    @property
    def codim(self) -> int:
        return self.normals.shape[1]

    @property
    def max_kappa(self) -> float:
        return float(np.max(np.linalg.norm(self.kappa, axis=1)))

    @property
    def is_flat(self) -> bool:
        return not np.any(self.curvature)

    @property
    def has_connection(self) -> bool:
        return bool(np.any(self.connection))


def constant_curvature_tensor(dim: int, sectional: float) -> np.ndarray:
    """R_abcd = K (delta_ac delta_bd - delta_ad delta_bc) in an orthonormal basis."""
    eye = np.eye(dim)
    return sectional * (np.einsum("ac,bd->abcd", eye, eye) - np.einsum("ad,bc->abcd", eye, eye))


def _rot90(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _planar_samples(curve: CurveSpec):
    """Arclength nodes with position, tangent, in-plane normal and signed curvature."""
    ns = curve.ns
    if curve.kind in ("circle", "cylinder"):
        R = float(curve.radius)
        if R <= 0:
            raise GeometryError("degenerate curve: radius must be positive")
        length = 2 * np.pi * R
        s = np.arange(ns) * length / ns
        phi = s / R
        pos = R * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        tan = np.stack([-np.sin(phi), np.cos(phi)], axis=1)
        kap = np.full(ns, 0.0 if curve.kind == "cylinder" else 1.0 / R)
        return s, length, pos, tan, _rot90(tan), kap
    if curve.kind == "ellipse":
        a, b = float(curve.a), float(curve.b)
        if a <= 0 or b <= 0:
            raise GeometryError("degenerate curve: semi-axes must be positive")

        def speed(t):
            return np.sqrt(a * a * np.sin(t) ** 2 + b * b * np.cos(t) ** 2)

        length = integrate.quad(speed, 0.0, 2 * np.pi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        s = np.arange(ns) * length / ns
        t = np.empty(ns)
        t_prev, s_prev = 0.0, 0.0
        for i, target in enumerate(s):
            # Newton on s(t) = target, starting from the previous node
            ti = t_prev + (target - s_prev) / speed(t_prev)
            for _ in range(50):
                si = s_prev + integrate.quad(speed, t_prev, ti, epsabs=1e-14, epsrel=1e-13, limit=100)[0]
                step = (si - target) / speed(ti)
                ti -= step
                if abs(step) < 1e-15:
                    break
            t[i], t_prev, s_prev = ti, ti, target
        d1 = np.stack([-a * np.sin(t), b * np.cos(t)], axis=1)
        sp = np.linalg.norm(d1, axis=1)
        tan = d1 / sp[:, None]
        pos = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
        kap = a * b / sp**3
        return s, length, pos, tan, _rot90(tan), kap
    raise GeometryError(f"unknown planar curve kind {curve.kind!r}")


def _sampled_curve(curve: CurveSpec):
    """Periodic spline through sample points, resampled at equal arclength."""
    pts = np.asarray(curve.points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4 or pts.shape[1] != curve.ambient_dim:
        raise GeometryError("sampled curve needs at least 4 points of the ambient dimension")
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    if seg.sum() < 1e-12:
        raise GeometryError("degenerate (zero-length) curve")
    if np.any(seg < 1e-14 * seg.sum()):
        raise GeometryError("degenerate curve: repeated sample points")
    if seg[-1] > 5.0 * np.median(seg[:-1]):
        raise GeometryError("non-closed sample set: closing gap much larger than the sample spacing")
    u = np.concatenate([[0.0], np.cumsum(seg)])
    spl = interpolate.CubicSpline(u, np.vstack([pts, pts[:1]]), bc_type="periodic")
    fine = np.linspace(0.0, u[-1], 64 * len(pts) + 1)
    speed = np.linalg.norm(spl(fine, 1), axis=1)
    arc = integrate.cumulative_simpson(speed, x=fine, initial=0.0)
    length = float(arc[-1])
    ns = curve.ns
    s = np.arange(ns) * length / ns
    par = np.interp(s, arc, fine)
    for _ in range(3):
        arc_at = np.interp(par, fine, arc)
        par -= (arc_at - s) / np.linalg.norm(spl(par, 1), axis=1)
    d1, d2 = spl(par, 1), spl(par, 2)
    sp = np.linalg.norm(d1, axis=1)
    tan = d1 / sp[:, None]
    # second derivative with respect to arclength
    acc = (d2 - np.sum(d2 * tan, axis=1)[:, None] * tan) / sp[:, None] ** 2
    return s, length, spl(par), tan, acc


def _parallel_transport(tan: np.ndarray, first: np.ndarray) -> tuple[np.ndarray, float]:
    """Rotation-minimizing normal vector along the loop; returns it and the closing angle.

    Each step applies the minimal rotation taking tangent i to tangent i+1.
    """
    ns = tan.shape[0]
    n1 = np.empty_like(tan)
    n1[0] = first
    cur = first
    for i in range(ns):
        j = (i + 1) % ns
        axis = np.cross(tan[i], tan[j])
        sn, cs = np.linalg.norm(axis), float(np.dot(tan[i], tan[j]))
        if sn > 0:
            k = axis / sn
            ang = np.arctan2(sn, cs)
            cur = cur * np.cos(ang) + np.cross(k, cur) * np.sin(ang) + k * np.dot(k, cur) * (1 - np.cos(ang))
        cur = cur - np.dot(cur, tan[j]) * tan[j]
        cur = cur / np.linalg.norm(cur)
        if j:
            n1[j] = cur
    n2 = np.cross(tan, n1)
    ang = np.arctan2(np.dot(cur, n2[0]), np.dot(cur, n1[0]))
    return n1, float(ang)


def build_frame(curve: CurveSpec, frame_choice: str = "parallel",
                curvature: np.ndarray | None = None) -> FermiFrame:
    """Arclength Fermi frame of a closed curve.

    Planar curves in R^3 get the in-plane normal and the plane normal, which is
    a parallel frame.  For sampled space curves the parallel frame is computed by
    transport around the loop; a nonzero closing angle is distributed uniformly,
    which produces a constant connection coefficient and is reported as
    ``holonomy_defect``.
    """
    if curve.ns < 16:
        raise GeometryError("N_s must be at least 16")
    if curve.ambient_dim not in (2, 3):
        raise GeometryError("ambient dimension must be 2 or 3")
    if frame_choice not in ("parallel", "frenet"):
        raise GeometryError(f"unknown frame choice {frame_choice!r}")
    m = curve.ambient_dim
    codim = m - 1
    defect = 0.0
    conn = np.zeros((curve.ns, codim, codim))

    if curve.kind == "sampled" and m == 3:
        s, length, pos, tan, acc = _sampled_curve(curve)
        ns = s.size
        if frame_choice == "frenet":
            k = np.linalg.norm(acc, axis=1)
            if np.min(k) < 1e-8:
                raise GeometryError("Frenet frame requires nonvanishing curvature")
            n1 = acc / k[:, None]
            n2 = np.cross(tan, n1)
            dn1 = (np.roll(n1, -1, 0) - np.roll(n1, 1, 0)) * (ns / (2 * length))
            tau = np.sum(dn1 * n2, axis=1)
            conn[:, 1, 0] = tau
            conn[:, 0, 1] = -tau
        else:
            seed = np.cross(tan[0], np.eye(3)[np.argmin(np.abs(tan[0]))])
            seed /= np.linalg.norm(seed)
            n1, defect = _parallel_transport(tan, seed)
            n2 = np.cross(tan, n1)
            if abs(defect) > 1e-10:
                phi = -defect * s / length
                n1, n2 = (np.cos(phi)[:, None] * n1 + np.sin(phi)[:, None] * n2,
                          -np.sin(phi)[:, None] * n1 + np.cos(phi)[:, None] * n2)
                rate = -defect / length
                conn[:, 1, 0] = rate
                conn[:, 0, 1] = -rate
        normals = np.stack([n1, n2], axis=1)
        kappa = np.einsum("im,iam->ia", acc, normals)
    else:
        if curve.kind == "sampled":
            s, length, pos, tan, acc = _sampled_curve(curve)
            nu = _rot90(tan)
            kap = np.sum(acc * nu, axis=1)
        else:
            s, length, pos, tan, nu, kap = _planar_samples(curve)
        if frame_choice == "frenet" and m == 3:
            if np.min(np.abs(kap)) < 1e-8:
                raise GeometryError("Frenet frame requires nonvanishing curvature")
            sign = np.sign(kap)
            nu, kap = nu * sign[:, None], kap * sign
        if m == 2:
            normals = nu[:, None, :]
            kappa = kap[:, None]
        else:
            pos = np.column_stack([pos, np.zeros(len(s))])
            tan = np.column_stack([tan, np.zeros(len(s))])
            n1 = np.column_stack([nu, np.zeros(len(s))])
            n2 = np.tile([0.0, 0.0, 1.0], (len(s), 1))
            if frame_choice == "frenet":
                n2 = np.cross(tan, n1)
            normals = np.stack([n1, n2], axis=1)
            kappa = np.column_stack([kap, np.zeros(len(s))])

    basis = np.concatenate([tan[:, None, :], normals], axis=1)
    gram = np.einsum("iam,ibm->iab", basis, basis)
    resid = float(np.max(np.abs(gram - np.eye(m))))
    if resid > 1e-12:
        raise GeometryError(f"frame not orthonormal (residual {resid:.3e})")
    if curvature is None:
        curvature = np.zeros((m, m, m, m))
    curvature = np.asarray(curvature, dtype=float)
    if curvature.shape != (m, m, m, m):
        raise GeometryError(f"curvature tensor must have shape {(m,) * 4}")
    return FermiFrame(s=s, length=float(length), position=pos, tangent=tan, normals=normals,
                      kappa=kappa, connection=conn, curvature=curvature,
                      frame_choice=frame_choice, holonomy_defect=defect,
                      orthonormality_residual=resid)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiberGrid:
    """Nodes, quadrature weights and flux faces on the closed unit fiber ball.

    ``faces`` lists node pairs (p, q) coupled by the flat Laplacian with geometric
    factor ``face_factor`` (flux area over node distance), so that the flat
    Dirichlet Laplacian has stiffness sum_faces factor * (u_p - u_q)^2.
    """

    codim: int
    points: np.ndarray
    weights: np.ndarray
    boundary: np.ndarray
    faces: np.ndarray
    face_factor: np.ndarray
    nw: int = 0
    nr: int = 0
    ntheta: int = 0

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary))

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


def interval_fiber(nw: int) -> FiberGrid:
    if nw < 5:
        raise GeometryError("fiber grid needs at least 5 nodes")
    if nw % 2 == 0:
        raise GeometryError("N_w must be odd so that w = 0 is a node")
    w = np.linspace(-1.0, 1.0, nw)
    h = w[1] - w[0]
    wt = np.full(nw, h)
    wt[[0, -1]] = h / 2
    bnd = np.zeros(nw, bool)
    bnd[[0, -1]] = True
    faces = np.column_stack([np.arange(nw - 1), np.arange(1, nw)])
    return FiberGrid(codim=1, points=w[:, None], weights=wt, boundary=bnd, faces=faces,
                     face_factor=np.full(nw - 1, 1.0 / h), nw=nw)


def disk_fiber(nr: int, ntheta: int) -> FiberGrid:
    """Polar grid: a center node plus ``nr`` rings (the last one on the boundary)."""
    if nr < 8:
        raise GeometryError("polar-axis stencil needs N_r >= 8")
    if ntheta < 4 or ntheta % 2:
        raise GeometryError("N_theta must be even and at least 4")
    h, ht = 1.0 / nr, 2 * np.pi / ntheta
    r = np.arange(1, nr + 1) * h
    th = np.arange(ntheta) * ht
    rr, tt = np.meshgrid(r, th, indexing="ij")
    pts = np.vstack([[0.0, 0.0], np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])])
    ring_w = np.outer(r * h * ht, np.ones(ntheta))
    ring_w[-1] = (1.0 - (1.0 - h / 2) ** 2) * ht / 2
    wt = np.concatenate([[np.pi * (h / 2) ** 2], ring_w.ravel()])
    bnd = np.zeros(pts.shape[0], bool)
    bnd[1 + (nr - 1) * ntheta:] = True

    def idx(i, j):
        return 1 + (i - 1) * ntheta + (j % ntheta)

    faces, fac = [], []
    for j in range(ntheta):
        faces.append((0, idx(1, j)))
        fac.append(ht / 2)
    for i in range(1, nr):
        for j in range(ntheta):
            faces.append((idx(i, j), idx(i + 1, j)))
            fac.append((r[i - 1] + h / 2) * ht / h)
    for i in range(1, nr + 1):
        for j in range(ntheta):
            faces.append((idx(i, j), idx(i, j + 1)))
            fac.append(h / (r[i - 1] * ht))
    return FiberGrid(codim=2, points=pts, weights=wt, boundary=bnd, faces=np.array(faces),
                     face_factor=np.array(fac), nr=nr, ntheta=ntheta)


@dataclass(frozen=True)
class TubeGrid:
    """Periodic arclength base grid times a fiber grid; unknowns are s-major."""

    s: np.ndarray
    length: float
    fiber: FiberGrid

    @property
    def ns(self) -> int:
        return self.s.size

    @property
    def hs(self) -> float:
        return self.length / self.ns

    @property
    def codim(self) -> int:
        return self.fiber.codim

    @property
    def n_unknowns(self) -> int:
        return self.ns * self.fiber.n_interior

    @property
    def shape(self) -> tuple[int, int]:
        return self.ns, self.fiber.n_interior

    def weights(self) -> np.ndarray:
        """Reference (m0) quadrature weights on the interior unknowns."""
        return np.tile(self.hs * self.fiber.weights[self.fiber.interior], self.ns)

    def total_volume(self) -> float:
        return self.length * self.fiber.volume

    def to_full(self, u: np.ndarray) -> np.ndarray:
        """Interior vector -> (ns, n_fiber) array with zero Dirichlet values."""
        out = np.zeros((self.ns, self.fiber.points.shape[0]), dtype=np.result_type(u, float))
        out[:, self.fiber.interior] = np.reshape(u, self.shape)
        return out

    def to_interior(self, full: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(full[:, self.fiber.interior]).ravel()

    def product_state(self, fiber_values: np.ndarray, base_values: np.ndarray) -> np.ndarray:
        """Interior vector of the product (fiber function) x (base function)."""
        fv = np.asarray(fiber_values)
        if fv.size == self.fiber.points.shape[0]:
            fv = fv[self.fiber.interior]
        return np.outer(base_values, fv).ravel()


def make_grid(frame: FermiFrame, nw: int = 201, nr: int = 16, ntheta: int = 16) -> TubeGrid:
    fiber = interval_fiber(nw) if frame.codim == 1 else disk_fiber(nr, ntheta)
    return TubeGrid(s=frame.s, length=frame.length, fiber=fiber)


# ---------------------------------------------------------------------------
# Metric blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricField:
    """Block metric data on all nodes of the unit tube (shape (ns, n_fiber, ...)).

    ``a`` is the horizontal scalar block, ``c`` the mixed block (codim,), ``b`` the
    fiber block (codim, codim).  ``eps`` is the rescaling parameter (1 for the
    unscaled Fermi metric) and ``which`` is ``induced`` or ``reference``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    frame: FermiFrame
    grid: TubeGrid
    which: str = "induced"
    mode: str = "exact"
    order: int = 2
    eps: float = 1.0

    @property
    def codim(self) -> int:
        return self.grid.codim

    def full(self) -> np.ndarray:
        """Assembled metric tensor, shape (ns, nf, m, m) in coordinates (s, w)."""
        ns, nf = self.a.shape
        m = 1 + self.codim
        g = np.empty((ns, nf, m, m))
        binv_c = np.linalg.solve(self.b, self.c[..., None])[..., 0]
        g[..., 0, 0] = self.a + np.sum(self.c * binv_c, axis=-1)
        g[..., 0, 1:] = self.c
        g[..., 1:, 0] = self.c
        g[..., 1:, 1:] = self.b
        return g

    def dual(self) -> np.ndarray:
        return np.linalg.inv(self.full())

    def det(self) -> np.ndarray:
        return self.a * np.linalg.det(self.b)

    def is_diagonal_product(self) -> bool:
        """True when c = 0 and b is a scalar multiple of the identity at every node."""
        if np.any(self.c):
            return False
        eye = np.eye(self.codim)
        return bool(np.allclose(self.b, self.b[..., :1, :1] * eye, rtol=0, atol=1e-15 * np.max(np.abs(self.b))))


def _blocks_at(frame: FermiFrame, w: np.ndarray, mode: str, order: int, which: str):
    """Unscaled metric blocks at physical fiber points w, shape (ns, nf, codim)."""
    k = frame.codim
    ns, nf = w.shape[:2]
    kw = np.einsum("ia,ija->ij", frame.kappa, w)
    c = np.einsum("isa,ija->ijs", frame.connection, w)
    b = np.broadcast_to(np.eye(k), (ns, nf, k, k)).copy()
    R = frame.curvature
    if which == "reference":
        return np.ones((ns, nf)), b, c
    if mode == "exact":
        if not frame.is_flat:
            raise GeometryError("exact metric blocks require a flat ambient space")
        return (1.0 - kw) ** 2, b, c
    if mode != "series":
        raise GeometryError(f"unknown metric mode {mode!r}")
    a = np.ones((ns, nf))
    if order >= 1:
        a = a - 2.0 * kw
    if order >= 2:
        a = a + kw**2 - np.einsum("ija,ijb,ab->ij", w, w, R[0, 1:, 0, 1:])
        b = b - np.einsum("ija,ijb,masb->ijms", w, w, R[1:, 1:, 1:, 1:]) / 3.0
    if order < 1:
        c = np.zeros_like(c)
    return a, b, c


def _check_pd(a, b, what):
    if not np.all(np.isfinite(a)) or np.min(a) <= 0:
        raise GeometryError(f"{what}: metric not positive definite (tube too wide for the curvature)")
    if np.min(np.linalg.eigvalsh(b)) <= 0:
        raise GeometryError(f"{what}: fiber metric block not positive definite")


def metric_blocks(frame: FermiFrame, grid: TubeGrid, mode: str = "exact", order: int = 2,
                  which: str = "induced", eps: float = 1.0) -> MetricField:
    """Fermi metric blocks (induced) or the reference product blocks on the unit tube.

    ``exact`` gives a = (1 - w.kappa)^2 with b = identity, which is the closed form
    for any curve with a parallel frame in flat space.  ``series`` truncates the
    Fermi expansion at ``order`` and includes ambient curvature terms.  With
    eps < 1 the blocks of the width-eps tube are pulled back to the unit tube:
    induced blocks are evaluated at (s, eps*w), the mixed block is scaled by eps
    and the fiber block by eps^2.  The reference family is the canonical
    variation: the horizontal block never changes.
    """
    if not 0 < eps <= 1:
        raise GeometryError("eps must be in (0, 1]")
    if which == "induced" and eps < 1 and eps * frame.max_kappa >= 1:
        raise GeometryError("eps * max|kappa| must be below 1")
    w = eps * np.broadcast_to(grid.fiber.points, (grid.ns,) + grid.fiber.points.shape)
    a, b, c = _blocks_at(frame, w, mode, order, which)
    _check_pd(a, b, which)
    return MetricField(a=a, b=eps**2 * b, c=eps * c, frame=frame, grid=grid, which=which, mode=mode,
                       order=order, eps=float(eps))


def reference_blocks(frame: FermiFrame, grid: TubeGrid, eps: float = 1.0) -> MetricField:
    return metric_blocks(frame, grid, which="reference", eps=eps)


def rescale_metric(field: MetricField, eps: float, which: str | None = None) -> MetricField:
    """The same geometry pulled back from the width-eps tube (eps is absolute)."""
    which = which or field.which
    if eps == field.eps and which == field.which:
        return field
    return metric_blocks(field.frame, field.grid, field.mode, field.order, which, eps)


@dataclass(frozen=True)
class DualPerturbation:
    field: np.ndarray
    at_zero: np.ndarray
    sup: float
    sup_minus_zero: float


def dual_perturbation(induced: MetricField, reference: MetricField, eps: float) -> DualPerturbation:
    """H*(eps) = g*(eps) - g0*(eps) with sup norms, including its eps -> 0 limit.

    The limit H*(0) is built from the ambient curvature: w^a w^b R_{mu a sigma b}/3
    in the fiber block and zero elsewhere.
    """
    if induced.grid is not reference.grid and induced.a.shape != reference.a.shape:
        raise GeometryError("grid mismatch")
    if not (np.isclose(induced.eps, eps) and np.isclose(reference.eps, eps)):
        raise GeometryError("fields must be rescaled to the same eps")
    H = induced.dual() - reference.dual()
    k = induced.codim
    w = np.broadcast_to(induced.grid.fiber.points, induced.a.shape + (k,))
    H0 = np.zeros_like(H)
    R = induced.frame.curvature
    H0[..., 1:, 1:] = np.einsum("ija,ijb,masb->ijms", w, w, R[1:, 1:, 1:, 1:]) / 3.0
    norm = np.linalg.norm(H, ord=2, axis=(-2, -1))
    diff = np.linalg.norm(H - H0, ord=2, axis=(-2, -1))
    return DualPerturbation(field=H, at_zero=H0, sup=float(norm.max()), sup_minus_zero=float(diff.max()))


# ---------------------------------------------------------------------------
# Density and effective potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityField:
    rho: np.ndarray
    log_rho: np.ndarray
    eps: float

    def interior(self, grid: TubeGrid) -> np.ndarray:
        return grid.to_interior(self.rho)


def density(induced: MetricField, reference: MetricField) -> DensityField:
    """rho = sqrt(det g / det g0) nodewise."""
    if induced.a.shape != reference.a.shape:
        raise GeometryError("grid mismatch")
    ratio = induced.det() / reference.det()
    if not np.all(np.isfinite(ratio)) or np.min(ratio) <= 0:
        raise GeometryError("nonpositive determinant ratio")
    rho = np.sqrt(ratio)
    return DensityField(rho=rho, log_rho=np.log(rho), eps=induced.eps)


@dataclass(frozen=True)
class EffectivePotential:
    W: np.ndarray
    W_L: np.ndarray
    convention: str
    metric: str


def _gradient_codim1(f: np.ndarray, grid: TubeGrid):
    hs = grid.hs
    ds = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * hs)
    dw = np.gradient(f, grid.fiber.points[:, 0], axis=1, edge_order=2)
    return [ds, dw]


def _divergence_codim1(flux, grid):
    hs = grid.hs
    return (np.roll(flux[0], -1, 0) - np.roll(flux[0], 1, 0)) / (2 * hs) + \
        np.gradient(flux[1], grid.fiber.points[:, 0], axis=1, edge_order=2)


def _polar_split(f: np.ndarray, fiber: FiberGrid):
    """(ns, nf) -> center (ns,) and ring values (ns, nr, ntheta)."""
    ns = f.shape[0]
    return f[:, 0], f[:, 1:].reshape(ns, fiber.nr, fiber.ntheta)


def _gradient_codim2(f: np.ndarray, grid: TubeGrid):
    fib = grid.fiber
    h, ht = 1.0 / fib.nr, 2 * np.pi / fib.ntheta
    ds = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * grid.hs)
    center, rings = _polar_split(f, fib)
    ns = f.shape[0]
    th = np.arange(fib.ntheta) * ht
    r = np.arange(1, fib.nr + 1) * h
    # radial profile along each ray including the center value
    ray = np.concatenate([np.broadcast_to(center[:, None, None], (ns, 1, fib.ntheta)), rings], axis=1)
    dr = np.gradient(ray, np.concatenate([[0.0], r]), axis=1, edge_order=2)[:, 1:]
    dth = (np.roll(rings, -1, 2) - np.roll(rings, 1, 2)) / (2 * ht)
    cos, sin = np.cos(th), np.sin(th)
    d1 = cos * dr - sin * dth / r[:, None]
    d2 = sin * dr + cos * dth / r[:, None]
    # center: second-order ring-1 averages
    c1 = 2.0 / h * np.mean(rings[:, 0, :] * cos, axis=1)
    c2 = 2.0 / h * np.mean(rings[:, 0, :] * sin, axis=1)
    g1 = np.concatenate([c1[:, None], d1.reshape(ns, -1)], axis=1)
    g2 = np.concatenate([c2[:, None], d2.reshape(ns, -1)], axis=1)
    return [ds, g1, g2]


def _divergence_codim2(flux, grid):
    fib = grid.fiber
    h, ht = 1.0 / fib.nr, 2 * np.pi / fib.ntheta
    ns = flux[0].shape[0]
    out = (np.roll(flux[0], -1, 0) - np.roll(flux[0], 1, 0)) / (2 * grid.hs)
    th = np.arange(fib.ntheta) * ht
    r = np.arange(1, fib.nr + 1) * h
    cos, sin = np.cos(th), np.sin(th)
    c1, r1 = _polar_split(flux[1], fib)
    c2, r2 = _polar_split(flux[2], fib)
    fr = cos * r1 + sin * r2
    ft = -sin * r1 + cos * r2
    # (1/r) d_r (r F_r) + (1/r) d_theta F_theta on the rings
    rfr = np.concatenate([np.zeros((ns, 1, fib.ntheta)), r[:, None] * fr], axis=1)
    drfr = np.gradient(rfr, np.concatenate([[0.0], r]), axis=1, edge_order=2)[:, 1:]
    dft = (np.roll(ft, -1, 2) - np.roll(ft, 1, 2)) / (2 * ht)
    rings = (drfr + dft) / r[:, None]
    center = 2.0 / h * np.mean(fr[:, 0, :], axis=1)
    out[:, 0] += center
    out[:, 1:] += rings.reshape(ns, -1)
    return out


def effective_potential(dens: DensityField, metric: MetricField, convention: str = "plus") -> EffectivePotential:
    """W = 1/2 Lap log rho - 1/4 |d log rho|^2 with the Laplacian of ``metric``.

    ``plus`` uses Lap = -div grad (the nonnegative Laplacian), ``minus`` uses
    Lap = +div grad.  Derivatives are second-order finite differences, one-sided
    at the fiber boundary; W_L is the value on the zero section.
    """
    if convention not in ("plus", "minus"):
        raise GeometryError(f"unknown convention {convention!r}")
    grid = metric.grid
    f = dens.log_rho
    if not np.all(np.isfinite(f)):
        raise GeometryError("nonsmooth density (non-finite log rho)")
    grad = _gradient_codim1(f, grid) if grid.codim == 1 else _gradient_codim2(f, grid)
    ginv = metric.dual()
    # drop the constant eps-powers: they cancel in (1/sqrt g) d(sqrt g ...)
    sqrtg = np.sqrt(metric.det() / metric.eps ** (2 * grid.codim))
    m = len(grad)
    flux = [sqrtg * sum(ginv[..., i, j] * grad[j] for j in range(m)) for i in range(m)]
    div = (_divergence_codim1(flux, grid) if grid.codim == 1 else _divergence_codim2(flux, grid)) / sqrtg
    norm2 = sum(ginv[..., i, j] * grad[i] * grad[j] for i in range(m) for j in range(m))
    lap = -div if convention == "plus" else div
    W = 0.5 * lap - 0.25 * norm2
    center = grid.fiber.points.shape[0] // 2 if grid.codim == 1 else 0
    return EffectivePotential(W=W, W_L=W[:, center].copy(), convention=convention, metric=metric.which)


@dataclass
class Geometry:
    """Frame and grid with the metric model, producing rescaled fields on demand."""

    frame: FermiFrame
    grid: TubeGrid
    mode: str = "exact"
    order: int = 2
    meta: dict = field(default_factory=dict)

    def induced(self, eps: float) -> MetricField:
        return metric_blocks(self.frame, self.grid, self.mode, self.order, "induced", eps)

    def reference(self, eps: float = 1.0) -> MetricField:
        return metric_blocks(self.frame, self.grid, self.mode, self.order, "reference", eps)

    def at(self, eps: float):
        """Rescaled induced and reference fields and the density at width eps."""
        g, g0 = self.induced(eps), self.reference(eps)
        return g, g0, density(g, g0)


def build_geometry(curve: CurveSpec, frame_choice: str = "parallel", nw: int = 201, nr: int = 16,
                   ntheta: int = 16, mode: str | None = None, order: int = 2,
                   curvature: np.ndarray | None = None) -> Geometry:
    frame = build_frame(curve, frame_choice, curvature)
    grid = make_grid(frame, nw=nw, nr=nr, ntheta=ntheta)
    if mode is None:
        mode = "exact" if frame.is_flat else "series"
    return Geometry(frame=frame, grid=grid, mode=mode, order=order)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubehom.geometry import (CurveSpec, GeometryError, build_frame, build_geometry, constant_curvature_tensor,
                              density, disk_fiber, dual_perturbation, effective_potential, interval_fiber,
                              make_grid, metric_blocks, reference_blocks, rescale_metric)
from tubehom.harness import fit_loglog


def circle(ns=64, dim=2, R=1.0):
    return CurveSpec(kind="circle", radius=R, ambient_dim=dim, ns=ns)


# frames -----------------------------------------------------------------


def test_circle_curvature_is_one():
    fr = build_frame(circle())
    assert np.allclose(fr.kappa[:, 0], 1.0, rtol=0, atol=1e-10)
    assert fr.length == pytest.approx(2 * np.pi)


def test_ellipse_curvature_at_major_vertex():
    fr = build_frame(CurveSpec(kind="ellipse", a=2.0, b=1.0, ns=128))
    # kappa(t) = ab / (a^2 sin^2 t + b^2 cos^2 t)^(3/2) at t = 0 gives a/b^2
    assert fr.kappa[0, 0] == pytest.approx(2.0, abs=1e-10)
    # minor vertex at a quarter of the length: b/a^2
    assert fr.kappa[32, 0] == pytest.approx(0.25, abs=1e-8)


def test_ellipse_length_matches_complete_elliptic_integral():
    from scipy.special import ellipe

    fr = build_frame(CurveSpec(kind="ellipse", a=2.0, b=1.0, ns=64))
    assert fr.length == pytest.approx(4 * 2.0 * ellipe(1 - 0.25), rel=1e-12)


def test_parallel_frame_in_r3_has_zero_connection():
    fr = build_frame(circle(dim=3))
    assert fr.codim == 2
    assert np.all(fr.connection == 0)
    assert fr.orthonormality_residual < 1e-12


def test_frenet_frame_planar_circle_in_r3_is_orthonormal():
    fr = build_frame(circle(dim=3), "frenet")
    assert fr.orthonormality_residual < 1e-12
    assert np.allclose(fr.kappa[:, 0], 1.0)


def test_sampled_planar_circle_matches_analytic():
    t = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    pts = [(np.cos(x), np.sin(x)) for x in t]
    fr = build_frame(CurveSpec(kind="sampled", points=tuple(pts), ns=64))
    assert fr.length == pytest.approx(2 * np.pi, rel=1e-6)
    assert np.allclose(np.abs(fr.kappa[:, 0]), 1.0, atol=1e-4)


def test_sampled_space_curve_holonomy_is_distributed():
    # a tilted (non-planar) closed curve
    t = np.linspace(0, 2 * np.pi, 300, endpoint=False)
    pts = [(np.cos(x), np.sin(x), 0.3 * np.sin(2 * x)) for x in t]
    fr = build_frame(CurveSpec(kind="sampled", points=tuple(pts), ambient_dim=3, ns=128))
    assert fr.orthonormality_residual < 1e-12
    # constant connection equal to minus the closing angle per unit length
    c = fr.connection[:, 1, 0]
    assert np.allclose(c, c[0])
    assert c[0] == pytest.approx(-fr.holonomy_defect / fr.length)


def test_build_frame_errors():
    with pytest.raises(GeometryError):
        build_frame(CurveSpec(kind="circle", ns=8))
    with pytest.raises(GeometryError):
        build_frame(CurveSpec(kind="circle", radius=0.0, ns=32))
    with pytest.raises(GeometryError, match="non-closed"):
        pts = [(x, 0.0) for x in np.linspace(0, 1, 20)] + [(1.0, 0.05)]
        build_frame(CurveSpec(kind="sampled", points=tuple(pts), ns=32))
    with pytest.raises(GeometryError, match="zero-length"):
        build_frame(CurveSpec(kind="sampled", points=((0, 0),) * 5, ns=32))


def test_constant_curvature_tensor_symmetries():
    R = constant_curvature_tensor(3, 2.0)
    assert np.allclose(R, -np.swapaxes(R, 0, 1))
    assert np.allclose(R, np.transpose(R, (2, 3, 0, 1)))


# grids ------------------------------------------------------------------


@pytest.mark.parametrize("nw", [11, 51, 201])
def test_interval_volume(nw):
    g = make_grid(build_frame(circle()), nw=nw)
    assert g.total_volume() == pytest.approx(2 * np.pi * 2.0, rel=1e-10)
    assert np.all(g.weights() > 0)


@pytest.mark.parametrize("nr", [8, 16, 32])
def test_disk_volume_exact(nr):
    # annular cell weights telescope to the disk area
    assert disk_fiber(nr, 16).volume == pytest.approx(np.pi, rel=1e-12)


def test_interval_requires_odd_nodes():
    with pytest.raises(GeometryError):
        interval_fiber(10)


def test_disk_requires_resolution():
    with pytest.raises(GeometryError):
        disk_fiber(4, 16)
    with pytest.raises(GeometryError):
        disk_fiber(8, 7)


def test_product_state_layout():
    g = make_grid(build_frame(circle(ns=16)), nw=7)
    u = g.product_state(np.arange(5.0) + 1, np.arange(16.0))
    assert g.to_full(u).shape == (16, 7)
    assert np.all(g.to_full(u)[:, [0, -1]] == 0)
    assert np.array_equal(g.to_interior(g.to_full(u)), u)


# metric blocks ----------------------------------------------------------


def test_metric_restricts_to_base_on_zero_section():
    fr = build_frame(circle())
    g = make_grid(fr, nw=21)
    m = metric_blocks(fr, g, eps=0.5)
    assert np.allclose(m.a[:, 10], 1.0)
    assert np.allclose(m.b[:, 10] / 0.25, np.eye(1))
    assert np.all(m.c == 0)


def test_unscaled_unit_circle_tube_is_degenerate():
    # the width-1 tube around the unit circle reaches the center
    fr = build_frame(circle())
    with pytest.raises(GeometryError):
        metric_blocks(fr, make_grid(fr, nw=21))


def test_series_order_two_equals_exact_for_plane_curve():
    fr = build_frame(CurveSpec(kind="ellipse", a=1.5, b=1.0, ns=32))
    g = make_grid(fr, nw=21)
    ex = metric_blocks(fr, g, "exact", eps=0.3)
    se = metric_blocks(fr, g, "series", order=2, eps=0.3)
    assert np.allclose(ex.a, se.a, rtol=0, atol=1e-14)


def test_reference_metric_is_identity_for_parallel_frame():
    fr = build_frame(circle())
    g = make_grid(fr, nw=11)
    ref = reference_blocks(fr, g)
    assert np.all(ref.a == 1.0) and np.allclose(ref.b, 1.0) and np.all(ref.c == 0)


def test_rescaled_reference_changes_only_fiber_block():
    fr = build_frame(circle())
    g = make_grid(fr, nw=11)
    ref = reference_blocks(fr, g)
    r2 = rescale_metric(ref, 0.3)
    assert np.array_equal(ref.a, r2.a)
    assert np.allclose(r2.b, 0.09)


def test_rescale_identity_at_one():
    fr = build_frame(CurveSpec(kind="ellipse", ns=32))
    g = make_grid(fr, nw=11)
    m = metric_blocks(fr, g, eps=0.2)
    assert rescale_metric(m, 0.2) is m


def test_rescaled_circle_closed_form():
    fr = build_frame(circle())
    g = make_grid(fr, nw=11)
    m = metric_blocks(fr, g, eps=0.2)
    # (1 - eps w kappa)^2 at w = 1
    assert np.allclose(m.a[:, -1], 0.64, rtol=0, atol=1e-14)
    assert np.allclose(m.a[:, 0], 1.44, rtol=0, atol=1e-14)


def test_positive_definiteness_violation():
    fr = build_frame(circle(R=0.5))
    g = make_grid(fr, nw=11)
    with pytest.raises(GeometryError):
        metric_blocks(fr, g, eps=0.6)


def test_dual_perturbation_cylinder_zero():
    fr = build_frame(CurveSpec(kind="cylinder", ns=32))
    g = make_grid(fr, nw=11)
    d = dual_perturbation(metric_blocks(fr, g, eps=0.3), reference_blocks(fr, g, 0.3), 0.3)
    assert d.sup == 0.0 and np.all(d.at_zero == 0)


def test_dual_perturbation_decays_linearly_on_circle():
    fr = build_frame(circle())
    g = make_grid(fr, nw=21)
    eps = [0.4, 0.2, 0.1, 0.05]
    sups = [dual_perturbation(metric_blocks(fr, g, eps=e), reference_blocks(fr, g, e), e).sup_minus_zero
            for e in eps]
    assert fit_loglog(eps, sups) >= 0.9


# density and potential --------------------------------------------------


def test_density_plane_curve_closed_form():
    fr = build_frame(CurveSpec(kind="ellipse", ns=32))
    g = make_grid(fr, nw=11)
    d = density(metric_blocks(fr, g, eps=0.2), reference_blocks(fr, g, 0.2))
    w = g.fiber.points[:, 0]
    expected = 1 - 0.2 * np.outer(fr.kappa[:, 0], w)
    assert np.allclose(d.rho, expected, rtol=0, atol=1e-14)
    assert np.all(d.rho[:, 5] == 1.0)


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(0.01, 0.45), R=st.floats(1.0, 3.0))
def test_density_positive_and_one_on_zero_section(eps, R):
    fr = build_frame(circle(ns=16, R=R))
    g = make_grid(fr, nw=9)
    d = density(metric_blocks(fr, g, eps=eps), reference_blocks(fr, g, eps))
    assert np.all(d.rho > 0)
    assert np.all(d.rho[:, 4] == 1.0)


def test_effective_potential_cylinder_vanishes():
    geo = build_geometry(CurveSpec(kind="cylinder", ns=32), nw=21)
    g, g0, dens = geo.at(0.2)
    for conv in ("plus", "minus"):
        pot = effective_potential(dens, g, conv)
        assert np.all(pot.W == 0) and np.all(pot.W_L == 0)


def test_effective_potential_circle_constant_and_near_quarter():
    geo = build_geometry(circle(), nw=201)
    g, g0, dens = geo.at(0.05)
    pot = effective_potential(dens, g, "plus")
    assert np.ptp(pot.W_L) < 1e-12
    assert pot.W_L[0] == pytest.approx(-0.25, abs=1e-5)


def test_effective_potential_ellipse_reflection_symmetry():
    ns = 128
    geo = build_geometry(CurveSpec(kind="ellipse", a=2.0, b=1.0, ns=ns), nw=101)
    g, g0, dens = geo.at(0.1)
    W = effective_potential(dens, g, "plus").W_L
    assert W[0] == pytest.approx(W[ns // 2], abs=1e-8)
    # ellipse reflection s -> -s
    assert np.allclose(W[1:], W[1:][::-1], atol=1e-8)


def test_effective_potential_disk_fiber_circle():
    geo = build_geometry(circle(dim=3), nr=16, ntheta=16)
    g, g0, dens = geo.at(0.05)
    W = effective_potential(dens, g, "plus").W_L
    assert np.allclose(W, -0.25, atol=1e-3)


def test_effective_potential_rejects_unknown_convention():
    geo = build_geometry(circle(ns=16), nw=11)
    g, g0, dens = geo.at(0.1)
    with pytest.raises(GeometryError):
        effective_potential(dens, g, "sideways")

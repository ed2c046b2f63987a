import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubehom.config import from_dict
from tubehom.harness import (LimitOperator, Study, annulus_limits, boundary_trace, certify_potential,
                             commutator_check, envelope, evolve, fit_loglog, homogenization_error,
                             interpolation_check, limit_semigroup, refined_nw, smooth_ev_suite, sobolev_norm,
                             uniform_bound_suite)
from tubehom.operators import fiber_modes
from tubehom.spectral import dense_eigensystem, eigensolve


def _symbol(grid, n):
    return 4 / grid.hs**2 * np.sin(np.pi * n / grid.ns) ** 2


@pytest.fixture(scope="module")
def cyl():
    cfg = from_dict({"curve": {"kind": "cylinder"}, "grid": {"ns": 16, "nw": 11},
                     "epsilons": [0.4, 0.2], "times": [0.5, 1.0]})
    study = Study(cfg, ("induced", "plus"))
    eig = dense_eigensystem(study.operator(0.4))
    return study, eig


# utilities --------------------------------------------------------------


def test_fit_loglog_exact_power():
    x = np.array([0.4, 0.2, 0.1, 0.05])
    assert fit_loglog(x, 3.0 * x**2) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("nw", [11, 21, 201])
def test_refined_nw_odd(nw):
    m = refined_nw(nw, 1.5)
    assert m % 2 == 1 and m > nw


def test_envelope_value_and_bound():
    assert envelope(1, 1.0) == pytest.approx(4 * math.exp(-2))
    assert envelope(1, 1.0) == pytest.approx(0.5413411329464508)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 3), t=st.floats(0.05, 5.0), x=st.floats(0.0, 500.0))
def test_envelope_dominates(k, t, x):
    assert x ** (2 * k) * math.exp(-t * x) <= envelope(k, t) * (1 + 1e-12)


# semigroup --------------------------------------------------------------


def test_evolve_cylinder_product_mode(cyl):
    study, _ = cyl
    grid = study.grid
    u0 = study.initial_state()
    res = study.evolve(0.2, u0, 1.0)
    assert res.certified
    expected = math.exp(-0.5 * _symbol(grid, 1)) * u0
    assert np.allclose(res.state, expected, atol=1e-10)
    assert math.exp(-0.5 * _symbol(grid, 1)) == pytest.approx(math.exp(-0.5), rel=1e-2)


def test_semigroup_property(cyl):
    _, eig = cyl
    u0 = np.random.default_rng(0).standard_normal(eig.count)
    a = evolve(eig, evolve(eig, u0, 0.3, tol=0).state, 0.7, tol=0).state
    b = evolve(eig, u0, 1.0, tol=0).state
    assert np.sqrt(np.dot(eig.weights * (a - b), a - b)) < 1e-10 * np.sqrt(np.dot(eig.weights * u0, u0))


def test_norm_nonincreasing_and_small_time(cyl):
    _, eig = cyl
    u0 = np.random.default_rng(1).standard_normal(eig.count)
    norm = lambda v: np.sqrt(np.dot(eig.weights * v, v))
    norms = [norm(evolve(eig, u0, t, tol=0).state) for t in (0.01, 0.1, 1.0, 3.0)]
    assert np.all(np.diff(norms) <= 1e-14)
    errs = [norm(evolve(eig, u0, t, tol=0).state - u0) for t in (1e-4, 1e-6, 1e-8)]
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(ValueError):
        evolve(eig, u0, 0.0)


def test_truncation_bound_is_honest(cyl):
    study, full = cyl
    u0 = np.random.default_rng(2).standard_normal(full.count)
    part = eigensolve(study.operator(0.4), 20)
    res = evolve(part, u0, 0.05, tol=1e-12)
    exact = evolve(full, u0, 0.05, tol=0).state
    assert not res.certified
    assert np.sqrt(np.dot(full.weights * (res.state - exact) ** 2, np.ones(full.count))) <= res.truncation_bound


def test_orthogonal_data_decays(cyl):
    study, eig = cyl
    grid = study.grid
    vals, modes = fiber_modes(grid.fiber, 2)
    u = grid.product_state(modes[:, 1], np.cos(grid.s))
    eps = 0.4
    out = evolve(eig, u, 1.0, tol=0).state
    norm = lambda v: np.sqrt(np.dot(eig.weights * v, v))
    gap = (vals[1] - vals[0]) / eps**2
    assert norm(out) <= math.exp(-0.5 * gap) * norm(u) * (1 + 1e-10)


def test_limit_semigroup_free_and_shifted():
    ns, L = 64, 2 * np.pi
    s = np.arange(ns) * L / ns
    h = L / ns
    v0 = np.cos(3 * s)
    sym = 4 / h**2 * math.sin(3 * h / 2) ** 2
    assert np.allclose(limit_semigroup(np.zeros(ns), v0, 0.8), math.exp(-0.4 * sym) * v0, atol=1e-12)
    c = -0.25
    assert np.allclose(limit_semigroup(np.full(ns, c), v0, 0.8), math.exp(-0.4 * (sym + c)) * v0, atol=1e-12)
    op = LimitOperator(np.zeros(ns), L)
    assert op.values[0] == pytest.approx(0.0, abs=1e-10)


def test_cylinder_homogenization_error_vanishes(cyl):
    study, _ = cyl
    for eps in (0.4, 0.2):
        rec = homogenization_error(eps, 1.0, study.initial_state(eps), study)
        assert rec.l2 < 1e-8 and rec.sobolev2 < 1e-6
        assert rec.certified_truncation


# norms and interpolation ------------------------------------------------


def test_sobolev_norm_of_eigenfunction(cyl):
    study, eig = cyl
    lap0 = study.lap0
    ref = dense_eigensystem(lap0)
    u = ref.vectors[:, 3]
    mu = ref.values[3]
    for k in range(4):
        assert sobolev_norm(u, k, lap0) == pytest.approx((1 + mu**k) * lap0.norm(u), rel=1e-8)
        assert sobolev_norm(u, k, lap0, ref) == pytest.approx(sobolev_norm(u, k, lap0), rel=1e-8)
    assert sobolev_norm(u, 0, lap0) == pytest.approx(2 * lap0.norm(u))
    with pytest.raises(ValueError):
        sobolev_norm(u, 4, lap0)


def test_interpolation_equality_on_eigenfunction(cyl):
    study, _ = cyl
    eig = dense_eigensystem(study.reference_family(0.4))
    u = eig.vectors[:, 5]
    for n in (1, 2):
        for k in range(1, 2 * n + 2):
            r = interpolation_check(u, k, n, eig)
            assert abs(r.slack) < 1e-10 * max(1.0, r.lhs)
            assert r.young_slack >= -1e-10 and r.young_sharp_slack >= -1e-10


def test_interpolation_upper_index():
    from tubehom.spectral import EigenSystem

    eig = EigenSystem(np.array([0.0, 1.0, 4.0]), np.eye(3), np.zeros(3), np.ones(3))
    u = np.array([1.0, 1.0, 1.0])
    r = interpolation_check(u, 3, 1, eig)
    assert r.upper_index == 4 and r.exponent == 0.75
    # k equals the upper index: Young forms reduce to the identity
    r2 = interpolation_check(u, 2, 1, eig)
    assert r2.exponent == 1.0 and r2.young_slack == 0.0 and r2.slack == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        interpolation_check(u, 4, 1, eig)
    neg = EigenSystem(np.array([-1.0, 1.0, 4.0]), np.eye(3), np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        interpolation_check(u, 1, 1, neg)


@settings(max_examples=60, deadline=None)
@given(c=st.lists(st.floats(-10, 10), min_size=6, max_size=6),
       mu=st.lists(st.floats(0.0, 100.0), min_size=6, max_size=6),
       k=st.integers(1, 5), alpha=st.floats(0.01, 10.0))
def test_interpolation_inequalities_hold(c, mu, k, alpha):
    from tubehom.spectral import EigenSystem

    eig = EigenSystem(np.sort(np.array(mu)), np.eye(6), np.zeros(6), np.ones(6))
    n = 2
    r = interpolation_check(np.array(c), k, n, eig, alpha)
    scale = 1e-9 * max(1.0, r.lhs, r.rhs)
    assert r.slack >= -scale
    assert r.young_slack >= -scale and r.young_sharp_slack >= -scale


# suites -----------------------------------------------------------------


def test_uniform_suite_cylinder(cyl):
    study, _ = cyl
    rep = uniform_bound_suite(study, [0.4, 0.2], [0.5, 1.0])
    assert rep.passed and not rep.skipped
    assert rep.checked == 8 and rep.shifted_checked == 8
    assert rep.maximizer_error < 1e-12


def test_boundary_trace_vanishes_for_ground_products(cyl):
    study, _ = cyl
    u = study.initial_state()
    assert boundary_trace(study, u, 1) < 1e-9 * study.lap0.norm(u)
    w = study.grid.fiber.points[study.grid.fiber.interior, 0]
    bumped = study.grid.product_state(w * study.ground.values, np.ones(study.grid.ns))
    assert boundary_trace(study, bumped, 1) > 1e-3


def test_commutator_exact_on_cylinder():
    cfg = from_dict({"curve": {"kind": "cylinder"}})
    rep = commutator_check(cfg, sizes=((32, 21), (64, 41)))
    assert rep.exact and rep.passed


def test_smooth_ev_suite():
    out = smooth_ev_suite(20)
    assert out["passed"]
    assert out["spectra"]["interval"]["threshold"] == 0.75


def test_annulus_limits_near_quarter():
    lim = annulus_limits(1.0, (0,))
    assert lim[0] == pytest.approx(-0.25, abs=1e-6)
    with pytest.raises(ValueError):
        annulus_limits(1.0, (0,), (0.1, 0.07, 0.05))


def test_certify_potential_forced_convention():
    cfg = from_dict({"curve": {"kind": "circle"}, "grid": {"ns": 32, "nw": 41},
                     "potential": {"convention": "minus"}})
    cert = certify_potential(cfg)
    assert cert.convention == "minus" and cert.metric == "induced"
    auto = certify_potential(from_dict({"curve": {"kind": "circle"}, "grid": {"ns": 32, "nw": 41}}))
    assert auto.convention == "plus" and auto.metric == "induced" and auto.certified


def test_initial_state_hooks():
    cfg = from_dict({"curve": {"kind": "cylinder"}, "grid": {"ns": 16, "nw": 11},
                     "initial": {"mode": 2, "fiber_mode": 1, "perturbation": 0.5}})
    study = Study(cfg, ("induced", "plus"))
    grid = study.grid
    _, modes = fiber_modes(grid.fiber, 2)
    base = grid.product_state(modes[:, 1], np.cos(2 * grid.s))
    u = study.initial_state(0.2)
    w = grid.fiber.points[grid.fiber.interior, 0]
    assert np.allclose(u - base, 0.1 * grid.product_state(w * modes[:, 1], np.cos(2 * grid.s)))
    assert np.allclose(study.initial_state(), base)

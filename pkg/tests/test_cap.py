import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetscale.cap import (
    CapProfile,
    ConstructionError,
    ResolutionError,
    build_connector,
    build_inversion,
    cap_energy,
    cap_gradient,
    cap_hessian,
    choose_Rl,
    g_a_profile,
    in_wells,
    inversion_slopes,
    lower_bound_report,
    minimize_cap,
    tau,
)
from sheetscale.core import RadialGrid, d1
from sheetscale.optim import OptimSettings, gradient_check


def random_profile(grid, delta, rng):
    r = grid.r
    k = np.arange(1, 5)
    u = r * (np.sin(np.outer(r, k) * np.pi) @ rng.normal(size=4)) * 0.3
    w = (1 - delta) * r**2 + r * r * (1 - r) * (np.cos(np.outer(r, k)) @ rng.normal(size=4)) * 0.5
    w[-1] = 1 - delta
    return CapProfile(grid, u, w)


def test_sphere_energy_and_second_order_convergence():
    h = 0.1
    errs = []
    for n in (256, 512, 1024):
        e = cap_energy(CapProfile.sphere(RadialGrid.uniform(n)), h)
        assert e.membrane_u == 0.0
        errs.append(abs(e.total - 4 * h * h))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_flat_profile_stretch():
    g = RadialGrid.uniform(2048)
    e = cap_energy(CapProfile(g, np.zeros(g.n), np.zeros(g.n)), 0.2)
    assert e.membrane_stretch == pytest.approx(8 / 3, rel=1e-5)
    assert e.bend == 0.0


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
def test_scaled_sphere_against_closed_form(delta):
    g = RadialGrid.uniform(4096)
    h = 0.05
    e = cap_energy(CapProfile.sphere(g, delta), h)
    c = (1 - delta) ** 2 - 1
    assert e.membrane_stretch == pytest.approx(16 * c * c / 6, rel=1e-5, abs=1e-12)
    assert e.bend == pytest.approx(4 * h * h * (1 - delta) ** 2, rel=1e-5, abs=1e-12)


def test_gradient_matches_finite_differences_on_random_profiles():
    rng = np.random.default_rng(11)
    g = RadialGrid.uniform(48)
    for _ in range(50):
        delta = rng.uniform(0, 1)
        h = rng.uniform(0.01, 0.5)
        p = random_profile(g, delta, rng)
        assert p.is_admissible(delta, origin_tol=1e-2)

        def f(x):
            q = CapProfile(g, x[: g.n], x[g.n :])
            return cap_energy(q, h).total, np.concatenate(cap_gradient(q, h))

        assert gradient_check(f, np.concatenate((p.u, p.w)), 1e-6) <= 1e-5


def test_gradient_single_u_node_and_linearity():
    g = RadialGrid.uniform(30)
    u = np.zeros(g.n)
    u[7] = 1e-3
    p = CapProfile(g, u, np.zeros(g.n))
    gu, _ = cap_gradient(p, 0.1)
    eps = 1e-6
    up, um = u.copy(), u.copy()
    up[7] += eps
    um[7] -= eps
    fd = (cap_energy(CapProfile(g, up, p.w), 0.1).total - cap_energy(CapProfile(g, um, p.w), 0.1).total) / (2 * eps)
    assert gu[7] == pytest.approx(fd, rel=1e-6)
    # bend part is quadratic in h^2: gradient(h) - gradient(0) scales with h^2
    rng = np.random.default_rng(0)
    q = random_profile(g, 0.3, rng)
    g0 = np.concatenate(cap_gradient(q, 1e-12))
    g1 = np.concatenate(cap_gradient(q, 0.1))
    g2 = np.concatenate(cap_gradient(q, 0.2))
    assert np.allclose(g2 - g0, 4 * (g1 - g0), rtol=1e-9, atol=1e-12)


def test_sphere_is_near_critical_for_bending_only():
    # away from the ends the first variation of the bending energy vanishes;
    # only the boundary term 4 phi'(1) survives
    g = RadialGrid.uniform(400)
    p = CapProfile.sphere(g)
    gu, gw = cap_gradient(p, 0.1)
    assert np.max(np.abs(gu)) < 1e-10
    assert np.max(np.abs(gw[6:-6])) < 1e-8 * np.max(np.abs(gw))
    bump = np.where((g.r > 0.2) & (g.r < 0.8), np.sin(np.pi * (g.r - 0.2) / 0.6) ** 3, 0.0)
    eps = 1e-5
    plus = cap_energy(CapProfile(g, p.u, p.w + eps * bump), 0.1).total
    minus = cap_energy(CapProfile(g, p.u, p.w - eps * bump), 0.1).total
    assert abs(plus - minus) / (2 * eps) < 1e-6
    assert gw @ bump == pytest.approx((plus - minus) / (2 * eps), abs=1e-6)


def test_hessian_matches_gradient_differences():
    rng = np.random.default_rng(2)
    g = RadialGrid.uniform(25)
    p = random_profile(g, 0.4, rng)
    h = 0.15
    x = np.concatenate((p.u, p.w))

    def grad(x):
        return np.concatenate(cap_gradient(CapProfile(g, x[: g.n], x[g.n :]), h))

    eps = 1e-6
    fd = np.array([(grad(x + eps * e) - grad(x - eps * e)) / (2 * eps) for e in np.eye(x.size)]).T
    H = cap_hessian(p, h).toarray()
    assert np.max(np.abs(H - fd)) <= 1e-6 * np.max(np.abs(H))
    assert np.allclose(H, H.T)


def test_choose_Rl_examples():
    c = choose_Rl(1 / 8, 1.0)
    assert c.R == pytest.approx(np.sqrt((1 - 1 / 16) / 2), rel=1e-14)
    assert c.l == pytest.approx(0.5 * np.sqrt(1 / 8), rel=1e-14)
    assert c.R == pytest.approx(0.6847, abs=1e-4) and c.l == pytest.approx(0.1768, abs=1e-4)
    assert c.feasible and c.branch == "wide"
    n = choose_Rl(0.1, 0.01)
    assert n.R**2 + n.l**2 == pytest.approx(0.005, rel=1e-14)
    assert not n.feasible
    # the branches disagree at delta = h
    h = 0.05
    wide = choose_Rl(h, h)
    narrow = choose_Rl(h, h * (1 - 1e-12))
    assert abs(wide.R - narrow.R) > 0.01
    with pytest.raises(ValueError):
        choose_Rl(0.1, 0.0)
    with pytest.raises(ValueError):
        choose_Rl(0.6, 0.5)


@given(st.floats(0.01, 0.45), st.floats(0.01, 0.49))
@settings(max_examples=100, deadline=None)
def test_connector_conditions(R, frac):
    l = frac * R
    c = build_connector(R, l)
    assert abs(c.slope(1.0) - 2 * (R + l)) <= 1e-10
    assert abs(c.slope(-1.0) + 2 * (R - l)) <= 1e-10
    assert abs(c.height(-1.0)) <= 1e-10 and abs(c.height(1.0)) <= 1e-10
    assert abs(c.strain_residual()) <= 1e-10
    # curvature matches the spherical branches at both ends
    assert abs(c.slope.deriv()(1.0) - 2 * l) <= 1e-10
    assert abs(c.slope.deriv()(-1.0) + 2 * l) <= 1e-10


def test_connector_rejects_wide_connector():
    with pytest.raises(ConstructionError):
        build_connector(0.2, 0.1)


SWEEP = [(2.0**-k, d) for k in range(3, 10) for d in (1.0, 0.5, 0.25) if choose_Rl(2.0**-k, d).feasible]


@pytest.mark.parametrize("h, delta", SWEEP)
def test_inversion_admissible_and_wells(h, delta):
    g = RadialGrid.uniform(2048)
    p = build_inversion(h, delta, g)
    assert abs(p.w_at_origin()) <= 1e-8
    assert abs(p.w[-1] - (1 - delta)) <= 1e-8
    assert p.is_admissible(delta)
    c = choose_Rl(h, delta)
    r = g.r
    ws, _ = inversion_slopes(build_connector(c.R, c.l), r)
    inner = r <= c.R - c.l
    outer = r >= c.R + c.l
    assert np.all(in_wells(ws[inner], r[inner]) & (ws[inner] < 0))
    assert np.all(in_wells(ws[outer], r[outer]) & (ws[outer] > 0))
    t = tau(p)
    assert c.R - c.l - 2 * g.spacing <= t <= c.R + c.l + 2 * g.spacing


def test_inversion_membrane_cancellation_second_order():
    h, delta = 1 / 32, 0.5
    errs = []
    for n in (512, 1024, 2048):
        g = RadialGrid.uniform(n)
        p = build_inversion(h, delta, g)
        stretch = d1(p.u, g) + d1(p.w, g) ** 2 - 4 * g.r**2
        errs.append(np.max(np.abs(stretch)))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_inversion_end_value_and_u_bound():
    for h, delta in SWEEP:
        c = choose_Rl(h, delta)
        conn = build_connector(c.R, c.l)
        w_end = -(c.R - c.l) ** 2 + c.l * conn.height(1.0) + 1 - (c.R + c.l) ** 2
        assert w_end == pytest.approx(1 - delta, abs=1e-12)
        g = RadialGrid.uniform(1024)
        p = build_inversion(h, delta, g)
        # triangle inequality plus the zero-strain condition: |u| <= 16 R^2 l + 16 l^3 / 3
        assert np.max(np.abs(p.u)) <= 16 * c.R**2 * c.l + 16 * c.l**3 / 3


def test_inversion_delta_zero_and_infeasible():
    g = RadialGrid.uniform(100)
    p = build_inversion(0.1, 0.0, g)
    assert np.array_equal(p.w, g.r**2)
    with pytest.raises(ConstructionError):
        build_inversion(0.1, 0.01, g)


def test_tau_examples():
    g = RadialGrid.uniform(500)
    assert tau(CapProfile.sphere(g)) == 0.0
    assert tau(CapProfile(g, np.zeros(g.n), np.zeros(g.n))) == 1.0


def test_tau_refinement_stable():
    h, delta = 1 / 16, 1.0
    t1 = tau(build_inversion(h, delta, RadialGrid.uniform(1024)))
    g2 = RadialGrid.uniform(2048)
    t2 = tau(build_inversion(h, delta, g2))
    assert abs(t1 - t2) <= 2 * RadialGrid.uniform(1024).spacing


def test_g_a_examples():
    g = RadialGrid.uniform(4096)
    (t, vals), norm = g_a_profile(CapProfile.sphere(g), 0.25)
    assert norm < 1e-12 and np.max(np.abs(vals)) < 1e-12
    flat = CapProfile(g, np.zeros(g.n), np.zeros(g.n))
    for a in (0.5, 0.25, 0.1):
        (t, vals), norm = g_a_profile(flat, a)
        assert abs(np.trapezoid(vals, t)) < 1e-12
        assert norm**2 == pytest.approx(457 / 63 * a**7, rel=1e-4)
    with pytest.raises(ResolutionError):
        g_a_profile(CapProfile.sphere(RadialGrid.uniform(40)), 0.05)
    with pytest.raises(ValueError):
        g_a_profile(flat, 0.75)


def test_lower_bound_report_on_sphere():
    g = RadialGrid.uniform(2048)
    h = 0.05
    rep = lower_bound_report(CapProfile.sphere(g), h, 0.0)
    assert rep.tau == 0.0 and rep.tau_ratio == 0.0
    assert rep.sphere_ratio == pytest.approx(0.25, rel=1e-4)
    # ||w'||_{L1[0,s]} = s^2 <= (s/h) (4h^2)^{1/2} = 2s  on s <= 1/2: ratio s/2 <= 1/4
    assert rep.l1_origin_ratio == pytest.approx(0.25, rel=1e-2)
    assert rep.g_a_ratio < 1e-10


def test_minimize_cap_descends():
    g = RadialGrid.uniform(512)
    h, delta = 1 / 8, 1.0
    init = build_inversion(h, delta, g)
    res = minimize_cap(h, delta, init)
    vals = np.array(res.trace.values)
    assert np.all(np.diff(vals) <= 0)
    assert res.energy.total <= cap_energy(init, h).total
    assert res.converged
    assert res.profile.is_admissible(delta)


def test_minimize_cap_sphere_bound_and_budget_flag():
    g = RadialGrid.uniform(512)
    h = 0.05
    res = minimize_cap(h, 0.0, CapProfile.sphere(g))
    assert res.energy.total <= 4 * h * h * (1 + 1e-4)
    short = minimize_cap(h, 1.0, build_inversion(h, 1.0, g), settings=OptimSettings(max_inner=1, grad_tol=1e-6))
    assert not short.converged
    assert short.energy.total <= cap_energy(build_inversion(h, 1.0, g), h).total


def test_minimize_cap_rejects_inadmissible_init():
    g = RadialGrid.uniform(64)
    with pytest.raises(ValueError):
        minimize_cap(0.1, 0.5, CapProfile.sphere(g))


def test_minimize_cap_deterministic():
    g = RadialGrid.uniform(256)
    a = minimize_cap(0.1, 1.0, build_inversion(0.05, 1.0, g))
    b = minimize_cap(0.1, 1.0, build_inversion(0.05, 1.0, g))
    assert a.trace.values == b.trace.values
    assert np.array_equal(a.profile.w, b.profile.w)

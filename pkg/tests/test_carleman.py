import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from nlsinverse.carleman import (
    FbiConfig,
    ManufacturedField,
    build_parabolic_weights,
    carleman_ratio_sweep,
    cauchy_riemann_residual,
    check_resolution,
    evaluate_weights,
    fbi_kernel_bound_check,
    fbi_transform,
    kernel_defect,
    make_weight_set,
    manufactured_suite,
    parabolic_chain_ok,
    smallest_lambda,
    smooth_cutoff,
)
from nlsinverse.errors import ConfigurationError, SingularTimeError, UnderResolvedError
from nlsinverse.spectral import Trajectory, build_grid, eigendecompose


@pytest.fixture(scope="module")
def unit():
    g = build_grid(1, 1.0, 31, 0.15)
    return g, eigendecompose(g, np.zeros(g.n))


# weights ---------------------------------------------------------------------------------


def test_weight_values_at_origin(unit):
    g, _ = unit
    ws = make_weight_set(g, -1.0, 1.0, 1.0, 1.0)
    assert ws.psi_max == 4.0
    psi, theta, phi = evaluate_weights(ws, np.array([[0.0]]), 0.0)
    assert psi[0] == 1.0
    assert theta[0] == pytest.approx(np.e, rel=1e-14)
    assert phi[0] == pytest.approx(np.exp(8) - np.e, rel=1e-14)
    assert phi[0] == pytest.approx(2978.24, abs=0.01)


def test_weights_blow_up_towards_singular_time(unit):
    g, _ = unit
    ws = make_weight_set(g, -1.0, 1.0, 1.0, 1.0)
    t = np.array([0.0, 0.5, 0.9, 0.99, 0.999])
    _, theta, phi = evaluate_weights(ws, np.array([[0.3]]), t)
    assert np.all(np.diff(theta) > 0) and np.all(np.diff(phi) > 0)
    _, theta_m, _ = evaluate_weights(ws, np.array([[0.3]]), -t)
    np.testing.assert_array_equal(theta, theta_m)


def test_singular_time_refused(unit):
    g, _ = unit
    ws = make_weight_set(g, -1.0, 1.0, 1.0, 1.0)
    with pytest.raises(SingularTimeError):
        evaluate_weights(ws, np.array([[0.3]]), 1.0)


def test_interior_pole_refused(unit):
    g, _ = unit
    with pytest.raises(ConfigurationError, match="outside"):
        make_weight_set(g, 0.5, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        make_weight_set(g, -1.0, 0.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 1), t=st.floats(-0.99, 0.99), s=st.floats(0.01, 10))
def test_weight_largest_at_time_zero(x, t, s):
    g = build_grid(1, 1.0, 15, 0.2)
    ws = make_weight_set(g, -1.0, 0.7, s, 1.0)
    _, _, phi_t = evaluate_weights(ws, np.array([[x]]), t)
    _, _, phi_0 = evaluate_weights(ws, np.array([[x]]), 0.0)
    assert np.exp(-s * (phi_t - phi_0)) <= 1.0


def test_smallest_lambda_gives_weight_inequality(unit):
    g, _ = unit
    lam0 = smallest_lambda(g, -1.0)
    assert lam0 == pytest.approx(np.log(2.0), rel=1e-12)
    x = np.linspace(0, 1, 41)[:, None]
    for lam in (lam0, 2 * lam0, 5.0):
        ws = make_weight_set(g, -1.0, lam, 1.0, 1.0)
        _, theta, phi = evaluate_weights(ws, x[None], np.array([0.0, 0.4, -0.8])[:, None])
        assert np.all(phi >= theta) and np.all(theta > 0)


def test_smallest_lambda_in_two_dimensions(grid_square):
    lam0 = smallest_lambda(grid_square, (-0.5, -0.5))
    assert lam0 == pytest.approx(np.log(2.0) / 0.5, rel=1e-12)


# ratio sweeps -------------------------------------------------------------------------------


def test_suite_members_vanish_on_boundary_and_rates_match(unit):
    g, op = unit
    suite = manufactured_suite(op)
    assert [m.name for m in suite] == ["mode1", "mode3", "mixture", "poly_sine", "gauss_bubble", "secular"]
    t = np.array([-0.3, 0.1, 0.25])
    e = 1e-6
    for m in suite:
        fd = (m.value(t + e) - m.value(t - e)) / (2 * e)
        np.testing.assert_allclose(m.rate(t), fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(fd)))


def test_zero_field_is_degenerate(unit):
    g, op = unit
    zero = ManufacturedField("zero", lambda t: np.zeros((len(t), g.n)), lambda t: np.zeros((len(t), g.n)))
    table = carleman_ratio_sweep(op, -1.0, 1.0, 1.0, [1.0], [zero], n_times=200)
    assert table.rows[0].degenerate
    assert np.isnan(table.constant)


def test_ratios_are_scale_invariant(unit):
    g, op = unit
    suite = manufactured_suite(op)[:3]
    big = [ManufacturedField(m.name, lambda t, m=m: 10 * m.value(t), lambda t, m=m: 10 * m.rate(t)) for m in suite]
    a = carleman_ratio_sweep(op, -1.0, 1.0, 1.0, [0.5, 1.0], suite, n_times=300)
    b = carleman_ratio_sweep(op, -1.0, 1.0, 1.0, [0.5, 1.0], big, n_times=300)
    for ra, rb in zip(a.rows, b.rows):
        assert rb.ratio == pytest.approx(ra.ratio, rel=1e-12)


def test_exact_solutions_have_finite_ratios(unit):
    g, op = unit
    exact = manufactured_suite(op)[:3]
    lam = smallest_lambda(g, -1.0)
    table = carleman_ratio_sweep(op, -1.0, lam, 1.0, [0.5, 1.0, 2.0], exact, n_times=400)
    assert table.bounded
    assert all(0 < r.ratio < np.inf for r in table.rows)
    text = table.render()
    assert text.splitlines()[0] == "# schema=carleman_ratio v1"
    assert "s,lambda,suite_id,lhs,rhs,ratio" in text


def test_interior_estimate_uses_bands(unit):
    g, op = unit
    table = carleman_ratio_sweep(op, -1.0, 1.0, 1.0, [0.5], manufactured_suite(op), estimate="interior", n_times=300)
    assert table.estimate == "interior"
    assert table.bounded


def test_unresolved_weight_refused(unit):
    g, op = unit
    ws = make_weight_set(g, -1.0, 1.0, 1e4, 1.0)
    times = np.linspace(-0.99, 0.99, 50)
    with pytest.raises(UnderResolvedError) as info:
        check_resolution(g, ws, times)
    assert info.value.required > 50


def test_bad_estimate_name(unit):
    g, op = unit
    with pytest.raises(ConfigurationError):
        carleman_ratio_sweep(op, -1.0, 1.0, 1.0, [1.0], manufactured_suite(op)[:1], estimate="half", n_times=300)


# parabolic weights ----------------------------------------------------------------------------


def test_parabolic_profile_conditions_in_one_dimension():
    # a 0.3 collar needs a domain wider than 1.2; the right collar becomes (0.95, 1.25)
    g = build_grid(1, 1.25, 79, 0.3)
    right = [i for i in range(len(g.facet_axis)) if g.facet_sign[i] > 0]
    pw = build_parabolic_weights(g, right, 1.2, 1.3, lam=1.0)
    assert pw.all_conditions_hold
    assert set(pw.conditions) == {
        "positive_inside",
        "gradient_nonvanishing",
        "zero_off_gamma",
        "normal_derivative_nonpositive",
    }
    assert pw.profile(np.array([[0.3]]))[0] == 0.0
    assert pw.profile(np.array([[0.0]]))[0] == 0.0
    assert pw.profile(np.array([[0.95]]))[0] == 0.0
    assert pw.profile(np.array([[1.25]]))[0] > 0
    assert pw.psi0.max() == pytest.approx(1.0)
    assert np.all(pw.phi0(np.array([0.0, 0.5])) > 0)


def test_parabolic_profile_in_two_dimensions(grid_square):
    bottom = [i for i in range(len(grid_square.facet_axis)) if grid_square.facet_axis[i] == 1 and grid_square.facet_sign[i] < 0]
    pw = build_parabolic_weights(grid_square, bottom, 1.2, 1.3, lam=1.0)
    assert pw.conditions["zero_off_gamma"] and pw.conditions["positive_inside"]


def test_chain_inequality_examples():
    assert not parabolic_chain_ok(1.0, 1.0, 1.5)
    assert parabolic_chain_ok(1.0, 1.2, 1.3)
    g = build_grid(1, 1.0, 31, 0.2)
    with pytest.raises(ConfigurationError, match="2a"):
        build_parabolic_weights(g, [1], 1.0, 1.5, lam=1.0)
    with pytest.raises(ConfigurationError):
        build_parabolic_weights(g, [], 1.2, 1.3, lam=1.0)


# FBI transform --------------------------------------------------------------------------------


def _traj(values_of_t, T=1.0, samples=2001, n=3):
    g = build_grid(1, 1.0, max(n, 8), 0.15)
    times = np.linspace(-T, T, samples)
    return Trajectory(times, values_of_t(times)[:, : g.n], g)


def test_cutoff_shape():
    eta = np.array([0.0, 2.0, 2.5, 3.0, 4.0])
    np.testing.assert_allclose(smooth_cutoff(eta, 2.0, 3.0), [1.0, 1.0, 0.5, 0.0, 0.0])
    cfg = FbiConfig(gamma=10.0, T=1.0)
    assert cfg.h == pytest.approx(1 / 3.6) and cfg.plateau == pytest.approx(2.4)


def test_fbi_of_constant_is_constant():
    cfg = FbiConfig(gamma=100.0, T=1.0)
    traj = _traj(lambda t: np.full((len(t), 8), 2.5 + 1j))
    _, vals = fbi_transform(traj, cfg, 0.0, np.array([-1.0, 0.0, 1.5]))
    np.testing.assert_allclose(vals, 2.5 + 1j, rtol=1e-10)


def test_fbi_of_odd_field_vanishes_at_zero():
    cfg = FbiConfig(gamma=50.0, T=1.0)
    traj = _traj(lambda t: np.outer(np.sin(3 * t) + t**3, np.ones(8)))
    _, vals = fbi_transform(traj, cfg, 0.0, np.array([0.0]))
    assert np.max(np.abs(vals)) <= 1e-12


def test_fbi_mollification_error_is_first_order_in_inverse_gamma():
    cfg0 = FbiConfig(gamma=1.0, T=1.0)
    w = lambda t: np.outer(np.cos(2 * t) + 0.5 * t, np.ones(8))
    traj = _traj(w, samples=4001)
    eta = np.linspace(-1.5 * cfg0.T0, 1.5 * cfg0.T0, 41)
    errs = []
    gammas = [25.0, 50.0, 100.0, 200.0]
    for gam in gammas:
        cfg = FbiConfig(gamma=gam, T=1.0)
        _, vals = fbi_transform(traj, cfg, 0.0, eta)
        errs.append(np.max(np.abs(vals - cfg.cutoff(eta)[:, None] * w(eta * cfg.h))))
    order = -np.polyfit(np.log(gammas), np.log(errs), 1)[0]
    assert order == pytest.approx(1.0, abs=0.1)


def test_fbi_is_analytic_in_complex_time():
    cfg = FbiConfig(gamma=20.0, T=1.0)
    traj = _traj(lambda t: np.outer(np.exp(-1j * 3 * t), np.linspace(1, 2, 8)))
    res = cauchy_riemann_residual(traj, cfg, 0.3, np.linspace(-2, 2, 9))
    assert res <= 1e-6


def test_fbi_refuses_coarse_eta_grid():
    cfg = FbiConfig(gamma=400.0, T=1.0)
    traj = _traj(lambda t: np.ones((len(t), 8)), samples=201)
    with pytest.raises(UnderResolvedError) as info:
        fbi_transform(traj, cfg, 0.0)
    assert info.value.required > 201


def test_fbi_requires_full_time_window():
    cfg = FbiConfig(gamma=10.0, T=1.0)
    traj = _traj(lambda t: np.ones((len(t), 8)), T=0.5)
    with pytest.raises(ConfigurationError, match="cover"):
        fbi_transform(traj, cfg, 0.0)


def test_fbi_config_guards():
    with pytest.raises(ConfigurationError):
        FbiConfig(gamma=0.0, T=1.0)
    with pytest.raises(ConfigurationError):
        FbiConfig(gamma=1.0, T=1.0, T0=0.9)


# kernel bound ------------------------------------------------------------------------------------


def test_kernel_defect_examples():
    assert kernel_defect(100.0, 1.0) == pytest.approx((1 - np.exp(-0.005)) ** 2, rel=1e-14)
    assert kernel_defect(100.0, 1.0) == pytest.approx(2.49e-5, rel=2e-3)
    assert kernel_defect(100.0, 1.0) <= 1.0 / 100.0
    assert kernel_defect(100.0, 0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(gamma=st.floats(1.0, 1e4), zeta=st.floats(0.0, 50.0))
def test_kernel_defect_drops_with_gamma(gamma, zeta):
    assert kernel_defect(2 * gamma, zeta) <= kernel_defect(gamma, zeta)
    assert kernel_defect(gamma, zeta) * gamma <= 0.5 * zeta**2 + 1e-300 or zeta**2 > 4 * gamma


def test_kernel_bound_report():
    rep = fbi_kernel_bound_check([50.0, 100.0, 400.0])
    assert rep.passed
    # with u = zeta^2 / (2 gamma) the quantity is (1 - e^{-u})^2 / (2u) on u <= 2, independent of gamma
    best = minimize_scalar(lambda u: -((1 - np.exp(-u)) ** 2) / (2 * u), bounds=(1e-6, 2.0), method="bounded", options={"xatol": 1e-10})
    np.testing.assert_allclose(rep.maxima, -best.fun, rtol=1e-6)

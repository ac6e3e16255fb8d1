from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsinverse.errors import ConfigurationError
from nlsinverse.nonlinearity import (
    NonlinearitySpec,
    cubic_gross_pitaevskii,
    evaluate,
    homogeneous_part,
    leading_term,
    leading_term_derivative,
    partial_derivatives,
    quadratic_product,
    validate_spec,
)
from nlsinverse.spectral import banach_algebra_constant, random_smooth_fields, sobolev_norm


def test_quadratic_product_validates():
    rep = validate_spec(quadratic_product())
    assert rep.passed
    assert rep.binomial_sum == 2


def test_gross_pitaevskii_validates():
    rep = validate_spec(cubic_gross_pitaevskii())
    assert rep.passed
    assert rep.binomial_sum == 6


def test_cancelling_leading_part_fails():
    spec = NonlinearitySpec(k=2, coeffs={(2, 0): 2.0, (0, 2): -2.0})
    rep = validate_spec(spec)
    assert not rep.passed
    assert rep.binomial_sum == 0
    assert rep.failures() == ["binomial_sum_nonzero"]


def test_low_order_and_complex_leading_terms_are_reported():
    spec = NonlinearitySpec(k=3, coeffs={(1, 1): 0.5, (2, 1): 1 + 1j})
    rep = validate_spec(spec)
    assert set(rep.failures()) == {"low_orders_vanish", "leading_coefficients_real"}
    assert (1, 1) in rep.offending and (2, 1) in rep.offending


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(k=1, coeffs={(1, 0): 1.0}),
        dict(k=3, coeffs={(2, 1): 1.0}, L=2),
        dict(k=2, coeffs={(3, 3): 1.0}, L=4),
        dict(k=2, coeffs={(1, 1): 1.0}, delta=0.0),
        dict(k=2, coeffs={(-1, 3): 1.0}),
    ],
)
def test_construction_errors(kwargs):
    with pytest.raises(ConfigurationError):
        NonlinearitySpec(**kwargs)


def test_default_growth_exponents():
    assert (quadratic_product().m0, quadratic_product().n0) == (1, 1)
    spec = NonlinearitySpec(k=3, coeffs={(3, 0): 1.0})
    assert (spec.m0, spec.n0, spec.L) == (2, 1, 5)


def test_gross_pitaevskii_is_cubic_modulus(rng):
    u = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    np.testing.assert_allclose(evaluate(cubic_gross_pitaevskii(), u, np.conj(u)), np.abs(u) ** 2 * u, rtol=1e-14)


def test_evaluate_zero_and_constants():
    spec = quadratic_product()
    assert np.all(evaluate(spec, np.zeros(4), np.zeros(4)) == 0)
    np.testing.assert_array_equal(evaluate(spec, np.full(3, 2 + 0j), np.full(3, 3 + 0j)), np.full(3, 6.0))


def test_leading_term_examples(rng):
    w = rng.standard_normal(30)
    np.testing.assert_allclose(leading_term(quadratic_product(), w), 2 * w**2, rtol=1e-14)
    np.testing.assert_allclose(leading_term(cubic_gross_pitaevskii(), w), 6 * w**3, rtol=1e-14)
    assert np.all(leading_term(cubic_gross_pitaevskii(), np.zeros(5)) == 0)


coeff_tables = st.integers(2, 4).flatmap(
    lambda k: st.tuples(
        st.just(k),
        st.dictionaries(
            st.tuples(st.integers(0, k + 2), st.integers(0, k + 2)).filter(lambda ab: k <= sum(ab) <= k + 2),
            st.floats(-3, 3, allow_nan=False).filter(lambda v: abs(v) > 1e-3),
            min_size=1,
            max_size=6,
        ),
    )
)


@settings(max_examples=60, deadline=None)
@given(table=coeff_tables, seed=st.integers(0, 2**31 - 1))
def test_leading_term_is_k_factorial_times_homogeneous_part(table, seed):
    k, coeffs = table
    spec = NonlinearitySpec(k=k, coeffs=coeffs)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    # independent assembly of the degree-k part with 1/(m!(k-m)!) weights
    manual = sum(
        spec.c(m, k - m) / (factorial(m) * factorial(k - m)) * w**m * np.conj(w) ** (k - m) for m in range(k + 1)
    )
    np.testing.assert_allclose(homogeneous_part(spec, w, np.conj(w)), manual, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(leading_term(spec, w), factorial(k) * manual, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(table=coeff_tables, seed=st.integers(0, 2**31 - 1), a=st.floats(0.1, 3.0))
def test_single_degree_specs_are_homogeneous(table, seed, a):
    k, coeffs = table
    coeffs = {key: v for key, v in coeffs.items() if sum(key) == k} or {(k, 0): 1.0}
    spec = NonlinearitySpec(k=k, coeffs=coeffs)
    rng = np.random.default_rng(seed)
    h1, h2 = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
    np.testing.assert_allclose(
        evaluate(spec, a * h1, a * h2), a**k * evaluate(spec, h1, h2), rtol=1e-11, atol=1e-13
    )


@pytest.mark.parametrize("k", [2, 3])
def test_evaluate_minus_leading_part_is_higher_order(k):
    coeffs = {(k - 1, 1): 1.5, (k, 0): 0.5, (k, 1): 2.0, (1, k + 1): -1.0}
    spec = NonlinearitySpec(k=k, coeffs=coeffs)
    rng = np.random.default_rng(k)
    w = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    lead = sum(
        spec.c(m, k - m) / (factorial(m) * factorial(k - m)) * w**m * np.conj(w) ** (k - m) for m in range(k + 1)
    )
    eps = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])
    err = [np.linalg.norm(evaluate(spec, e * w, e * np.conj(w)) - e**k * lead) for e in eps]
    order = np.polyfit(np.log(eps), np.log(err), 1)[0]
    assert order >= k + 0.8


@pytest.mark.parametrize("spec_factory,power", [(quadratic_product, 1), (cubic_gross_pitaevskii, 2)])
def test_growth_bound_on_random_suite(grid_square, spec_factory, power):
    k_star = banach_algebra_constant(grid_square, samples=200, rng=np.random.default_rng(0))
    spec = spec_factory(C0=k_star**power)
    rng = np.random.default_rng(1)
    h = random_smooth_fields(grid_square, 200, rng)
    norms = sobolev_norm(h, grid_square, 2)
    # scale every sample inside the analyticity disk ||h1||^2 + ||h2||^2 < delta / K*^2
    h = h / norms[:, None] * (0.5 * np.sqrt(spec.delta / 2) / k_star)
    h1, h2 = h, np.conj(h)
    lhs = sobolev_norm(evaluate(spec, h1, h2), grid_square, 2)
    rhs = spec.C0 * sobolev_norm(h1, grid_square, 2) ** spec.m0 * sobolev_norm(h2, grid_square, 2) ** spec.n0
    assert np.all(lhs <= rhs)


def test_radius_warning_outside_disk(grid_square):
    f = np.ones(grid_square.n)
    with pytest.warns(RuntimeWarning, match="analyticity disk"):
        evaluate(quadratic_product(), f, f, grid=grid_square, k_star=10.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_symmetric_table_gives_real_output(seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    out = evaluate(quadratic_product(), h, np.conj(h))
    assert np.max(np.abs(out.imag)) <= 1e-14 * max(1.0, np.max(np.abs(out)))
    spec = NonlinearitySpec(k=2, coeffs={(2, 0): 1.0, (0, 2): 1.0, (1, 1): 3.0, (2, 1): 0.5, (1, 2): 0.5})
    out = evaluate(spec, h, np.conj(h))
    assert np.max(np.abs(out.imag)) <= 1e-12 * max(1.0, np.max(np.abs(out)))


def test_partial_derivatives_match_finite_differences(rng):
    spec = NonlinearitySpec(k=2, coeffs={(1, 1): 1.0, (2, 1): 2.0, (0, 3): -0.5, (2, 0): 0.7})
    h1 = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    h2 = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    d1, d2 = partial_derivatives(spec, h1, h2)
    e = 1e-6
    fd1 = (evaluate(spec, h1 + e, h2) - evaluate(spec, h1 - e, h2)) / (2 * e)
    fd2 = (evaluate(spec, h1, h2 + e) - evaluate(spec, h1, h2 - e)) / (2 * e)
    np.testing.assert_allclose(d1, fd1, rtol=1e-8)
    np.testing.assert_allclose(d2, fd2, rtol=1e-8)


def test_leading_term_derivative_matches_time_difference():
    spec = cubic_gross_pitaevskii()
    t = 0.3
    w = lambda s: np.exp(-1j * 2.0 * s) * np.array([0.3, -1.2, 0.8]) + s**2
    dw = lambda s: -2j * np.exp(-1j * 2.0 * s) * np.array([0.3, -1.2, 0.8]) + 2 * s
    e = 1e-6
    fd = (leading_term(spec, w(t + e)) - leading_term(spec, w(t - e))) / (2 * e)
    np.testing.assert_allclose(leading_term_derivative(spec, w(t), dw(t)), fd, rtol=1e-8)


def test_binomial_sum_definition():
    spec = NonlinearitySpec(k=4, coeffs={(4, 0): 1.0, (3, 1): -2.0, (2, 2): 0.5, (0, 4): 3.0})
    expected = sum(comb(4, m) * spec.c(m, 4 - m) for m in range(5))
    assert spec.binomial_sum == expected == 1.0 - 8.0 + 3.0 + 3.0


def test_serialization_round_trip():
    spec = NonlinearitySpec(k=3, coeffs={(2, 1): 2.0, (3, 1): 0.25, (1, 3): 1 - 0.5j}, L=5, delta=0.7, C0=3.0)
    text = spec.dumps()
    for key in ("k", "L", "delta", "coeffs", "m0", "n0", "C0"):
        assert f'"{key}"' in text
    again = NonlinearitySpec.loads(text)
    assert again == spec
    assert again.dumps() == text


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigurationError, match="unknown"):
        NonlinearitySpec.from_dict({"k": 2, "coeffs": [[1, 1, 1.0]], "radius": 1})

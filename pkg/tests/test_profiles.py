import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsinverse.errors import ConfigurationError
from nlsinverse.profiles import (
    GENERATORS,
    generate,
    relative_bump_sum,
    sine_bump,
    sine_bump_family,
    sine_mode,
    smooth_bump,
)
from nlsinverse.spectral import build_grid, sobolev_norm


def test_generators_return_real_interior_arrays(grid_square):
    params = {
        "constant": {"value": 2.0},
        "sine_bump": {"center": 0.5, "width": 0.4},
        "smooth_bump": {"center": [0.5, 0.5], "radius": 0.3},
        "gaussian": {"center": 0.5, "width": 0.1},
        "bump_sum": {"bumps": [{"center": 0.5, "width": 0.4}]},
        "relative_bump_sum": {"bumps": [{"center": 0.5, "width": 0.5}]},
    }
    for name in GENERATORS:
        v = generate(grid_square, name, params.get(name))
        assert v.shape == (grid_square.n,) and v.dtype == float


def test_unknown_generator_and_bad_parameters(grid_square):
    with pytest.raises(ConfigurationError, match="unknown generator 'wave'"):
        generate(grid_square, "wave")
    with pytest.raises(ConfigurationError, match="bad parameters"):
        generate(grid_square, "sine_bump", {"centre": 0.5, "width": 0.2})


def test_sine_mode_is_an_eigenfunction_sample(grid_unit):
    x = grid_unit.coords[:, 0]
    np.testing.assert_allclose(sine_mode(grid_unit, [(2,)], [0.5]), 0.5 * np.sin(2 * np.pi * x), atol=1e-15)


def test_bumps_vanish_exactly_outside_support(grid_unit):
    x = grid_unit.coords[:, 0]
    b = sine_bump(grid_unit, 0.5, 0.4)
    assert np.all(b[(x <= 0.3) | (x >= 0.7)] == 0.0)
    assert b[np.argmin(np.abs(x - 0.5))] == pytest.approx(1.0, abs=1e-2)
    s = smooth_bump(grid_unit, 0.5, 0.2, 3.0)
    assert np.all(s[np.abs(x - 0.5) >= 0.2] == 0.0)
    assert s.max() <= 3.0


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(1e-4, 10.0), n=st.sampled_from([15, 31, 63]))
def test_family_stays_off_the_collar(scale, n):
    g = build_grid(2, 1.0, n, 0.15)
    for name, v in sine_bump_family(g, scale):
        assert np.all(v[g.collar] == 0.0), name
        assert np.any(v != 0.0)


def test_family_is_linear_in_scale(grid_square):
    a = dict(sine_bump_family(grid_square, 1.0))
    b = dict(sine_bump_family(grid_square, 0.01))
    for k in a:
        np.testing.assert_allclose(b[k], 0.01 * a[k], rtol=1e-15)
    assert list(a) == ["bump1", "bump2", "bump3", "bump4", "bump5"]


def test_family_in_one_dimension_and_size_guard(grid_unit):
    fam = sine_bump_family(grid_unit, 1.0, 3)
    assert [k for k, _ in fam] == ["bump1", "bump2", "bump3"]
    with pytest.raises(ConfigurationError):
        sine_bump_family(grid_unit, 1.0, 6)


def test_relative_bumps_refine_consistently():
    # the same relative design sampled on nested grids agrees at shared nodes
    coarse = build_grid(1, 1.0, 31, 0.15)
    fine = build_grid(1, 1.0, 63, 0.15)
    bumps = [{"center": 0.4, "width": 0.6, "amplitude": 2.0}]
    np.testing.assert_allclose(relative_bump_sum(fine, bumps)[1::2], relative_bump_sum(coarse, bumps), atol=1e-14)
    with pytest.raises(ConfigurationError, match="leaves the unit box"):
        relative_bump_sum(coarse, [{"center": 0.9, "width": 0.5}])


def test_family_has_bounded_h4_norm(grid_square):
    norms = [sobolev_norm(v, grid_square, 4) for _, v in sine_bump_family(grid_square, 1.0)]
    assert np.all(np.isfinite(norms))

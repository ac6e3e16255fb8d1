"""Named coefficient and data profiles, and the sine-bump perturbation family.

Every generator takes the grid and keyword parameters and returns a real array
over the interior nodes.  Bump generators return exact zeros outside their
support so that "vanishes on the collar" can be checked without tolerances.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .spectral import Grid


def _vec(value, dim, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, dim)
    if arr.size != dim:
        raise ConfigurationError(f"{name} needs {dim} component(s), got {arr.size}")
    return arr


def zero(grid: Grid):
    return np.zeros(grid.n)


def constant(grid: Grid, value=0.0):
    return np.full(grid.n, float(value))


def sine_mode(grid: Grid, modes=((1,),), amplitudes=None):
    """Sum of Dirichlet eigenfunctions prod_a sin(m_a pi x_a / L_a)."""
    modes = [np.atleast_1d(np.asarray(m, dtype=int)) for m in modes]
    amplitudes = [1.0] * len(modes) if amplitudes is None else list(amplitudes)
    if len(amplitudes) != len(modes):
        raise ConfigurationError("sine_mode: modes and amplitudes differ in length")
    out = np.zeros(grid.n)
    for m, a in zip(modes, amplitudes):
        m = _vec(m, grid.dim, "mode")
        term = np.ones(grid.n)
        for ax in range(grid.dim):
            term *= np.sin(m[ax] * np.pi * grid.coords[:, ax] / grid.extent[ax])
        out += float(a) * term
    return out


def sine_bump(grid: Grid, center, width, amplitude=1.0, power=6):
    """``amplitude * prod_a sin^power(pi (x_a - lo_a) / width_a)`` on the box, zero elsewhere.

    With ``power = 6`` the bump is C^5, enough for discrete H^4 bounds.
    """
    c = _vec(center, grid.dim, "center")
    w = _vec(width, grid.dim, "width")
    if np.any(w <= 0):
        raise ConfigurationError("sine_bump: width must be positive")
    lo = c - w / 2
    out = np.full(grid.n, float(amplitude))
    for ax in range(grid.dim):
        x = grid.coords[:, ax]
        inside = (x > lo[ax]) & (x < lo[ax] + w[ax])
        out *= np.where(inside, np.sin(np.pi * (x - lo[ax]) / w[ax]) ** power, 0.0)
    return out


def smooth_bump(grid: Grid, center, radius, amplitude=1.0):
    """C-infinity bump ``amplitude * exp(1 - 1/(1 - rho^2))`` with ``rho = |x - center| / radius``."""
    c = _vec(center, grid.dim, "center")
    if not radius > 0:
        raise ConfigurationError("smooth_bump: radius must be positive")
    rho2 = np.sum((grid.coords - c) ** 2, axis=1) / radius**2
    out = np.zeros(grid.n)
    inside = rho2 < 1
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def gaussian(grid: Grid, center, width, amplitude=1.0):
    c = _vec(center, grid.dim, "center")
    return amplitude * np.exp(-np.sum((grid.coords - c) ** 2, axis=1) / (2 * width**2))


def bump_sum(grid: Grid, bumps=()):
    """Sum of :func:`sine_bump` terms given as parameter dictionaries."""
    out = np.zeros(grid.n)
    for b in bumps:
        out += sine_bump(grid, **b)
    return out


def relative_bump_sum(grid: Grid, bumps=(), margin=0.0):
    """Sine bumps placed in coordinates relative to the region off the collar.

    Centers and widths are fractions of the box ``[c + margin, L - c - margin]``
    per axis (``c`` the collar width), so the same parameters give the same
    function on refined grids.
    """
    lo = grid.collar_width + margin
    span = np.asarray(grid.extent, dtype=float) - 2 * lo
    if np.any(span <= 0):
        raise ConfigurationError("relative_bump_sum: margin leaves no room off the collar")
    out = np.zeros(grid.n)
    for b in bumps:
        # extra components are ignored so 2D designs also work in 1D
        c = lo + _vec(np.atleast_1d(b["center"])[: grid.dim], grid.dim, "center") * span
        w = _vec(np.atleast_1d(b["width"])[: grid.dim], grid.dim, "width") * span
        if np.any(c - w / 2 < lo - 1e-12) or np.any(c + w / 2 > lo + span + 1e-12):
            raise ConfigurationError(f"relative bump {b} leaves the unit box")
        out += sine_bump(grid, c, w, b.get("amplitude", 1.0), b.get("power", 6))
    return out


GENERATORS = {
    "zero": zero,
    "constant": constant,
    "sine_mode": sine_mode,
    "sine_bump": sine_bump,
    "smooth_bump": smooth_bump,
    "gaussian": gaussian,
    "bump_sum": bump_sum,
    "relative_bump_sum": relative_bump_sum,
}


def generate(grid: Grid, name, params=None):
    """Evaluate the generator ``name`` with keyword ``params``."""
    if name not in GENERATORS:
        raise ConfigurationError(f"unknown generator {name!r}; known: {sorted(GENERATORS)}")
    try:
        return np.asarray(GENERATORS[name](grid, **(params or {})), dtype=float)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for generator {name!r}: {exc}") from exc


# fixed five-member family in relative coordinates; margin keeps supports clear of the collar
SINE_BUMP_FAMILY = (
    ("bump1", [{"center": 0.5, "width": 0.8, "amplitude": 1.0}]),
    ("bump2", [{"center": [0.35, 0.6], "width": [0.5, 0.6], "amplitude": 0.7}]),
    ("bump3", [{"center": [0.65, 0.4], "width": [0.5, 0.5], "amplitude": 1.2}]),
    (
        "bump4",
        [
            {"center": 0.3, "width": 0.4, "amplitude": 0.8},
            {"center": 0.7, "width": 0.4, "amplitude": -0.6},
        ],
    ),
    (
        "bump5",
        [
            {"center": 0.5, "width": 0.6, "amplitude": 0.5},
            {"center": [0.25, 0.75], "width": 0.3, "amplitude": 0.5},
        ],
    ),
)


def sine_bump_family(grid: Grid, scale=1.0, count=5, margin=None):
    """The fixed family of sums of sine bumps off the collar, as ``[(member_id, values)]``.

    ``margin`` defaults to a quarter of the collar width.
    """
    if not 1 <= count <= len(SINE_BUMP_FAMILY):
        raise ConfigurationError(f"family size must be in 1..{len(SINE_BUMP_FAMILY)}")
    margin = grid.collar_width / 4 if margin is None else margin
    out = []
    for name, bumps in SINE_BUMP_FAMILY[:count]:
        out.append((name, scale * relative_bump_sum(grid, bumps, margin)))
    return out

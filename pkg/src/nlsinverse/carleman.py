"""Carleman weights, weighted-estimate sweeps, the energy identity, and the FBI transform.

Schrodinger weights (exterior point ``x0``, singular time ``T1``)::

    psi(x)     = |x - x0|^2
    theta(x,t) = exp(lam psi) / (T1^2 - t^2)
    phi(x,t)   = (exp(2 lam ||psi||_inf) - exp(lam psi)) / (T1^2 - t^2)

Every weighted quadrature is carried out with ``exp(-s (phi - min phi))``;
both sides of an estimate share the same global factor, so ratios are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigurationError, SingularTimeError, UnderResolvedError
from .records import render_table
from .spectral import (
    Grid,
    SpectralOperator,
    gradient,
    laplacian,
    normal_derivative,
    padded_coords,
)

log = logging.getLogger(__name__)

WEIGHT_JUMP_LIMIT = np.log(1e6)
RELEVANT_WEIGHT = 1e-16
MAX_PHASE_STEP = 2.5


# Schrodinger weights ---------------------------------------------------------


@dataclass(frozen=True)
class CarlemanWeightSet:
    x0: tuple
    lam: float
    s: float
    T1: float
    psi_max: float

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sum((x - np.asarray(self.x0)) ** 2, axis=-1)

    def with_s(self, s) -> "CarlemanWeightSet":
        return CarlemanWeightSet(self.x0, self.lam, float(s), self.T1, self.psi_max)


def make_weight_set(grid: Grid, x0, lam, s, T1) -> CarlemanWeightSet:
    """Weight set with ``||psi||_inf`` taken over the closed grid (boundary nodes included)."""
    x0 = tuple(float(v) for v in np.atleast_1d(x0))
    if len(x0) != grid.dim:
        raise ConfigurationError(f"x0 needs {grid.dim} coordinates")
    inside = all(0.0 <= x0[a] <= grid.extent[a] for a in range(grid.dim))
    if inside:
        raise ConfigurationError(f"x0={x0} must lie outside the closed domain")
    if not lam > 0 or not s > 0 or not T1 > 0:
        raise ConfigurationError("lam, s and T1 must be positive")
    pc = padded_coords(grid)
    psi = np.sum((pc - np.asarray(x0)) ** 2, axis=-1)
    return CarlemanWeightSet(x0, float(lam), float(s), float(T1), float(psi.max()))


def evaluate_weights(ws: CarlemanWeightSet, x, t):
    """Return ``(psi, theta, phi)`` at points ``x`` (shape ``(..., dim)``) and times ``t``.

    ``x`` and ``t`` broadcast against each other after ``psi`` is formed.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) >= ws.T1):
        raise SingularTimeError(f"|t| must be below T1={ws.T1}")
    psi = ws.psi(x)
    denom = ws.T1**2 - t**2
    e = np.exp(ws.lam * psi)
    theta = e / denom
    phi = (np.exp(2 * ws.lam * ws.psi_max) - e) / denom
    return psi, theta, phi


def smallest_lambda(grid: Grid, x0, T1=1.0) -> float:
    """Smallest lam with exp(lam psi) >= 2 at every closed-grid node, checked with phi >= theta."""
    pc = padded_coords(grid).reshape(-1, grid.dim)
    probe = make_weight_set(grid, x0, 1.0, 1.0, T1)
    psi = probe.psi(pc)
    lam = float(np.log(2.0) / psi.min())
    for _ in range(60):
        ws = make_weight_set(grid, x0, lam, 1.0, T1)
        _, theta, phi = evaluate_weights(ws, pc, 0.0)
        if np.all(np.exp(lam * psi) >= 2.0) and np.all(phi >= theta):
            return lam
        lam = np.nextafter(lam, np.inf) * (1 + 1e-14)
    raise ConfigurationError("could not verify the weight inequality on the grid")


# manufactured fields -----------------------------------------------------------


@dataclass(frozen=True)
class ManufacturedField:
    """Space-time field given by callables of a time array.

    ``value(t)`` and ``rate(t)`` return arrays of shape ``(len(t), n)``; ``rate``
    is the exact time derivative.
    """

    name: str
    value: object
    rate: object


def manufactured_suite(op: SpectralOperator, seed=0) -> list:
    """Six fields vanishing on the boundary, three of them exact homogeneous solutions."""
    grid = op.grid
    mu, vec = op.eigenvalues, op.eigenvectors
    coords = grid.coords
    sine = np.prod(
        [np.sin(np.pi * coords[:, a] / grid.extent[a]) for a in range(grid.dim)], axis=0
    )
    bubble = np.prod(
        [coords[:, a] * (grid.extent[a] - coords[:, a]) for a in range(grid.dim)], axis=0
    )
    bubble = bubble / np.max(np.abs(bubble))
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal(4) + 1j * rng.standard_normal(4)

    def mode(m):
        return (
            lambda t: np.exp(-1j * mu[m] * np.asarray(t))[:, None] * vec[:, m],
            lambda t: (-1j * mu[m]) * np.exp(-1j * mu[m] * np.asarray(t))[:, None] * vec[:, m],
        )

    def mixture_value(t):
        return np.exp(-1j * np.multiply.outer(t, mu[:4])) * mix @ vec[:, :4].T

    def mixture_rate(t):
        return (-1j * mu[:4]) * np.exp(-1j * np.multiply.outer(t, mu[:4])) * mix @ vec[:, :4].T

    m0v, m0r = mode(0)
    m2v, m2r = mode(2)
    return [
        ManufacturedField("mode1", m0v, m0r),
        ManufacturedField("mode3", m2v, m2r),
        ManufacturedField("mixture", mixture_value, mixture_rate),
        ManufacturedField(
            "poly_sine",
            lambda t: (1 + np.asarray(t) ** 2)[:, None] * sine,
            lambda t: (2 * np.asarray(t))[:, None] * sine,
        ),
        ManufacturedField(
            "gauss_bubble",
            lambda t: np.exp(-np.asarray(t) ** 2 / 0.1)[:, None] * bubble * (1 + 0.5j),
            lambda t: (-20 * np.asarray(t) * np.exp(-np.asarray(t) ** 2 / 0.1))[:, None]
            * bubble
            * (1 + 0.5j),
        ),
        ManufacturedField(
            "secular",
            lambda t: (np.asarray(t) * np.exp(-1j * mu[1] * np.asarray(t)))[:, None] * vec[:, 1],
            lambda t: ((1 - 1j * mu[1] * np.asarray(t)) * np.exp(-1j * mu[1] * np.asarray(t)))[
                :, None
            ]
            * vec[:, 1],
        ),
    ]


# ratio sweeps ---------------------------------------------------------------------


@dataclass
class RatioRow:
    s: float
    lam: float
    suite_id: str
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return float("nan") if self.lhs == 0 else float("inf")
        return self.lhs / self.rhs

    @property
    def degenerate(self) -> bool:
        return self.lhs == 0 and self.rhs == 0


@dataclass
class RatioTable:
    estimate: str
    rows: list = field(default_factory=list)

    def s_values(self):
        return sorted({r.s for r in self.rows})

    def members(self):
        seen = []
        for r in self.rows:
            if r.suite_id not in seen:
                seen.append(r.suite_id)
        return seen

    def ratio(self, s, member):
        for r in self.rows:
            if r.s == s and r.suite_id == member:
                return r.ratio
        raise KeyError((s, member))

    def max_ratio_by_s(self) -> dict:
        out = {}
        for s in self.s_values():
            vals = [r.ratio for r in self.rows if r.s == s and not r.degenerate]
            out[s] = max(vals) if vals else float("nan")
        return out

    @property
    def constant(self) -> float:
        vals = [r.ratio for r in self.rows if not r.degenerate]
        return max(vals) if vals else float("nan")

    def non_increasing(self, rtol=1e-9) -> bool:
        """True when every member's ratio does not grow along the s ladder."""
        svals = self.s_values()
        for m in self.members():
            seq = [self.ratio(s, m) for s in svals]
            seq = [v for v in seq if np.isfinite(v)]
            if any(b > a * (1 + rtol) for a, b in zip(seq, seq[1:])):
                return False
        return True

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.constant))

    @property
    def passed(self) -> bool:
        return self.bounded and self.non_increasing()

    def render(self) -> str:
        rows = [(r.s, r.lam, r.suite_id, r.lhs, r.rhs, r.ratio) for r in self.rows]
        meta = {
            "estimate": self.estimate,
            "constant": self.constant,
            "non_increasing": self.non_increasing(),
        }
        return render_table("carleman_ratio", ["s", "lambda", "suite_id", "lhs", "rhs", "ratio"], rows, meta)


def _weight_fields(grid, ws, times):
    """Padded-grid weight data for a time grid strictly inside (-T1, T1)."""
    pc = padded_coords(grid)
    psi = ws.psi(pc)
    e = np.exp(ws.lam * psi)
    E2 = np.exp(2 * ws.lam * ws.psi_max)
    denom = (ws.T1**2 - times**2).reshape((-1,) + (1,) * grid.dim)
    phi = (E2 - e) / denom
    theta = e / denom
    dphi_dt = 2 * times.reshape(denom.shape) * phi / denom
    grad_psi = [2 * (pc[..., a] - ws.x0[a]) for a in range(grid.dim)]
    grad_phi = [-ws.lam * g * e / denom for g in grad_psi]
    lap_phi = -ws.lam * (2 * grid.dim + ws.lam * 4 * psi) * e / denom
    return dict(psi=psi, phi=phi, theta=theta, dphi_dt=dphi_dt, grad_psi=grad_psi,
                grad_phi=grad_phi, lap_phi=lap_phi)


def check_resolution(grid: Grid, ws: CarlemanWeightSet, times, phi=None):
    """Refuse when ``s * phi`` jumps by more than ln(1e6) between neighbouring nodes.

    Only pairs where the (globally rescaled) weight is above ``RELEVANT_WEIGHT``
    are inspected.  Raises :class:`UnderResolvedError` carrying the estimated
    node count (space) or sample count (time) that would pass.
    """
    if phi is None:
        phi = _weight_fields(grid, ws, times)["phi"]
    lw = -ws.s * phi
    lw = lw - lw.max()
    relevant = lw > np.log(RELEVANT_WEIGHT)
    worst_axis, worst = None, 0.0
    for ax in range(lw.ndim):
        jump = np.abs(np.diff(lw, axis=ax))
        a = [slice(None)] * lw.ndim
        b = [slice(None)] * lw.ndim
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        mask = relevant[tuple(a)] | relevant[tuple(b)]
        if mask.any():
            j = float(jump[mask].max())
            if j > worst:
                worst, worst_axis = j, ax
    if worst > WEIGHT_JUMP_LIMIT:
        factor = worst / WEIGHT_JUMP_LIMIT
        if worst_axis == 0:
            required = int(np.ceil(len(times) * factor)) + 1
            what = "time samples"
        else:
            required = int(np.ceil((grid.points[worst_axis - 1] + 1) * factor))
            what = f"nodes along axis {worst_axis - 1}"
        raise UnderResolvedError(
            f"weight exp(-s phi) with s={ws.s} varies by exp({worst:.1f}) across one cell; "
            f"need about {required} {what}",
            required,
        )
    return worst


def _sweep_times(T1, n_times):
    """Midpoint samples of (-T1, T1) and their quadrature weight."""
    dt = 2 * T1 / n_times
    return -T1 + dt * (np.arange(n_times) + 0.5), dt


def carleman_terms(op: SpectralOperator, ws: CarlemanWeightSet, member: ManufacturedField,
                   n_times=2000, bands=None):
    """All weighted norms entering the two Schrodinger estimates for one field.

    Returns a dict of squared norms (with the common global rescaling).
    ``bands = (c1, c2)`` with ``c2 < c1`` sets the collars used for the interior
    estimate: the interior region is ``dist >= c1`` and the band is
    ``c2 <= dist < c1``.
    """
    grid = op.grid
    times, dtq = _sweep_times(ws.T1, n_times)
    wf = _weight_fields(grid, ws, times)
    check_resolution(grid, ws, times, wf["phi"])
    lw = -ws.s * wf["phi"]
    W = np.exp(lw - lw.max())
    Wi = grid.unpad(W)
    u = member.value(times)
    du = member.rate(times)
    s, lam = ws.s, ws.lam
    cell = grid.cell_volume
    quad = grid.padded_quadrature()
    sp = tuple(range(1, 1 + grid.dim))

    def inner_norm(a, mask=None):
        vals = np.abs(a) ** 2
        if mask is not None:
            vals = vals * mask
        return float(dtq * cell * np.sum(vals))

    def padded_norm(a, mask=None):
        vals = np.abs(a) ** 2 * quad
        if mask is not None:
            vals = vals * mask
        return float(dtq * np.sum(vals))

    w = Wi * u
    dphi_i = grid.unpad(wf["dphi_dt"])
    gphi_i = [grid.unpad(g) for g in wf["grad_phi"]]
    lap_phi_i = grid.unpad(wf["lap_phi"])
    grad_phi_sq = sum(g**2 for g in gphi_i)
    dw = Wi * (du - s * dphi_i * u)
    lap_w = laplacian(grid, w)
    grad_w = [grid.unpad(g) for g in gradient(grid, w)]
    R1 = 1j * dw + lap_w + s**2 * grad_phi_sq * w
    R2 = 1j * s * dphi_i * w + 2 * s * sum(g * gw for g, gw in zip(gphi_i, grad_w)) + s * lap_phi_i * w
    Lu = 1j * du + laplacian(grid, u) + op.potential * u
    grad_u = gradient(grid, u)
    Wgrad = [W * g for g in grad_u]

    out = {
        "weighted_u": inner_norm(w),
        "weighted_grad": sum(padded_norm(g) for g in Wgrad),
        "R1": inner_norm(R1),
        "R2": inner_norm(R2),
        "Lu": inner_norm(Wi * Lu),
    }
    # boundary term over the facets where grad(psi).nu >= 0
    normals = grid.facet_normals
    gpsi_dot_nu = 2 * np.sum((grid.facet_coords - np.asarray(ws.x0)) * normals, axis=1)
    gamma1 = np.nonzero(gpsi_dot_nu >= 0)[0]
    dnu = normal_derivative(grid, u, gamma1)
    fidx = tuple(grid.facet_index[gamma1].T)
    theta_b = wf["theta"][(slice(None),) + fidx]
    W_b = W[(slice(None),) + fidx]
    out["boundary"] = float(
        dtq * np.sum(theta_b * W_b**2 * np.abs(dnu) ** 2 * gpsi_dot_nu[gamma1] * grid.facet_weight[gamma1])
    )
    if bands is not None:
        c1, c2 = bands
        dist = grid.distance_to_boundary(padded_coords(grid).reshape(-1, grid.dim)).reshape(grid.padded_shape)
        interior = (dist >= c1 - 1e-12).astype(float)
        band = ((dist >= c2 - 1e-12) & (dist < c1 - 1e-12)).astype(float)
        Wu = W * grid.pad(u)
        out["interior_u"] = padded_norm(Wu, interior)
        out["interior_grad"] = sum(padded_norm(g, interior) for g in Wgrad)
        out["band_u"] = padded_norm(Wu, band)
        out["band_grad"] = sum(padded_norm(g, band) for g in Wgrad)
    return out


def estimate_sides(terms, s, lam, estimate="full"):
    if estimate == "full":
        lhs = s**3 * lam**4 * terms["weighted_u"] + s * lam * terms["weighted_grad"] + terms["R1"] + terms["R2"]
        rhs = terms["Lu"] + s * lam * terms["boundary"]
    elif estimate == "interior":
        lhs = s**3 * lam**4 * terms["interior_u"] + s * lam * terms["interior_grad"]
        rhs = terms["Lu"] + s**3 * lam**4 * terms["band_u"] + s * lam * terms["band_grad"]
    else:
        raise ConfigurationError(f"estimate must be 'full' or 'interior', got {estimate!r}")
    return lhs, rhs


def carleman_ratio_sweep(
    op: SpectralOperator,
    x0,
    lam,
    T1,
    s_values,
    suite,
    estimate="full",
    n_times=2000,
    bands=None,
) -> RatioTable:
    """LHS/RHS of the chosen weighted estimate for every (s, member) pair."""
    if estimate == "interior" and bands is None:
        c = op.grid.collar_width
        bands = (2 * c / 3, c / 3)
    table = RatioTable(estimate)
    for s in s_values:
        ws = make_weight_set(op.grid, x0, lam, s, T1)
        for member in suite:
            terms = carleman_terms(op, ws, member, n_times, bands if estimate == "interior" else None)
            lhs, rhs = estimate_sides(terms, s, lam, estimate)
            table.rows.append(RatioRow(float(s), float(lam), member.name, lhs, rhs))
    return table


def find_s0(op, x0, lam, T1, suite, candidates, estimate="full", n_times=2000, ladder=(1, 2, 4, 8)):
    """Smallest candidate s0 for which the ladder ``s0 * ladder`` passes the ratio checks.

    Returns ``(s0, table)``; ``s0`` is None when no candidate passes.
    """
    last = None
    for s0 in sorted(candidates):
        table = carleman_ratio_sweep(op, x0, lam, T1, [s0 * m for m in ladder], suite, estimate, n_times)
        last = table
        if table.passed:
            return float(s0), table
    return None, last


# energy identity -------------------------------------------------------------------


@dataclass
class EnergyIdentity:
    s: float
    lhs: float
    rhs: float

    @property
    def relative_error(self) -> float:
        return abs(self.lhs - self.rhs) / abs(self.rhs) if self.rhs else abs(self.lhs)


def energy_identity(rsys, x0, lam, s, T1=None) -> EnergyIdentity:
    """Compare Im of the weighted R1 pairing over (-T, 0) with half the weighted norm at t = 0.

    ``rsys`` is a :class:`linearization.RSystem`; d_t r comes from the equation.
    The time integral uses Simpson's rule on the stored samples; the weight is
    zero at t = -T1.  The spatially varying weight couples eigenmodes, so the
    integrand oscillates with the spread of the eigenvalues; the time step must
    keep that phase step below ``MAX_PHASE_STEP``.
    """
    grid = rsys.op.grid
    traj = rsys.r
    mu = rsys.op.eigenvalues
    phase_step = float((mu[-1] - mu[0]) * traj.dt)
    if phase_step > MAX_PHASE_STEP:
        required = int(np.ceil((traj.times[-1] - traj.times[0]) * (mu[-1] - mu[0]) / MAX_PHASE_STEP)) + 1
        raise UnderResolvedError(
            f"time step {traj.dt:.3g} leaves a phase step of {phase_step:.2f} between modes; "
            f"need about {required} time samples",
            required,
        )
    T = float(traj.times[-1])
    T1 = T if T1 is None else float(T1)
    ws = make_weight_set(grid, x0, lam, s, T1)
    keep = traj.times <= 1e-12
    times = traj.times[keep]
    r = traj.values[keep]
    dr = rsys.dr_dt()[keep]
    inside = np.abs(times) < T1 * (1 - 1e-14)
    t_safe = np.where(inside, times, 0.0)
    x = grid.coords
    psi, theta, phi = evaluate_weights(ws, x[None, :, :], t_safe[:, None])
    lw = np.where(inside[:, None], -s * phi, -np.inf)
    shift = np.max(lw)
    W = np.exp(lw - shift)
    denom = (T1**2 - t_safe**2)[:, None]
    dphi = np.where(inside[:, None], 2 * t_safe[:, None] * phi / denom, 0.0)
    gpsi = 2 * (x - np.asarray(ws.x0))
    e = np.exp(lam * psi)
    grad_phi_sq = np.where(inside[:, None], lam**2 * np.sum(gpsi**2, axis=-1) * e**2 / denom**2, 0.0)
    w = W * r
    dw = W * (dr - s * dphi * r)
    R1w = 1j * dw + laplacian(grid, w) + s**2 * grad_phi_sq * w
    integrand = grid.cell_volume * np.sum(R1w * np.conj(w), axis=-1).imag
    lhs = float(simpson(integrand, x=times))
    i0 = int(np.argmin(np.abs(times)))
    rhs = 0.5 * grid.cell_volume * float(np.sum(W[i0] ** 2 * np.abs(r[i0]) ** 2))
    return EnergyIdentity(float(s), lhs, rhs)


# parabolic weights -------------------------------------------------------------------


def parabolic_chain_ok(psi_max, a, b) -> bool:
    return psi_max <= a < b < 2 * a - psi_max


@dataclass
class ParabolicWeightSet:
    """Weights on the collar built from a profile psi0 vanishing on the collar boundary minus Gamma."""

    grid: Grid
    gamma_facets: np.ndarray
    psi0: np.ndarray  # values on all interior nodes, zero outside the collar
    psi_max: float
    a: float
    b: float
    lam: float
    sigma: float
    h: float
    kappa: float
    conditions: dict
    profile: object = field(repr=False, default=None)

    def theta0(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.exp(self.lam * self.psi0) / (1 - tau[..., None] ** 2)

    def phi0(self, tau):
        tau = np.asarray(tau, dtype=float)
        num = np.exp(self.lam * (self.psi_max + self.b)) - np.exp(self.lam * (self.psi0 + self.a))
        return num / (1 - tau[..., None] ** 2)

    @property
    def all_conditions_hold(self) -> bool:
        return all(self.conditions.values())


def _collar_profile(grid: Grid, gamma_facets, power=4):
    """psi0(x) before normalization: a smooth minimum of the distances to the
    inner collar boundary and to the boundary nodes outside Gamma."""
    c = grid.collar_width
    lo = np.full(grid.dim, c)
    hi = np.asarray(grid.extent) - c
    mask = np.ones(len(grid.facet_axis), dtype=bool)
    mask[np.asarray(gamma_facets, dtype=int)] = False
    others = grid.facet_coords[mask]

    def profile(x):
        x = np.atleast_2d(x)
        d_inner = np.linalg.norm(x - np.clip(x, lo, hi), axis=1)
        parts = [d_inner]
        if len(others):
            diff = x[:, None, :] - others[None, :, :]
            parts.append(np.min(np.linalg.norm(diff, axis=2), axis=1))
        with np.errstate(divide="ignore"):
            inv = sum(np.where(p > 0, p, 0.0) ** (-power) for p in parts)
        return np.where(np.isinf(inv), 0.0, inv ** (-1.0 / power))

    return profile


def build_parabolic_weights(grid: Grid, gamma_facets, a, b, lam, sigma=1.0, h=0.5, power=4):
    """Collar weights for the parabolic estimate.

    The profile is normalized to ``||psi0||_inf = 1`` over the collar.  Each of
    the four structural conditions is checked on the grid and reported in
    ``conditions``; an inadmissible ``(a, b)`` raises.
    """
    gamma_facets = np.asarray(gamma_facets, dtype=int)
    if len(gamma_facets) == 0:
        raise ConfigurationError("Gamma must contain at least one boundary facet")
    if not 0 < h < 1:
        raise ConfigurationError("h must lie in (0, 1)")
    raw = _collar_profile(grid, gamma_facets, power)
    col = grid.collar
    vals = raw(grid.coords[col])
    scale = float(vals.max())
    if scale <= 0:
        raise ConfigurationError("collar profile vanishes identically")

    def profile(x):
        return raw(x) / scale

    psi_max = 1.0
    if not parabolic_chain_ok(psi_max, a, b):
        raise ConfigurationError(
            f"need ||psi0|| <= a < b < 2a - ||psi0||; got ||psi0||={psi_max}, a={a}, b={b}"
        )
    psi0 = np.zeros(grid.n)
    psi0[col] = vals / scale
    conditions = _check_profile(grid, gamma_facets, profile)
    c = grid.collar_width
    dist = grid.distance_to_boundary(grid.coords)
    band = (dist >= c / 3) & (dist < 2 * c / 3)
    kappa = 0.5 * float(profile(grid.coords[band]).min()) if band.any() else float("nan")
    return ParabolicWeightSet(grid, gamma_facets, psi0, psi_max, float(a), float(b), float(lam),
                              float(sigma), float(h), kappa, conditions, profile)


def _check_profile(grid, gamma_facets, profile, rel_step=1e-4):
    c = grid.collar_width
    col = grid.collar
    xs = grid.coords[col]
    step = rel_step * min(grid.spacing)
    positive = bool(np.all(profile(xs) > 0))
    # gradient magnitude on the collar nodes by centered differences of the formula
    grads = np.zeros_like(xs)
    for a in range(grid.dim):
        e = np.zeros(grid.dim)
        e[a] = step
        grads[:, a] = (profile(xs + e) - profile(xs - e)) / (2 * step)
    gmag = np.linalg.norm(grads, axis=1)
    # points of the collar boundary outside Gamma: boundary facets not in Gamma and the inner interface
    mask = np.ones(len(grid.facet_axis), dtype=bool)
    mask[gamma_facets] = False
    pts, normals = [grid.facet_coords[mask]], [grid.facet_normals[mask]]
    for a in range(grid.dim):
        for side, level in ((-1, c), (1, grid.extent[a] - c)):
            # interface of the collar, outward normal of the collar points into the inner region
            sel = np.abs(xs[:, a] - level) <= grid.spacing[a] / 2 + 1e-12
            if sel.any():
                p = xs[sel].copy()
                p[:, a] = level
                n = np.zeros_like(p)
                n[:, a] = -side
                inner_ok = np.all(
                    [(p[:, b] >= c - 1e-12) & (p[:, b] <= grid.extent[b] - c + 1e-12)
                     for b in range(grid.dim) if b != a] or [np.ones(len(p), bool)],
                    axis=0,
                )
                pts.append(p[inner_ok])
                normals.append(n[inner_ok])
    pts = np.concatenate(pts)
    normals = np.concatenate(normals)
    on_boundary = profile(pts) if len(pts) else np.zeros(0)
    zero_ok = bool(np.all(np.abs(on_boundary) <= 1e-12))
    # one-sided difference from inside the collar
    dn = (profile(pts) - profile(pts - step * normals)) / step if len(pts) else np.zeros(0)
    return {
        "positive_inside": positive,
        "gradient_nonvanishing": bool(gmag.min() > 1e-3),
        "zero_off_gamma": zero_ok,
        "normal_derivative_nonpositive": bool(np.all(dn <= 1e-9)),
    }


# FBI transform -----------------------------------------------------------------------


def smooth_cutoff(eta, plateau, support):
    """C^2 cutoff: 1 on |eta| <= plateau, 0 on |eta| >= support (quintic smoothstep)."""
    x = (np.abs(np.asarray(eta, dtype=float)) - plateau) / (support - plateau)
    x = np.clip(x, 0.0, 1.0)
    return 1.0 - x**3 * (10 - 15 * x + 6 * x**2)


@dataclass(frozen=True)
class FbiConfig:
    gamma: float
    T: float
    T0: float = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        T0 = 1.2 * self.T if self.T0 is None else float(self.T0)
        if not T0 > self.T > 0:
            raise ConfigurationError(f"need T0 > T > 0, got T0={T0}, T={self.T}")
        object.__setattr__(self, "T0", T0)

    @property
    def h(self) -> float:
        return self.T / (3 * self.T0)

    @property
    def plateau(self) -> float:
        return 2 * self.T0

    @property
    def support(self) -> float:
        return 3 * self.T0

    def cutoff(self, eta):
        return smooth_cutoff(eta, self.plateau, self.support)


def _fbi_nodes(times, cfg: FbiConfig):
    T = cfg.T
    if times[0] > -T + 1e-9 * T or times[-1] < T - 1e-9 * T:
        raise ConfigurationError("trajectory must cover [-T, T]")
    eta = times / cfg.h
    d_eta = (eta[-1] - eta[0]) / (len(eta) - 1)
    limit = 1.0 / (8.0 * np.sqrt(cfg.gamma))
    if d_eta > limit * (1 + 1e-12):
        required = int(np.ceil((eta[-1] - eta[0]) / limit)) + 1
        raise UnderResolvedError(
            f"eta spacing {d_eta:.3g} does not resolve the Gaussian width for gamma={cfg.gamma}; "
            f"need at least {required} time samples",
            required,
        )
    wq = np.full(len(eta), d_eta)
    wq[[0, -1]] *= 0.5
    return eta, wq


def fbi_transform(traj, cfg: FbiConfig, tau, eta_eval=None):
    """Evaluate ``sqrt(gamma/2pi) int exp(-(gamma/2)(z - eta)^2) cutoff(eta) w(x, eta h) d eta``.

    ``z = eta_eval - i tau``; ``eta_eval`` defaults to the sample nodes ``t/h``.
    Returns ``(eta_eval, values)`` with ``values`` of shape ``(len(eta_eval), n)``.
    """
    if not -1 < tau < 1:
        raise ConfigurationError("tau must lie in (-1, 1)")
    eta, wq = _fbi_nodes(traj.times, cfg)
    eta_eval = eta if eta_eval is None else np.asarray(eta_eval, dtype=float)
    z = eta_eval - 1j * tau
    g = cfg.gamma
    kernel = np.sqrt(g / (2 * np.pi)) * np.exp(-(g / 2) * (z[:, None] - eta[None, :]) ** 2)
    weighted = (wq * cfg.cutoff(eta))[:, None] * traj.values
    return eta_eval, kernel @ weighted


def cauchy_riemann_residual(traj, cfg: FbiConfig, tau, eta_points, step=None):
    """max |dF/dtau + i dF/dt| / max |dF/dt| with fourth-order central differences."""
    step = 0.02 / np.sqrt(cfg.gamma) if step is None else step
    eta_points = np.asarray(eta_points, dtype=float)
    c = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * step)
    offs = np.array([-2, -1, 1, 2]) * step
    dt = sum(ci * fbi_transform(traj, cfg, tau, eta_points + o)[1] for ci, o in zip(c, offs))
    dtau = sum(ci * fbi_transform(traj, cfg, tau + o, eta_points)[1] for ci, o in zip(c, offs))
    scale = np.max(np.abs(dt))
    return float(np.max(np.abs(dtau + 1j * dt)) / scale) if scale > 0 else 0.0


@dataclass
class KernelBoundReport:
    gammas: list
    maxima: list
    threshold: float
    zeta_points: int

    @property
    def constant(self) -> float:
        return max(self.maxima)

    @property
    def passed(self) -> bool:
        return self.constant <= self.threshold


def kernel_defect(gamma, zeta):
    """|1 - K_hat(zeta)|^2 for the unit-mass Gaussian, K_hat = exp(-zeta^2 / (2 gamma))."""
    return (1.0 - np.exp(-np.asarray(zeta, dtype=float) ** 2 / (2 * gamma))) ** 2


def fbi_kernel_bound_check(gammas, zeta_points=4001, threshold=0.5) -> KernelBoundReport:
    """max over zeta^2 <= 4 gamma of |1 - K_hat|^2 gamma / zeta^2 for each gamma."""
    maxima = []
    for g in gammas:
        zeta = np.linspace(0.0, 2 * np.sqrt(g), zeta_points)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(zeta > 0, kernel_defect(g, zeta) * g / zeta**2, 0.0)
        maxima.append(float(q.max()))
    return KernelBoundReport(list(gammas), maxima, float(threshold), zeta_points)

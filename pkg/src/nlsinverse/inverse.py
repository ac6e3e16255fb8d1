"""Synthetic boundary measurements and empirical stability laws.

Measurements are Neumann traces of ``r``, the time derivative of the
difference of variations for two coefficient sets.  The size of a measurement
on a boundary piece ``S`` is

    delta_S = ( int_0^T sum_{facets in S} w |d_nu r|^2 dt )^(1/2)

with the facet weights of the grid and the trapezoid rule in time.  It is
computed along two routes:

* fast: the linearized system for ``r`` (:func:`linearization.time_derivative_solution`);
* full: nonlinear solves, their time derivatives from the differentiated
  nonlinear equation, and difference quotients in the data size.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .carleman import FbiConfig, energy_identity, fbi_transform
from .errors import ConfigurationError, HypothesisViolation, PicardDivergenceError
from .forward import SolveConfig, duhamel_modes, solve_nonlinear
from .linearization import difference_quotient, time_derivative_solution
from .nonlinearity import NonlinearitySpec, evaluate, leading_term, partial_derivatives
from .records import render_table
from .spectral import (
    Grid,
    SpectralOperator,
    Trajectory,
    as_values,
    eigendecompose,
    gradient,
    normal_derivative,
    sobolev_norm,
)

log = logging.getLogger(__name__)

MODES = ("recover-p", "recover-q", "partial-data-p", "partial-data-q")


# boundary pieces -------------------------------------------------------------


@dataclass(frozen=True)
class BoundarySelection:
    """A set of boundary facets, either the ``gamma0`` set of a point or explicit."""

    grid: Grid
    facets: np.ndarray
    mode: str = "explicit"
    x0: tuple = None

    def __post_init__(self):
        facets = np.unique(np.asarray(self.facets, dtype=int))
        if facets.size == 0:
            raise ConfigurationError("boundary selection is empty")
        nf = len(self.grid.facet_axis)
        if facets.min() < 0 or facets.max() >= nf:
            bad = facets[(facets < 0) | (facets >= nf)]
            raise ConfigurationError(f"facet indices {bad.tolist()} are not on the boundary (0..{nf - 1})")
        object.__setattr__(self, "facets", facets)

    def __len__(self):
        return len(self.facets)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.facet_weight[self.facets]

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def subset(self, fraction) -> "BoundarySelection":
        """Leading contiguous block holding ``ceil(fraction * len)`` facets (at least one)."""
        if not 0 < fraction <= 1:
            raise ConfigurationError("fraction must lie in (0, 1]")
        m = max(1, int(np.ceil(fraction * len(self.facets) - 1e-9)))
        return BoundarySelection(self.grid, self.facets[:m], "explicit", self.x0)


def gamma0_selection(grid: Grid, x0) -> BoundarySelection:
    """Facets with ``(x - x0) . nu(x) >= 0``."""
    x0 = np.asarray(x0, dtype=float).reshape(grid.dim)
    dots = np.sum((grid.facet_coords - x0) * grid.facet_normals, axis=1)
    return BoundarySelection(grid, np.nonzero(dots >= 0)[0], "gamma0", tuple(x0.tolist()))


def explicit_selection(grid: Grid, facets) -> BoundarySelection:
    return BoundarySelection(grid, facets, "explicit")


# measurements -------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementSeries:
    selection: BoundarySelection
    times: np.ndarray
    values: np.ndarray  # (len(times), len(selection))

    @property
    def delta(self) -> float:
        dens = np.abs(self.values) ** 2 @ self.selection.weights
        if len(self.times) < 2:
            return 0.0
        return float(np.sqrt(max(np.trapezoid(dens, self.times), 0.0)))


def neumann_trace(traj: Trajectory, selection: BoundarySelection) -> MeasurementSeries:
    """Normal derivative on ``selection`` at the samples with ``t >= 0``."""
    if selection.grid is not traj.grid and selection.grid.metadata() != traj.grid.metadata():
        raise ConfigurationError("selection and trajectory live on different grids")
    keep = traj.times >= -1e-12 * max(1.0, abs(traj.times[-1]))
    vals = normal_derivative(traj.grid, traj.values[keep], selection.facets)
    return MeasurementSeries(selection, traj.times[keep], vals)


def off_collar_norm(grid: Grid, values) -> float:
    """Discrete L2 norm over the nodes outside the collar."""
    v = np.asarray(values)[~grid.collar]
    return float(np.sqrt(grid.cell_volume * np.sum(np.abs(v) ** 2)))


# hypotheses ---------------------------------------------------------------


def check_hypotheses(grid: Grid, f, perturbations, gamma_minus=None, gamma_plus=None) -> dict:
    """Check support off the collar, ``|f| >= gamma_minus`` off the collar and ``||f||_H4 <= gamma_plus``.

    Returns the measured bounds.  Raises :class:`HypothesisViolation` naming the nodes.
    """
    f = np.asarray(f)
    for name, pert in perturbations:
        bad = np.nonzero(grid.collar & (np.abs(pert) > 0))[0]
        if len(bad):
            raise HypothesisViolation(
                f"perturbation {name!r} does not vanish on the collar ({len(bad)} node(s))", bad
            )
    inner = ~grid.collar
    fmin = float(np.min(np.abs(f[inner])))
    f_h4 = float(sobolev_norm(f, grid, 4))
    if gamma_minus is None:
        if fmin <= 0:
            bad = np.nonzero(inner & (np.abs(f) == 0))[0]
            raise HypothesisViolation("f vanishes off the collar", bad)
    elif fmin < gamma_minus:
        bad = np.nonzero(inner & (np.abs(f) < gamma_minus))[0]
        raise HypothesisViolation(f"|f| drops below gamma_minus={gamma_minus} off the collar", bad)
    if gamma_plus is not None and f_h4 > gamma_plus:
        raise HypothesisViolation(f"||f||_H4 = {f_h4:.4g} exceeds gamma_plus={gamma_plus}", np.array([], int))
    return {"gamma_minus": fmin, "f_h4": f_h4}


# reports -------------------------------------------------------------------


@dataclass
class MemberResult:
    member_id: str
    pert_norm: float
    delta: float
    delta_full: float = float("nan")
    law_value: float = float("nan")  # the measurement entering the law (delta or L(delta))
    note: str = ""

    @property
    def degenerate(self) -> bool:
        return self.pert_norm == 0

    @property
    def ratio(self) -> float:
        if self.degenerate or not self.law_value > 0:
            return float("nan")
        return self.pert_norm / self.law_value

    @property
    def agreement(self) -> float:
        if not np.isfinite(self.delta_full):
            return float("nan")
        return abs(self.delta_full - self.delta) / self.delta if self.delta > 0 else abs(self.delta_full)


@dataclass
class StabilityReport:
    """Per-member measurements and the single fitted constant of a stability law."""

    mode: str
    members: list
    metadata: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    agreement_tol: float = 0.05

    @property
    def constant(self) -> float:
        r = [m.ratio for m in self.members if np.isfinite(m.ratio)]
        return float(max(r)) if r else float("nan")

    def member_passed(self, m: MemberResult) -> bool:
        if m.degenerate:
            return True  # skipped, not fitted
        if not np.isfinite(m.ratio):
            return False
        if np.isfinite(m.agreement) and m.agreement > self.agreement_tol:
            return False
        return m.pert_norm <= self.constant * m.law_value * (1 + 1e-12)

    @property
    def failures(self) -> list:
        return [m.member_id for m in self.members if not self.member_passed(m)]

    @property
    def passed(self) -> bool:
        nonneg = all(m.pert_norm >= 0 and m.delta >= 0 for m in self.members)
        finite = np.isfinite(self.constant)
        return bool(nonneg and finite and not self.failures and all(self.checks.values()))

    def render(self, manifest=None) -> str:
        rows = [
            [m.member_id, m.pert_norm, m.delta, m.ratio, int(self.member_passed(m))]
            for m in sorted(self.members, key=lambda m: m.member_id)
        ]
        meta = {"mode": self.mode, "constant": self.constant, "passed": self.passed}
        meta.update(self.metadata)
        meta.update({f"check_{k}": v for k, v in sorted(self.checks.items())})
        if manifest is not None:
            meta["manifest"] = manifest
        return render_table("stability", ["member_id", "pert_norm", "delta", "ratio", "pass"], rows, meta)


# fast and full measurements ---------------------------------------------------


def _operator_for(op: SpectralOperator, potential):
    if np.array_equal(potential, op.potential):
        return op
    return eigendecompose(op.grid, potential)


def free_rate_difference(op1: SpectralOperator, op2: SpectralOperator, f, times) -> Trajectory:
    """``d_t (e^{tA_1} f - e^{tA_2} f)`` evaluated mode by mode.

    This is the closed-form solution of the p-mode system for ``r``; it needs no
    time stepping, so it stays exact when ``e^{tA_2} f`` carries fast modes.
    """
    f = np.asarray(f, dtype=complex)
    parts = []
    for op in (op1, op2):
        c = op.to_modes(f) * op.phases(times)
        parts.append(op.from_modes(-1j * op.eigenvalues * c))
    return Trajectory(np.asarray(times), parts[0] - parts[1], op1.grid)


def fast_rate(kind, op, f, pert, cfg, spec=None, q_base=None, op_pert=None) -> Trajectory:
    """``r`` on ``[-T, T]`` from the linearized problems.

    ``kind`` is ``"p"`` (``p1 = p + pert``, ``p2 = p``; closed form) or ``"q"``
    (``q1 = q_base + pert``, ``q2 = q_base``; the q-mode system for ``r``).
    """
    if kind == "q":
        qb = np.zeros(op.grid.n) if q_base is None else as_values(q_base)
        return time_derivative_solution(op, f, cfg, "q", spec, qb + pert, qb).r
    if kind == "p":
        op1 = op_pert if op_pert is not None else _operator_for(op, op.potential + pert)
        times = cfg.times if cfg.symmetric else cfg.replace(symmetric=True).times
        return free_rate_difference(op1, op, f, times)
    raise ConfigurationError(f"kind must be 'p' or 'q', got {kind!r}")


def fast_delta(kind, op, f, pert, selection, cfg, spec=None, q_base=None, op_pert=None):
    """delta from :func:`fast_rate`.  Returns ``(delta, r)``."""
    r = fast_rate(kind, op, f, pert, cfg, spec, q_base, op_pert)
    return neumann_trace(r, selection).delta, r


def rate_of_solution(op, spec, q, u, cfg, tol=None, max_iter=None):
    """``v = d_t u`` for a nonlinear solution ``u`` by solving the differentiated equation.

    ``(i d_t + Laplacian + p) v = -q (N_1(u) v + N_2(u) conj v)`` with
    ``v(0) = -i A u(0) + i q N(u(0))``, where ``N_1, N_2`` are the partial
    derivatives of the series.  Picard iteration on the Duhamel form, stopped
    like :func:`forward.solve_nonlinear`.
    """
    times = cfg.times
    tol = cfg.picard_tol if tol is None else tol
    max_iter = cfg.picard_max_iter if max_iter is None else max_iter
    q = as_values(q)
    u0 = u[int(np.argmin(np.abs(times)))]
    v0 = -1j * op.apply(u0) + 1j * q * evaluate(spec, u0, np.conj(u0))
    n1, n2 = partial_derivatives(spec, u, np.conj(u))
    n1, n2 = q * n1, q * n2
    free = op.from_modes(op.to_modes(v0) * op.phases(times))
    scale = max(float(np.max(op.grid.l2_norm(free))), 1e-300)
    zero = np.zeros(op.grid.n, dtype=complex)
    w = np.zeros_like(free)
    for _ in range(max_iter):
        v = free + w
        src = -(n1 * v + n2 * np.conj(v))
        w_new = op.from_modes(duhamel_modes(op, zero, op.to_modes(src), times, cfg.rule))
        d = float(np.max(op.grid.l2_norm(w_new - w)))
        w = w_new
        if not np.isfinite(d):
            break
        if d <= tol * scale:
            return free + w
    raise PicardDivergenceError("differentiated equation did not converge", None)


def _rate_quotient(op, spec, q, f, order, eps, cfg):
    """Order-``order`` quotient in the data size of ``d_t u`` from nonlinear solves."""

    def rate(scale):
        if scale == 0:
            return np.zeros((len(cfg.times), op.grid.n), dtype=complex)
        traj, _ = solve_nonlinear(op, spec, q, scale * f, cfg)
        return rate_of_solution(op, spec, q, traj.values, cfg)

    return difference_quotient(rate, order, eps)


def full_delta(kind, op, f, pert, selection, cfg, spec, q_base, eps, op_pert=None):
    """delta from nonlinear solves on ``[0, T]`` and difference quotients in the data size."""
    cfg = cfg.replace(symmetric=False)
    f = np.asarray(f, dtype=complex)
    qb = np.zeros(op.grid.n) if q_base is None else as_values(q_base)
    if kind == "q":
        a = _rate_quotient(op, spec, qb + pert, f, spec.k, eps, cfg)
        b = _rate_quotient(op, spec, qb, f, spec.k, eps, cfg)
    elif kind == "p":
        op1 = op_pert if op_pert is not None else _operator_for(op, op.potential + pert)
        a = _rate_quotient(op1, spec, qb, f, 1, eps, cfg)
        b = _rate_quotient(op, spec, qb, f, 1, eps, cfg)
    else:
        raise ConfigurationError(f"kind must be 'p' or 'q', got {kind!r}")
    trace = normal_derivative(op.grid, a - b, selection.facets)
    return MeasurementSeries(selection, cfg.times, trace).delta


def _kind(mode):
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    return mode[-1]


def stability_experiment(
    mode,
    op: SpectralOperator,
    f,
    family,
    selection: BoundarySelection,
    cfg: SolveConfig,
    spec: NonlinearitySpec = None,
    q_base=None,
    full_eps=None,
    full_members=None,
    gamma_minus=None,
    gamma_plus=None,
    agreement_tol=0.05,
    homogeneity_tol=0.02,
    workers=1,
) -> StabilityReport:
    """Fit ``C`` in ``||perturbation||_{L2 off collar} <= C delta`` over a family.

    ``family`` is a list of ``(member_id, perturbation values)``.  In p-mode the
    perturbation is added to ``op.potential``, in q-mode to ``q_base``.  When
    ``full_eps`` is given the members listed in ``full_members`` (default all)
    are also measured through nonlinear solves and compared with the fast route
    (relative tolerance ``agreement_tol``).  The first nondegenerate member is
    rerun at twice its amplitude to check homogeneity of degree one.
    """
    kind = _kind(mode)
    grid = op.grid
    if kind == "q" and spec is None:
        raise ConfigurationError("q-mode needs a nonlinearity")
    if full_eps is not None and spec is None:
        raise ConfigurationError("the full route needs a nonlinearity")
    family = [(str(name), np.asarray(grid.check(np.asarray(v, dtype=float), name))) for name, v in family]
    if len({n for n, _ in family}) != len(family):
        raise ConfigurationError("family member ids must be unique")
    bounds = check_hypotheses(grid, f, family, gamma_minus, gamma_plus)
    full_set = None if full_members is None else set(full_members)

    def run(item):
        name, pert = item
        pn = off_collar_norm(grid, pert)
        if pn == 0:
            return MemberResult(name, 0.0, 0.0, note="degenerate")
        op1 = _operator_for(op, op.potential + pert) if kind == "p" else None
        d, _ = fast_delta(kind, op, f, pert, selection, cfg, spec, q_base, op1)
        res = MemberResult(name, pn, d, law_value=d)
        if full_eps is not None and (full_set is None or name in full_set):
            res.delta_full = full_delta(kind, op, f, pert, selection, cfg, spec, q_base, full_eps, op1)
        if d == 0:
            res.note = "delta vanished at grid precision"
        return res

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(run, family))
    else:
        members = [run(item) for item in family]
    members.sort(key=lambda m: m.member_id)

    checks = {}
    ref = next((m for m in members if not m.degenerate and m.delta > 0), None)
    meta = {
        "grid": grid.metadata(),
        "T": cfg.T,
        "dt": cfg.dt,
        "rule": cfg.rule,
        "selection_mode": selection.mode,
        "selection_size": len(selection),
        "gamma_minus": bounds["gamma_minus"],
        "f_h4": bounds["f_h4"],
    }
    if ref is not None:
        pert = dict(family)[ref.member_id]
        d2, _ = fast_delta(kind, op, f, 2 * pert, selection, cfg, spec, q_base)
        hom = abs(d2 / (2 * ref.delta) - 1)
        meta["homogeneity_defect"] = hom
        checks["homogeneity"] = bool(hom <= homogeneity_tol)
    if full_eps is not None:
        agree = [m.agreement for m in members if np.isfinite(m.agreement)]
        meta["full_eps"] = full_eps
        meta["max_agreement_defect"] = max(agree) if agree else float("nan")
    return StabilityReport(mode, members, meta, checks, agreement_tol)


def refinement_drift(c_coarse, c_fine) -> float:
    """Relative change of a fitted constant between two grids."""
    return abs(c_fine - c_coarse) / abs(c_coarse)


# partial data ------------------------------------------------------------------------


def log_law(delta):
    """``(|ln delta|^-1 + delta)^(1/2)``; ``nan`` for ``delta <= 0``, ``inf`` at ``delta = 1``."""
    d = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(d > 0, np.sqrt(1.0 / np.abs(np.log(np.where(d > 0, d, 0.5))) + d), np.nan)
    return out if out.ndim else float(out)


@dataclass
class ObservabilityFit:
    """Fit of ``E(gamma) <= C (1/gamma + e^{-mu gamma} + e^{mu gamma} B)`` over a gamma ladder.

    ``E(gamma)`` is the band energy of the FBI transform of ``r`` at ``tau = 0``
    and ``B`` the boundary energy of ``r`` on ``Gamma x (-T, T)``.
    """

    gammas: list
    energies: list
    boundary: float
    C: float
    mu: float

    def bound(self, gamma) -> float:
        g = float(gamma)
        return self.C * (1 / g + np.exp(-self.mu * g) + np.exp(self.mu * g) * self.boundary)

    @property
    def passed(self) -> bool:
        ok = np.isfinite(self.C) and self.C > 0 and np.isfinite(self.mu)
        return bool(ok and all(e <= self.bound(g) * (1 + 1e-9) for g, e in zip(self.gammas, self.energies)))

    def render(self) -> str:
        rows = [[g, e, self.bound(g)] for g, e in zip(self.gammas, self.energies)]
        meta = {"C": self.C, "mu": self.mu, "boundary": self.boundary, "passed": self.passed}
        return render_table("observability", ["gamma", "band_energy", "bound"], rows, meta)


def band_mask(grid: Grid, bands=None) -> np.ndarray:
    c = grid.collar_width
    c1, c2 = (2 * c / 3, c / 3) if bands is None else bands
    dist = grid.distance_to_boundary(grid.coords)
    return (dist >= c2 - 1e-12) & (dist < c1 - 1e-12)


def fbi_band_energy(r: Trajectory, fbi: FbiConfig, T1, bands=None) -> float:
    """Band energy of the transform: int_band int_{|t| < T1} |grad F|^2 + |F|^2."""
    grid = r.grid
    eta = r.times / fbi.h
    keep = np.abs(r.times) <= T1 * (1 + 1e-12)
    _, F = fbi_transform(r, fbi, 0.0, eta[keep])
    mask = band_mask(grid, bands)
    dens = np.abs(F) ** 2
    for g in gradient(grid, F):
        dens = dens + np.abs(grid.unpad(g)) ** 2
    per_t = grid.cell_volume * np.sum(dens[:, mask], axis=1)
    return float(np.trapezoid(per_t, r.times[keep]))


def boundary_energy(r: Trajectory, selection: BoundarySelection) -> float:
    """int_{-T}^{T} sum_S w |d_nu r|^2 dt."""
    vals = normal_derivative(r.grid, r.values, selection.facets)
    return float(np.trapezoid(np.abs(vals) ** 2 @ selection.weights, r.times))


def fit_observability(gammas, energies, boundary, mu_grid=None) -> ObservabilityFit:
    """Uniform ``(C, mu)`` over the ladder with the least total slack.

    For each ``mu`` on the grid (default ``[0, 5 / min gamma]``) the smallest
    admissible constant is ``C(mu) = max_gamma E / (1/gamma + e^{-mu gamma} + e^{mu gamma} B)``;
    the chosen ``mu`` minimizes ``sum_gamma log(bound / E)``.  Minimizing ``C``
    alone is degenerate since ``e^{mu gamma} B`` grows without bound in ``mu``.
    """
    gammas = np.asarray([float(g) for g in gammas])
    energies = np.asarray([float(e) for e in energies])
    mu_grid = np.linspace(0.0, 5.0 / gammas.min(), 501) if mu_grid is None else np.asarray(mu_grid)
    best = (np.inf, float("nan"), float("nan"))
    positive = energies > 0
    for mu in mu_grid:
        den = 1 / gammas + np.exp(-mu * gammas) + np.exp(mu * gammas) * boundary
        c = float(np.max(energies / den))
        slack = float(np.sum(np.log(c * den[positive] / energies[positive]))) if positive.any() else 0.0
        if slack < best[0]:
            best = (slack, c, float(mu))
    return ObservabilityFit(gammas.tolist(), energies.tolist(), float(boundary), best[1], best[2])


def observability_experiment(r: Trajectory, selection, gamma_star, T1=None, T0=None, bands=None, ladder=(1, 2, 4)):
    """Band energy of the FBI transform of ``r`` against the ladder ``gamma_star * ladder``."""
    T = float(r.times[-1])
    T1 = T / 2 if T1 is None else T1
    gammas = [gamma_star * m for m in ladder]
    energies = [fbi_band_energy(r, FbiConfig(g, T, T0), T1, bands) for g in gammas]
    return fit_observability(gammas, energies, boundary_energy(r, selection))


@dataclass
class PartialDataReport:
    log_report: StabilityReport
    lipschitz_report: StabilityReport
    dominance: bool
    shrink_fractions: list
    shrink_deltas: list
    observability: ObservabilityFit = None

    @property
    def shrink_monotone(self) -> bool:
        d = self.shrink_deltas
        return all(b <= a * (1 + 1e-12) for a, b in zip(d, d[1:]))

    @property
    def passed(self) -> bool:
        obs = self.observability is None or self.observability.passed
        return bool(self.log_report.passed and self.dominance and self.shrink_monotone and obs)


def partial_data_experiment(
    mode,
    op: SpectralOperator,
    f,
    family,
    gamma: BoundarySelection,
    gamma0: BoundarySelection,
    cfg: SolveConfig,
    spec: NonlinearitySpec = None,
    q_base=None,
    fractions=(1.0, 0.75, 0.5, 0.25),
    gamma_star=None,
    T0=None,
    gamma_minus=None,
    gamma_plus=None,
    workers=1,
) -> PartialDataReport:
    """Fit ``C`` in ``||perturbation|| <= C (|ln delta_Gamma|^-1 + delta_Gamma)^(1/2)``.

    The same family is measured on ``gamma0`` for the Lipschitz law.  As
    functions of ``delta``, the fitted bound ``C_log L(delta)`` must not drop
    below ``C_lip delta`` at any measured value of ``delta`` (on either piece).
    ``delta`` is also tracked on the nested pieces ``gamma0.subset(fraction)`` for the first member.  With
    ``gamma_star`` the observability constants are fitted on the first member.
    A member whose ``delta_Gamma`` vanishes is reported as failed, not raised.
    """
    kind = _kind(mode)
    if not set(gamma.facets) <= set(gamma0.facets) or len(gamma) >= len(gamma0):
        log.warning("Gamma is not a strict subset of the gamma0 set")
    grid = op.grid
    family = [(str(name), np.asarray(v, dtype=float)) for name, v in family]
    bounds = check_hypotheses(grid, f, family, gamma_minus, gamma_plus)
    base = "partial-data-" + kind

    def run(item):
        name, pert = item
        pn = off_collar_norm(grid, pert)
        if pn == 0:
            return None, MemberResult(name, 0.0, 0.0, note="degenerate"), MemberResult(name, 0.0, 0.0)
        op1 = _operator_for(op, op.potential + pert) if kind == "p" else None
        _, rs = fast_delta(kind, op, f, pert, gamma, cfg, spec, q_base, op1)
        d_g = neumann_trace(rs, gamma).delta
        d_0 = neumann_trace(rs, gamma0).delta
        note = "" if d_g > 0 else "delta on Gamma vanished; perturbation invisible at grid precision"
        part = MemberResult(name, pn, d_g, law_value=log_law(d_g) if d_g > 0 else float("nan"), note=note)
        lip = MemberResult(name, pn, d_0, law_value=d_0)
        return rs, part, lip

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, family))
    else:
        results = [run(item) for item in family]
    order = np.argsort([r[1].member_id for r in results], kind="stable")
    results = [results[i] for i in order]
    part = [r[1] for r in results]
    lip = [r[2] for r in results]
    meta = {
        "grid": grid.metadata(),
        "T": cfg.T,
        "dt": cfg.dt,
        "gamma_size": len(gamma),
        "gamma0_size": len(gamma0),
        "gamma_minus": bounds["gamma_minus"],
        "f_h4": bounds["f_h4"],
    }
    log_rep = StabilityReport(base, part, dict(meta))
    lip_rep = StabilityReport("recover-" + kind, lip, dict(meta))
    c_log, c_lip = log_rep.constant, lip_rep.constant
    # compare the two fitted bound functions at every measured delta
    measured = [m.delta for m in part + lip if not m.degenerate and m.delta > 0]
    dominance = bool(measured) and all(
        c_log * log_law(d) >= c_lip * d * (1 - 1e-9) for d in measured
    )
    log_rep.checks["dominates_lipschitz"] = dominance
    log_rep.metadata["lipschitz_constant"] = c_lip

    first = next((r for r in results if r[0] is not None), None)
    fracs, deltas, obs = list(fractions), [], None
    if first is not None:
        rs = first[0]
        deltas = [neumann_trace(rs, gamma0.subset(fr)).delta for fr in fracs]
        if gamma_star is not None:
            obs = observability_experiment(rs, gamma, gamma_star, T0=T0)
            log_rep.metadata["observability_C"] = obs.C
            log_rep.metadata["observability_mu"] = obs.mu
    log_rep.metadata["shrink_deltas"] = deltas
    report = PartialDataReport(log_rep, lip_rep, dominance, fracs, deltas, obs)
    log_rep.checks["shrink_monotone"] = report.shrink_monotone
    return report


# initial identity pipeline ---------------------------------------------------------


@dataclass
class InitialIdentityReport:
    initial_residual: float  # relative, r(., 0) against the closed form
    energy_errors: dict  # s -> relative error of the weighted energy identity
    pert_norm_sq: float
    boundary_sq: float
    bound_ratio: float  # ||q1 - q2||^2 / int_{Gamma0 x (0,T)} |d_nu r|^2
    constant: float = None

    @property
    def bound_ok(self) -> bool:
        if self.pert_norm_sq == 0:
            return True
        if not np.isfinite(self.bound_ratio):
            return False
        return self.constant is None or self.bound_ratio <= self.constant

    def passed(self, initial_tol=1e-12, energy_tol=1e-5) -> bool:
        return bool(
            self.initial_residual <= initial_tol
            and all(e <= energy_tol for e in self.energy_errors.values())
            and self.bound_ok
        )

    def render(self) -> str:
        rows = [[s, e] for s, e in sorted(self.energy_errors.items())]
        meta = {
            "initial_residual": self.initial_residual,
            "pert_norm_sq": self.pert_norm_sq,
            "boundary_sq": self.boundary_sq,
            "bound_ratio": self.bound_ratio,
        }
        return render_table("initial_identity", ["s", "energy_relative_error"], rows, meta)


def initial_identity_pipeline(
    op: SpectralOperator,
    spec: NonlinearitySpec,
    q1,
    q2,
    f,
    cfg: SolveConfig,
    x0,
    lam,
    s_values,
    selection: BoundarySelection = None,
    constant=None,
) -> InitialIdentityReport:
    """Three checks on the q-mode system for ``r``.

    (a) ``r(., 0)`` against ``i (q1 - q2) leading_term(f)``, relative to its norm;
    (b) the weighted energy identity for every ``s`` in ``s_values``;
    (c) ``||q1 - q2||^2`` off the collar against the boundary energy of ``r`` on
        ``selection`` (default the gamma0 set of ``x0``) over ``(0, T)``.
    """
    grid = op.grid
    rs = time_derivative_solution(op, f, cfg, "q", spec, q1, q2)
    closed = 1j * (as_values(q1) - as_values(q2)) * leading_term(spec, np.asarray(f, dtype=complex))
    scale = grid.l2_norm(closed)
    res = grid.l2_norm(rs.r.at_zero() - closed)
    initial = float(res / scale) if scale > 0 else float(res)
    energy = {}
    for s in s_values:
        energy[float(s)] = energy_identity(rs, x0, lam, s).relative_error
    selection = gamma0_selection(grid, x0) if selection is None else selection
    d = neumann_trace(rs.r, selection).delta
    pn = off_collar_norm(grid, as_values(q1) - as_values(q2))
    ratio = pn**2 / d**2 if d > 0 else (0.0 if pn == 0 else float("inf"))
    return InitialIdentityReport(initial, energy, pn**2, d**2, ratio, constant)

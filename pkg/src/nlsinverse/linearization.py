"""Derivatives of the nonlinear flow with respect to the size of the initial data.

Two independent routes are provided and kept separate:

* the linearized problems, solved with :func:`forward.solve_linear`
  (:func:`first_variation`, :func:`kth_variation`);
* finite difference quotients of nonlinear solves with data ``n * eps * f``
  (:func:`difference_quotient_variation`).

The time derivative ``r`` of the difference of k-th variations for two
coefficient sets, which carries the inverse-problem information, is built by
:func:`time_derivative_solution`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ConfigurationError, HypothesisViolation, PicardDivergenceError
from .forward import SolveConfig, c0da_norm, duhamel_modes, solve_linear, solve_nonlinear
from .nonlinearity import NonlinearitySpec, leading_term, leading_term_derivative
from .records import render_table
from .spectral import SpectralOperator, Trajectory, as_values, sobolev_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariationSolution:
    order: int
    trajectory: Trajectory
    p: np.ndarray
    q: np.ndarray
    method: str  # "pde" or "quotient"


def _symmetric(cfg: SolveConfig) -> SolveConfig:
    return cfg if cfg.symmetric else cfg.replace(symmetric=True)


def first_variation(op: SpectralOperator, f, cfg: SolveConfig, q=None) -> VariationSolution:
    """Free evolution ``e^{tA} f`` sampled on ``[-T, T]``."""
    cfg = _symmetric(cfg)
    traj = solve_linear(op, f, None, cfg)
    qv = np.zeros(op.grid.n) if q is None else as_values(q)
    return VariationSolution(1, traj, op.potential, qv, "pde")


def kth_variation(op: SpectralOperator, spec: NonlinearitySpec, q, f, cfg: SolveConfig) -> VariationSolution:
    """Zero-data solution with source ``-q * leading_term(spec, e^{tA} f)``."""
    cfg = _symmetric(cfg)
    qv = as_values(q)
    u1 = first_variation(op, f, cfg).trajectory
    src = -qv * leading_term(spec, u1.values)
    traj = solve_linear(op, np.zeros(op.grid.n), Trajectory(u1.times, src, op.grid), cfg)
    return VariationSolution(spec.k, traj, op.potential, qv, "pde")


def difference_quotient(func, order, eps):
    """``eps**-order * sum_n binom(order, n) (-1)^n func((order - n) * eps)``.

    ``func`` maps a scale to an array (or scalar).  Terms are summed in a fixed
    order so the result does not depend on how the evaluations were scheduled.
    """
    values = [func((order - n) * eps) for n in range(order + 1)]
    return _combine(values, order, eps)


def _combine(values, order, eps):
    total = 0
    for n, val in enumerate(values):
        total = total + comb(order, n) * (-1) ** n * np.asarray(val)
    return total / eps**order


def difference_quotient_variation(
    op: SpectralOperator,
    spec: NonlinearitySpec,
    q,
    f,
    order: int,
    eps: float,
    cfg: SolveConfig,
    radius=None,
    workers: int = 1,
) -> VariationSolution:
    """Order-``order`` difference quotient of nonlinear solves with data scaled by ``eps``.

    The ``order + 1`` nonlinear solves are independent and may run on a thread
    pool (``workers > 1``); the combination is always assembled in index order.
    """
    if order < 1:
        raise ConfigurationError("order must be at least 1")
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    cfg = _symmetric(cfg)
    f = np.asarray(f, dtype=complex)
    qv = as_values(q)
    scales = [(order - n) * eps for n in range(order + 1)]

    def solve(scale):
        if scale == 0:
            return np.zeros((len(cfg.times), op.grid.n), dtype=complex)
        try:
            traj, _ = solve_nonlinear(op, spec, qv, scale * f, cfg, radius=radius)
        except PicardDivergenceError as exc:
            raise PicardDivergenceError(
                f"nonlinear solve failed for eps={eps} (data scale {scale}): {exc}", exc.certificate
            ) from exc
        return traj.values

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(solve, scales))
    else:
        values = [solve(s) for s in scales]
    traj = Trajectory(cfg.times, _combine(values, order, eps), op.grid)
    return VariationSolution(order, traj, op.potential, qv, "quotient")


@dataclass
class ConvergenceReport:
    order: int
    epsilons: np.ndarray
    errors: np.ndarray
    fitted_order: float
    used: int
    monotone: bool
    reference: str

    @property
    def flagged(self) -> bool:
        return not self.monotone

    def pairwise_orders(self) -> np.ndarray:
        e, err = self.epsilons, self.errors
        out = np.full(len(e), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = np.log(err[1:] / err[:-1]) / np.log(e[1:] / e[:-1])
        return out

    def render(self) -> str:
        rows = [
            (e, err, o) for e, err, o in zip(self.epsilons, self.errors, self.pairwise_orders())
        ]
        meta = {
            "order": self.order,
            "reference": self.reference,
            "least_squares_order": self.fitted_order,
            "rungs_used": self.used,
            "monotone": self.monotone,
        }
        return render_table("convergence", ["epsilon", "error", "fitted_order"], rows, meta)


def fit_order(epsilons, errors, floor_factor=0.9):
    """Least-squares log-log slope over the leading rungs that still decrease.

    Returns ``(order, rungs_used, monotone)``.  Rungs are taken in order of
    decreasing epsilon; fitting stops at the first rung whose error fails to drop
    below ``floor_factor`` times the previous one (the discretization floor).
    """
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    idx = np.argsort(-eps)
    eps, err = eps[idx], err[idx]
    used = 1
    while used < len(err) and err[used] < floor_factor * err[used - 1]:
        used += 1
    monotone = bool(np.all(np.diff(err) <= 0))
    if used < 2 or np.any(err[:used] <= 0):
        return float("nan"), used, monotone
    slope = np.polyfit(np.log(eps[:used]), np.log(err[:used]), 1)[0]
    return float(slope), used, monotone


def convergence_study(
    op: SpectralOperator,
    spec: NonlinearitySpec,
    q,
    f,
    order: int,
    eps_ladder,
    cfg: SolveConfig,
    radius=None,
    workers: int = 1,
) -> ConvergenceReport:
    """Errors of the difference quotients against the linearized solutions.

    The reference is the first variation for ``order == 1``, the k-th variation
    for ``order == k`` and zero for ``1 < order < k``.  Errors are measured in
    the discrete C0(D(A)) norm.
    """
    eps_ladder = sorted((float(e) for e in eps_ladder), reverse=True)
    if len(eps_ladder) < 4:
        raise ConfigurationError("an epsilon ladder needs at least 4 rungs")
    ratios = np.array(eps_ladder[1:]) / np.array(eps_ladder[:-1])
    if np.ptp(ratios) > 1e-6 * ratios.mean():
        raise ConfigurationError("epsilon ladder must be geometric")
    if order == 1:
        ref = first_variation(op, f, cfg).trajectory.values
        name = "first_variation"
    elif order == spec.k:
        ref = kth_variation(op, spec, q, f, cfg).trajectory.values
        name = "kth_variation"
    elif 1 < order < spec.k:
        ref = 0.0
        name = "zero"
    else:
        raise ConfigurationError(f"no reference for order {order} > k={spec.k}")
    errors = []
    for eps in eps_ladder:
        quo = difference_quotient_variation(op, spec, q, f, order, eps, cfg, radius, workers)
        errors.append(c0da_norm(op.grid, quo.trajectory.values - ref))
    order_fit, used, monotone = fit_order(eps_ladder, errors)
    return ConvergenceReport(
        order, np.array(eps_ladder), np.array(errors), order_fit, used, monotone, name
    )


# time-differentiated system ------------------------------------------------


@dataclass
class RSystem:
    """Solution ``r`` of ``(i d_t + Laplacian + p) r = v`` on ``[-T, T]``.

    ``mode`` is ``"q"`` (difference of k-th variations for two nonlinear
    coefficients) or ``"p"`` (difference of first variations for two linear
    coefficients).  ``perturbation`` holds ``q1 - q2`` or ``p2 - p1``.
    """

    mode: str
    op: SpectralOperator
    r: Trajectory
    source: Trajectory
    initial: np.ndarray
    perturbation: np.ndarray
    f: np.ndarray
    power: int
    extension: str = "reflect"
    backward_residual: float = field(default=float("nan"))

    def dr_dt(self) -> np.ndarray:
        """d_t r from the equation itself: i (Laplacian + p) r - i v."""
        return -1j * self.op.apply(self.r.values) - 1j * self.source.values

    def initial_defect(self) -> float:
        """L2 distance between r(., 0) and the closed-form initial value."""
        return float(self.op.grid.l2_norm(self.r.at_zero() - self.initial))

    def symmetry_defect(self) -> float:
        """max_t ||r(t) + conj r(-t)|| divided by max_t ||r(t)||."""
        vals = self.r.values
        gap = np.max(self.op.grid.l2_norm(vals + np.conj(vals[::-1])))
        scale = np.max(self.op.grid.l2_norm(vals))
        return float(gap / scale) if scale > 0 else float(gap)


def _check_collar(grid, diff, what):
    bad = np.nonzero(grid.collar & (np.abs(diff) > 0))[0]
    if len(bad):
        raise HypothesisViolation(
            f"{what} must vanish on the collar; violated at {len(bad)} node(s)", bad
        )


def time_derivative_solution(
    op: SpectralOperator,
    f,
    cfg: SolveConfig,
    mode: str = "q",
    spec: NonlinearitySpec = None,
    q1=None,
    q2=None,
    op2: SpectralOperator = None,
    extension: str = "reflect",
) -> RSystem:
    """Build ``r`` on ``[-T, T]``.

    q-mode (``spec``, ``q1``, ``q2``; shared potential ``op``)::

        (i d_t + Laplacian + p) r = d_t g,   g = -(q1 - q2) leading_term(e^{tA} f)
        r(0) = i (q1 - q2) leading_term(f)

    p-mode (``op`` for p1, ``op2`` for p2)::

        (i d_t + Laplacian + p1) r = (p2 - p1) d_t e^{tA_2} f,   r(0) = -i (p2 - p1) f

    With ``extension="reflect"`` the values on ``[-T, 0)`` are ``-conj r(-t)``
    and ``backward_residual`` records their relative distance to a backward
    march of the same equation; ``extension="solve"`` keeps the march itself.
    """
    grid = op.grid
    f = np.asarray(grid.check(f, "f"))
    if np.iscomplexobj(f) and np.any(f.imag != 0):
        raise HypothesisViolation("f must be real-valued for the time-symmetric extension")
    f = np.real(f).astype(float)
    cfg = _symmetric(cfg)
    times = cfg.times
    if mode == "q":
        if spec is None or q1 is None or q2 is None:
            raise ConfigurationError("q-mode needs spec, q1 and q2")
        dq = as_values(q1) - as_values(q2)
        _check_collar(grid, dq, "q1 - q2")
        coef = op.to_modes(f.astype(complex)) * op.phases(times)
        u1 = op.from_modes(coef)
        du1 = op.from_modes(-1j * op.eigenvalues * coef)
        v = -dq * leading_term_derivative(spec, u1, du1)
        r0 = 1j * dq * leading_term(spec, f.astype(complex))
        pert, power, src_op = dq, spec.k, op
    elif mode == "p":
        if op2 is None:
            raise ConfigurationError("p-mode needs the operator for the second potential")
        dp = op2.potential - op.potential
        _check_collar(grid, dp, "p2 - p1")
        coef = op2.to_modes(f.astype(complex)) * op2.phases(times)
        du2 = op2.from_modes(-1j * op2.eigenvalues * coef)
        v = dp * du2
        r0 = -1j * dp * f
        pert, power, src_op = dp, 1, op
    else:
        raise ConfigurationError(f"mode must be 'q' or 'p', got {mode!r}")
    i0 = int(np.argmin(np.abs(times)))
    full = src_op.from_modes(
        duhamel_modes(src_op, src_op.to_modes(r0), src_op.to_modes(v), times, cfg.rule)
    )
    if extension == "solve":
        rv = full
    elif extension == "reflect":
        half = full[i0:]
        rv = np.concatenate([-np.conj(half[:0:-1]), half], axis=0)
    else:
        raise ConfigurationError(f"extension must be 'reflect' or 'solve', got {extension!r}")
    r = Trajectory(times, rv, grid)
    source = Trajectory(times, v, grid)
    sysm = RSystem(mode, src_op, r, source, r0, pert, f, power, extension)
    # the backward half checked against an independent backward march
    scale = max(float(np.max(grid.l2_norm(rv))), 1e-300)
    gap = grid.l2_norm(rv[: i0 + 1] - full[: i0 + 1])
    sysm.backward_residual = float(np.max(gap)) / scale
    return sysm


@dataclass
class EstimateCheck:
    name: str
    constant: float
    violation: float
    ratios: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.constant) and self.violation <= 1.0 + 1e-12)


def estimate_suite(sysm: RSystem, t_samples=None) -> list:
    """Fit C in ||X(t)||_{H^{2j}} <= C ||perturbation||_{H^{m}} ||f||_{H^4}^power.

    X ranges over the source v, r and d_t r (j = 0, 1).  The perturbation norm
    order m is 2j for v and r and 2j + 2 for d_t r.  One constant per estimate
    is fitted as the maximum over the sampled times in ``(0, T)``.
    """
    grid = sysm.op.grid
    times = sysm.r.times
    mask = times > 0
    if t_samples is not None:
        mask &= np.isin(np.round(times, 12), np.round(np.asarray(t_samples), 12))
    fnorm = float(sobolev_norm(sysm.f, grid, 4)) ** sysm.power
    fields = {
        "v": sysm.source.values[mask],
        "r": sysm.r.values[mask],
        "dr_dt": sysm.dr_dt()[mask],
    }
    out = []
    for j in (0, 1):
        for name, vals in fields.items():
            m = 2 * j + (2 if name == "dr_dt" else 0)
            den = float(sobolev_norm(sysm.perturbation, grid, m)) * fnorm
            num = sobolev_norm(vals, grid, 2 * j)
            if den == 0:
                ratios = np.where(num == 0, 0.0, np.inf)
            else:
                ratios = num / den
            const = float(np.max(ratios)) if len(ratios) else 0.0
            viol = float(np.max(ratios) / const) if const > 0 and np.isfinite(const) else 0.0
            out.append(EstimateCheck(f"{name}_H{2 * j}", const, viol, ratios))
    return out

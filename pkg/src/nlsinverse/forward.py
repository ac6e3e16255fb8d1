"""Linear and nonlinear forward solves.

The linear problem ``(i d_t + Laplacian + p) u = g``, ``u(0) = f`` is solved by the
variation of parameters formula

    u(t) = e^{tA} f - i * int_0^t e^{(t-s)A} g(s) ds,

evaluated mode by mode.  Propagation is exact; only the s-integral is
approximated, either by the trapezoid rule on the stored samples or by
integrating the piecewise-linear interpolant of g exactly ("exponential").

The nonlinear problem replaces g by ``-q N(u, conj(u))`` and is solved by Picard
iteration on the whole trajectory.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GridMismatchError, PicardDivergenceError
from .nonlinearity import NonlinearitySpec, evaluate
from .records import render_table
from .spectral import (
    SpectralOperator,
    Trajectory,
    as_values,
    propagate,
    sobolev_norm,
    time_grid,
)

log = logging.getLogger(__name__)

RULES = ("trapezoid", "exponential")


@dataclass(frozen=True)
class SolveConfig:
    """Time grid and iteration controls.

    ``picard_tol`` is relative to the C0(D(A)) norm of the free evolution.
    """

    T: float
    dt: float
    rule: str = "trapezoid"
    picard_tol: float = 1e-13
    picard_max_iter: int = 200
    symmetric: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown quadrature rule {self.rule!r}; choose from {RULES}")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ConfigurationError("picard_max_iter must be at least 1")
        time_grid(self.T, self.dt, self.symmetric)

    @property
    def times(self) -> np.ndarray:
        return time_grid(self.T, self.dt, self.symmetric)

    def replace(self, **changes) -> "SolveConfig":
        from dataclasses import replace

        return replace(self, **changes)


def c0da_norm(grid, values) -> float:
    """max over time samples of the discrete H^2 norm."""
    return float(np.max(sobolev_norm(values, grid, 2)))


# phi functions -------------------------------------------------------------


def _phi12(z):
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2 without cancellation."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 0.2
    zs = np.where(small, z, 1.0)
    ez = np.exp(zs)
    phi1 = (ez - 1) / zs
    phi2 = (ez - 1 - zs) / zs**2
    if np.any(small):
        zt = z[small]
        s1 = np.zeros_like(zt)
        s2 = np.zeros_like(zt)
        term1 = np.ones_like(zt)  # z^j / (j+1)!
        term2 = np.full_like(zt, 0.5)  # z^j / (j+2)!
        for j in range(16):
            s1 += term1
            s2 += term2
            term1 = term1 * zt / (j + 2)
            term2 = term2 * zt / (j + 3)
        phi1[small] = s1
        phi2[small] = s2
    return phi1, phi2


def _step_weights(mu, d, rule):
    """(E, w_cur, w_next) for one signed step ``d`` so that
    c_next = E c_cur - i (w_cur G_cur + w_next G_next)."""
    E = np.exp(-1j * mu * d)
    if rule == "trapezoid":
        return E, 0.5 * d * E, np.full_like(E, 0.5 * d)
    phi1, phi2 = _phi12(-1j * mu * d)
    return E, d * (phi1 - phi2), d * phi2


def duhamel_modes(op: SpectralOperator, c0, G, times, rule="trapezoid"):
    """March modal coefficients from t = 0 outwards.

    Parameters
    ----------
    c0 : (n,) complex
        Modal coefficients at t = 0.
    G : (M, n) complex or None
        Modal coefficients of the source at each sample.
    times : (M,) float
        Uniform grid containing 0.

    Returns
    -------
    (M, n) complex array of coefficients.
    """
    times = np.asarray(times, dtype=float)
    M = len(times)
    dt = (times[-1] - times[0]) / (M - 1)
    i0 = int(np.argmin(np.abs(times)))
    if abs(times[i0]) > 1e-9 * dt:
        raise ConfigurationError("time grid must contain t = 0")
    mu = op.eigenvalues
    out = np.empty((M, len(mu)), dtype=complex)
    out[i0] = c0
    if G is None:
        out[:] = np.exp(-1j * np.multiply.outer(times, mu)) * c0
        return out
    for d, rng in ((dt, range(i0, M - 1)), (-dt, range(i0, 0, -1))):
        E, w_cur, w_next = _step_weights(mu, d, rule)
        step = 1 if d > 0 else -1
        for j in rng:
            out[j + step] = E * out[j] - 1j * (w_cur * G[j] + w_next * G[j + step])
    return out


def solve_linear(op: SpectralOperator, f, g=None, cfg: SolveConfig = None) -> Trajectory:
    """Solve the linear problem with initial value ``f`` and optional source trajectory ``g``."""
    if cfg is None:
        raise ConfigurationError("solve_linear needs a SolveConfig")
    times = cfg.times
    f = np.asarray(op.grid.check(f, "initial value"), dtype=complex)
    if g is None:
        return Trajectory(times, propagate(op, f, times), op.grid)
    gv = g.values if isinstance(g, Trajectory) else np.asarray(g)
    if isinstance(g, Trajectory):
        if g.grid is not op.grid and g.grid.n != op.grid.n:
            raise GridMismatchError("source lives on a different grid")
        if len(g.times) != len(times) or not np.allclose(g.times, times, rtol=0, atol=1e-9 * cfg.dt):
            raise ConfigurationError("source samples are not aligned with the configured time grid")
    elif gv.shape != (len(times), op.grid.n):
        raise ConfigurationError(
            f"source array shape {gv.shape} does not match ({len(times)}, {op.grid.n})"
        )
    coef = duhamel_modes(op, op.to_modes(f), op.to_modes(gv), times, cfg.rule)
    return Trajectory(times, op.from_modes(coef), op.grid)


def pde_residual(op: SpectralOperator, traj: Trajectory, source=None) -> np.ndarray:
    """Discrete residual (i d_t + Laplacian + p) u - g at interior time samples.

    The time derivative is the centered difference, so the residual is
    O(dt^2) for a smooth solution.
    """
    u = traj.values
    dudt = (u[2:] - u[:-2]) / (2 * traj.dt)
    res = 1j * dudt - op.apply(u[1:-1])
    if source is not None:
        gv = source.values if isinstance(source, Trajectory) else np.asarray(source)
        res = res - gv[1:-1]
    return res


# nonlinear ------------------------------------------------------------------


def contraction_radius(spec_or_constants, k_star, c1, T, q_norm, r_max=1e6, shrink=True):
    """Radius of the ball on which the Picard map is a contraction.

    ``r = (C0 C1 (1+C1)^(m0+n0) T K* ||q||)^(-1/(m0+n0-1))``, multiplied by
    ``(2 C1)^(-1/(m0+n0-1))`` when ``shrink`` is set so that the free evolution of
    data inside the returned ball stays in the smaller ball.  The result is capped
    at ``r_max``.

    ``spec_or_constants`` is a :class:`NonlinearitySpec` or a tuple ``(C0, m0, n0)``.
    """
    if isinstance(spec_or_constants, NonlinearitySpec):
        C0, m0, n0 = spec_or_constants.C0, spec_or_constants.m0, spec_or_constants.n0
    else:
        C0, m0, n0 = spec_or_constants
    p = m0 + n0
    if p <= 1:
        raise ConfigurationError("m0 + n0 must exceed 1")
    for name, val in (("C0", C0), ("K*", k_star), ("C1", c1), ("T", T)):
        if not val > 0:
            raise ConfigurationError(f"{name} must be positive, got {val}")
    if q_norm < 0:
        raise ConfigurationError("q_norm must be non-negative")
    if q_norm == 0:
        return float(r_max)
    denom = C0 * c1 * (1 + c1) ** p * T * k_star * q_norm
    r = denom ** (-1.0 / (p - 1))
    if shrink:
        r *= (2 * c1) ** (-1.0 / (p - 1))
    return float(min(r, r_max))


@dataclass
class PicardCertificate:
    radius: float
    data_norm: float
    certified: bool
    distances: list = field(default_factory=list)
    iterations: int = 0
    residual: float = float("nan")
    tolerance: float = float("nan")
    converged: bool = False

    @property
    def factors(self) -> list:
        d = self.distances
        return [d[j + 1] / d[j] for j in range(len(d) - 1) if d[j] > 0]

    @property
    def max_factor(self) -> float:
        f = self.factors
        return max(f) if f else 0.0

    def render(self) -> str:
        rows = []
        for j, d in enumerate(self.distances):
            ratio = d / self.distances[j - 1] if j and self.distances[j - 1] > 0 else float("nan")
            rows.append((j + 1, d, ratio))
        meta = {
            "radius": self.radius,
            "data_norm": self.data_norm,
            "certified": self.certified,
            "iterations": self.iterations,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "converged": self.converged,
        }
        return render_table("picard_certificate", ["iteration", "distance", "ratio"], rows, meta)


def solve_nonlinear(
    op: SpectralOperator,
    spec: NonlinearitySpec,
    q,
    f,
    cfg: SolveConfig,
    radius=None,
):
    """Solve ``(i d_t + Laplacian + p) u + q N(u, conj u) = 0``, ``u(0) = f``.

    Picard iteration ``w <- S(-q N(v + w, conj(v + w)))`` with ``v = e^{tA} f``
    and ``S`` the zero-data Duhamel operator.  Stops once successive iterates
    differ by at most ``cfg.picard_tol * ||v||`` in the C0(D(A)) norm.

    Returns
    -------
    (Trajectory, PicardCertificate)

    Raises
    ------
    PicardDivergenceError
        If the tolerance is not met within ``cfg.picard_max_iter`` iterations or
        the iterates blow up.
    """
    grid = op.grid
    qv = as_values(q)
    grid.check(qv, "q")
    f = np.asarray(grid.check(f, "initial value"), dtype=complex)
    times = cfg.times
    vc = op.to_modes(f) * op.phases(times)
    v = op.from_modes(vc)
    data_norm = float(sobolev_norm(f, grid, 2))
    r = float("inf") if radius is None else float(radius)
    cert = PicardCertificate(radius=r, data_norm=data_norm, certified=data_norm <= r)
    if radius is not None and not cert.certified:
        warnings.warn(
            f"data norm {data_norm:.3g} exceeds the certified radius {r:.3g}; result is uncertified",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = c0da_norm(grid, v)
    tol = cfg.picard_tol * scale
    cert.tolerance = tol
    zero = np.zeros(grid.n, dtype=complex)
    w = np.zeros_like(v)
    for it in range(1, cfg.picard_max_iter + 1):
        u = v + w
        src = -qv * evaluate(spec, u, np.conj(u))
        w_new = op.from_modes(duhamel_modes(op, zero, op.to_modes(src), times, cfg.rule))
        d = c0da_norm(grid, w_new - w)
        cert.distances.append(d)
        cert.iterations = it
        w = w_new
        if not np.isfinite(d) or d > 1e6 * max(scale, 1.0):
            cert.residual = d
            raise PicardDivergenceError(f"Picard iterates blew up at iteration {it}", cert)
        if d <= tol:
            cert.residual = d
            cert.converged = True
            break
    else:
        cert.residual = cert.distances[-1]
        raise PicardDivergenceError(
            f"Picard iteration did not reach {tol:.3g} in {cfg.picard_max_iter} iterations "
            f"(last distance {cert.residual:.3g})",
            cert,
        )
    log.debug("picard converged in %d iterations, residual %.3g", cert.iterations, cert.residual)
    return Trajectory(times, v + w, grid), cert


def render_trajectory(traj: Trajectory, label="") -> str:
    rows = []
    for t, vals in zip(traj.times, traj.values):
        for i, z in enumerate(vals):
            rows.append((t, i, z.real, z.imag))
    meta = dict(traj.grid.metadata())
    meta["dt"] = traj.dt
    if label:
        meta["label"] = label
    return render_table("trajectory", ["t", "index", "re", "im"], rows, meta)

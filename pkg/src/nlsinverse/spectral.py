"""Finite-difference grids, the Dirichlet eigenbasis of -Laplacian - p, and the exact propagator.

Fields are plain complex (or real) numpy arrays over the interior nodes of a
:class:`Grid`, flattened in C order (x index slowest).  Time series of fields are
stored as arrays of shape ``(n_times, n_nodes)`` inside a :class:`Trajectory`.
Leading batch axes are accepted wherever it is cheap to do so.

The discrete inner product is ``<f, g> = h^d * sum(f * conj(g))`` and the
eigenvectors are orthonormal with respect to it, so

    e^{tA} f = sum_m exp(-i mu_m t) <f, e_m> e_m

is exactly unitary in time for every ``t`` of either sign.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import prod

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, GridMismatchError
from .records import render_table, read_table

MAX_SOBOLEV_ORDER = 4


@dataclass(frozen=True)
class Grid:
    """Uniform grid of interior nodes on an interval or an axis-aligned rectangle.

    Boundary values are zero (Dirichlet) and are not stored.  The boundary is
    described by *facets*: one entry per (boundary node, face) pair, so a corner
    of the rectangle appears once for each adjacent face with half the face
    quadrature weight.  Facets are ordered counter-clockwise starting at the
    origin, which keeps any contiguous slice of them a connected boundary arc.
    """

    dim: int
    extent: tuple
    points: tuple
    collar_width: float
    spacing: tuple = field(init=False)
    coords: np.ndarray = field(init=False, repr=False)
    collar: np.ndarray = field(init=False, repr=False)
    facet_index: np.ndarray = field(init=False, repr=False)
    facet_axis: np.ndarray = field(init=False, repr=False)
    facet_sign: np.ndarray = field(init=False, repr=False)
    facet_weight: np.ndarray = field(init=False, repr=False)
    facet_coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        spacing = tuple(L / (n + 1) for L, n in zip(self.extent, self.points))
        object.__setattr__(self, "spacing", spacing)
        axes = self.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        object.__setattr__(self, "coords", coords)
        dist = self.distance_to_boundary(coords)
        object.__setattr__(self, "collar", dist <= self.collar_width * (1 + 1e-12))
        self._build_facets()

    # geometry -----------------------------------------------------------

    @property
    def n(self) -> int:
        return prod(self.points)

    @property
    def shape(self) -> tuple:
        return tuple(self.points)

    @property
    def padded_shape(self) -> tuple:
        return tuple(n + 2 for n in self.points)

    @property
    def cell_volume(self) -> float:
        return float(prod(self.spacing))

    def axes(self):
        """Interior coordinates along each axis."""
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.points)]

    def padded_axes(self):
        """Coordinates along each axis including the two boundary nodes."""
        return [h * np.arange(0, n + 2) for h, n in zip(self.spacing, self.points)]

    def distance_to_boundary(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        parts = [np.minimum(x[:, a], self.extent[a] - x[:, a]) for a in range(self.dim)]
        return np.min(np.stack(parts, axis=1), axis=1)

    @property
    def boundary_nodes(self) -> np.ndarray:
        """Unique padded multi-indices of the nodes on the boundary."""
        return np.unique(self.facet_index, axis=0)

    @property
    def diameter(self) -> float:
        return float(np.hypot.reduce(np.asarray(self.extent, dtype=float)))

    def _build_facets(self):
        idx, axis, sign, weight = [], [], [], []
        if self.dim == 1:
            n = self.points[0]
            idx = [(0,), (n + 1,)]
            axis = [0, 0]
            sign = [-1, 1]
            weight = [1.0, 1.0]
        else:
            nx, ny = self.points
            hx, hy = self.spacing
            faces = [
                # (axis, sign, fixed index, running range) counter-clockwise
                (1, -1, [(i, 0) for i in range(0, nx + 2)], hx),
                (0, 1, [(nx + 1, j) for j in range(0, ny + 2)], hy),
                (1, 1, [(i, ny + 1) for i in range(nx + 1, -1, -1)], hx),
                (0, -1, [(0, j) for j in range(ny + 1, -1, -1)], hy),
            ]
            for ax, sg, nodes, h in faces:
                for pos, node in enumerate(nodes):
                    idx.append(node)
                    axis.append(ax)
                    sign.append(sg)
                    end = pos == 0 or pos == len(nodes) - 1
                    weight.append(h / 2 if end else h)
        idx = np.asarray(idx, dtype=int)
        object.__setattr__(self, "facet_index", idx)
        object.__setattr__(self, "facet_axis", np.asarray(axis, dtype=int))
        object.__setattr__(self, "facet_sign", np.asarray(sign, dtype=int))
        object.__setattr__(self, "facet_weight", np.asarray(weight, dtype=float))
        pax = self.padded_axes()
        fc = np.stack([pax[a][idx[:, a]] for a in range(self.dim)], axis=1)
        object.__setattr__(self, "facet_coords", fc)

    @property
    def facet_normals(self) -> np.ndarray:
        nrm = np.zeros((len(self.facet_axis), self.dim))
        nrm[np.arange(len(self.facet_axis)), self.facet_axis] = self.facet_sign
        return nrm

    # field helpers ------------------------------------------------------

    def check(self, values, name="field") -> np.ndarray:
        arr = np.asarray(values)
        if arr.ndim == 0 or arr.shape[-1] != self.n:
            raise GridMismatchError(
                f"{name} has trailing size {arr.shape[-1] if arr.ndim else 0}, grid has {self.n} nodes"
            )
        return arr

    def pad(self, values) -> np.ndarray:
        """Embed interior values into the padded array with zero boundary values."""
        arr = self.check(values)
        lead = arr.shape[:-1]
        out = np.zeros(lead + self.padded_shape, dtype=arr.dtype)
        inner = (Ellipsis,) + tuple(slice(1, -1) for _ in range(self.dim))
        out[inner] = arr.reshape(lead + self.shape)
        return out

    def unpad(self, padded) -> np.ndarray:
        padded = np.asarray(padded)
        inner = (Ellipsis,) + tuple(slice(1, -1) for _ in range(self.dim))
        inside = padded[inner]
        return inside.reshape(inside.shape[: inside.ndim - self.dim] + (self.n,))

    def padded_quadrature(self) -> np.ndarray:
        """Trapezoid weights over the padded grid."""
        w = None
        for h, n in zip(self.spacing, self.points):
            wa = np.full(n + 2, h)
            wa[[0, -1]] = h / 2
            w = wa if w is None else np.multiply.outer(w, wa)
        return w

    def inner(self, f, g) -> complex:
        f = self.check(f)
        g = self.check(g)
        return self.cell_volume * np.sum(f * np.conj(g), axis=-1)

    def l2_norm(self, f):
        f = self.check(f)
        return np.sqrt(self.cell_volume * np.sum(np.abs(f) ** 2, axis=-1))

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(x)`` (1D) or ``func(x, y)`` (2D) on the interior nodes."""
        return np.asarray(func(*self.coords.T))

    def metadata(self) -> dict:
        return {
            "dim": self.dim,
            "extent": list(self.extent),
            "points": list(self.points),
            "spacing": list(self.spacing),
            "collar_width": self.collar_width,
        }


def build_grid(dim, extent, points, collar_width) -> Grid:
    """Build an interval (``dim=1``) or rectangle (``dim=2``) grid.

    Parameters
    ----------
    dim : int
        1 or 2.
    extent : float or sequence of float
        Side length(s); the domain is ``(0, extent[0]) x (0, extent[1])``.
    points : int or sequence of int
        Interior nodes per axis, at least 8.
    collar_width : float
        Nodes within this distance of the boundary form the collar mask.

    Returns
    -------
    Grid
    """
    if dim not in (1, 2):
        raise ConfigurationError(f"dim must be 1 or 2, got {dim}")
    extent = _per_axis(extent, dim, float, "extent")
    points = _per_axis(points, dim, int, "points")
    if any(not np.isfinite(L) or L <= 0 for L in extent):
        raise ConfigurationError(f"extents must be positive, got {extent}")
    width = min(extent)
    if not np.isfinite(collar_width) or collar_width <= 0:
        raise ConfigurationError(f"collar_width must be positive, got {collar_width}")
    if collar_width >= width / 2:
        raise ConfigurationError(
            f"collar covers the domain: collar_width={collar_width} >= half the width {width / 2}"
        )
    if collar_width >= width / 4:
        raise ConfigurationError(
            f"collar_width={collar_width} must be below a quarter of the width ({width / 4})"
        )
    if any(n < 8 for n in points):
        raise ConfigurationError(f"need at least 8 interior points per axis, got {points}")
    grid = Grid(dim, extent, points, float(collar_width))
    if not grid.collar.any():
        raise ConfigurationError("collar_width is below one grid spacing; the collar is empty")
    return grid


def _per_axis(value, dim, cast, name):
    if np.ndim(value) == 0:
        return tuple(cast(value) for _ in range(dim))
    value = tuple(cast(v) for v in value)
    if len(value) != dim:
        raise ConfigurationError(f"{name} needs {dim} entries, got {len(value)}")
    return value


@dataclass(frozen=True)
class PotentialField:
    """Real coefficient sampled on the interior nodes."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values)
        if np.iscomplexobj(vals):
            if np.any(vals.imag != 0):
                raise ConfigurationError(f"potential {self.label!r} must be real")
            vals = vals.real
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError(f"potential {self.label!r} has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def as_values(potential) -> np.ndarray:
    if isinstance(potential, PotentialField):
        return potential.values
    return PotentialField(potential).values


def laplacian_matrix(grid: Grid) -> np.ndarray:
    """Dense matrix of the 5-point (or 3-point) Dirichlet Laplacian on interior nodes."""
    mats = []
    for h, n in zip(grid.spacing, grid.points):
        d = np.zeros((n, n))
        i = np.arange(n)
        d[i, i] = -2.0
        d[i[:-1], i[:-1] + 1] = 1.0
        d[i[1:], i[1:] - 1] = 1.0
        mats.append(d / h**2)
    if grid.dim == 1:
        return mats[0]
    nx, ny = grid.points
    return np.kron(mats[0], np.eye(ny)) + np.kron(np.eye(nx), mats[1])


def laplacian(grid: Grid, values) -> np.ndarray:
    """Apply the Dirichlet stencil Laplacian to a (batched) field."""
    u = grid.pad(values)
    nd = u.ndim
    out = np.zeros(u.shape[: nd - grid.dim] + grid.shape, dtype=u.dtype)
    for a, h in enumerate(grid.spacing):
        center = [slice(1, -1)] * grid.dim
        lo = list(center)
        hi = list(center)
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        c = (Ellipsis,) + tuple(center)
        out = out + (u[(Ellipsis,) + tuple(lo)] - 2 * u[c] + u[(Ellipsis,) + tuple(hi)]) / h**2
    return out.reshape(out.shape[: out.ndim - grid.dim] + (grid.n,))


def gradient(grid: Grid, values) -> list:
    """Centered-difference gradient on the padded grid (one-sided at the boundary)."""
    u = grid.pad(values)
    lead = u.ndim - grid.dim
    return [
        np.gradient(u, h, axis=lead + a, edge_order=2) for a, h in enumerate(grid.spacing)
    ]


@dataclass(frozen=True)
class SpectralOperator:
    """Eigen-system of the discrete -Laplacian - p with Dirichlet conditions.

    ``eigenvectors[:, m]`` is the m-th eigenfunction, normalized in the discrete
    L2 inner product of the grid.
    """

    grid: Grid
    potential: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    matrix: np.ndarray

    def to_modes(self, f) -> np.ndarray:
        """Coefficients <f, e_m> (batched over leading axes)."""
        f = self.grid.check(f)
        return (f @ self.eigenvectors) * self.grid.cell_volume

    def from_modes(self, c) -> np.ndarray:
        return np.asarray(c) @ self.eigenvectors.T

    def apply(self, f) -> np.ndarray:
        """(-Laplacian - p) f."""
        f = self.grid.check(f)
        return f @ self.matrix.T

    def generator(self, f) -> np.ndarray:
        """A f = i (Laplacian + p) f."""
        return -1j * self.apply(f)

    def phases(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.exp(-1j * np.multiply.outer(t, self.eigenvalues))

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)


def eigendecompose(grid: Grid, potential) -> SpectralOperator:
    """Full eigen-decomposition of the discrete -Laplacian - p.

    Parameters
    ----------
    grid : Grid
    potential : PotentialField or array_like
        Real values on the interior nodes.

    Returns
    -------
    SpectralOperator
        Eigenvalues ascending, eigenvectors orthonormal in the grid L2 product.
    """
    p = as_values(potential)
    grid.check(p, "potential")
    mat = -laplacian_matrix(grid) - np.diag(p)
    try:
        mu, vec = scipy.linalg.eigh(mat, driver="evd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConfigurationError(f"symmetric eigen-solve failed: {exc}") from exc
    vec = vec / np.sqrt(grid.cell_volume)
    for arr in (mu, vec, mat, p):
        arr.setflags(write=False)
    return SpectralOperator(grid, p, mu, vec, mat)


def propagate(op: SpectralOperator, f, t) -> np.ndarray:
    """Apply e^{tA} to ``f``.

    ``t`` may be a scalar (result has the shape of ``f``) or a 1-D array of
    times (result gains a leading time axis).  Negative times are allowed.
    """
    c = op.to_modes(np.asarray(f, dtype=complex))
    if np.ndim(t) == 0:
        if t == 0:
            return np.array(f, dtype=complex, copy=True)
        return op.from_modes(c * op.phases(t))
    ph = op.phases(t)
    return op.from_modes(c[..., None, :] * ph if c.ndim > 1 else ph * c)


def sobolev_norm(values, grid: Grid, order: int):
    """Discrete H^k norm built from centered differences.

    Every multi-index ``alpha`` with ``|alpha| <= order`` contributes
    ``||D^alpha u||^2`` once (so the mixed derivative appears once in 2D).
    Derivatives are taken on the zero-padded grid with second-order one-sided
    stencils at the boundary and integrated with the trapezoid rule.  Leading
    batch axes give a batch of norms.
    """
    if order < 0 or order > MAX_SOBOLEV_ORDER:
        raise ConfigurationError(f"order must be in 0..{MAX_SOBOLEV_ORDER}, got {order}")
    u = grid.pad(values)
    lead = u.ndim - grid.dim
    w = grid.padded_quadrature()
    spatial = tuple(range(lead, u.ndim))
    total = np.sum(np.abs(u) ** 2 * w, axis=spatial)
    level = {(): u}
    for _ in range(order):
        nxt = {}
        for alpha, arr in level.items():
            start = alpha[-1] if alpha else 0
            for a in range(start, grid.dim):
                nxt[alpha + (a,)] = np.gradient(arr, grid.spacing[a], axis=lead + a, edge_order=2)
        for arr in nxt.values():
            total = total + np.sum(np.abs(arr) ** 2 * w, axis=spatial)
        level = nxt
    return np.sqrt(total)


def multi_indices(dim, order):
    """Multi-indices (as sorted axis tuples) with length at most ``order``."""
    out = [()]
    for k in range(1, order + 1):
        out.extend(itertools.combinations_with_replacement(range(dim), k))
    return out


def normal_derivative(grid: Grid, values, facets=None) -> np.ndarray:
    """Outward normal derivative at boundary facets.

    Second-order one-sided stencil ``(3 u_b - 4 u_1 + u_2) / (2h)`` along the
    facet normal with ``u_b = 0``.  ``facets`` selects facet indices (default
    all); the result has shape ``values.shape[:-1] + (len(facets),)``.
    """
    u = grid.pad(values)
    lead = u.shape[: u.ndim - grid.dim]
    facets = np.arange(len(grid.facet_axis)) if facets is None else np.asarray(facets, dtype=int)
    out = np.zeros(lead + (len(facets),), dtype=u.dtype)
    for j, fid in enumerate(facets):
        idx = grid.facet_index[fid].copy()
        ax = grid.facet_axis[fid]
        sg = grid.facet_sign[fid]
        i1 = idx.copy()
        i1[ax] -= sg
        i2 = idx.copy()
        i2[ax] -= 2 * sg
        ub = u[(Ellipsis,) + tuple(idx)]
        u1 = u[(Ellipsis,) + tuple(i1)]
        u2 = u[(Ellipsis,) + tuple(i2)]
        out[..., j] = (3 * ub - 4 * u1 + u2) / (2 * grid.spacing[ax])
    return out


def padded_coords(grid: Grid) -> np.ndarray:
    """Coordinates of every padded node, shape ``padded_shape + (dim,)``."""
    mesh = np.meshgrid(*grid.padded_axes(), indexing="ij")
    return np.stack(mesh, axis=-1)


# time series -------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled evolution of a field."""

    times: np.ndarray
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values)
        if t.ndim != 1 or len(t) < 3:
            raise ConfigurationError("a trajectory needs at least 3 time samples")
        steps = np.diff(t)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(abs(t[-1] - t[0]), 1.0):
            raise ConfigurationError("trajectory time samples must be uniform and increasing")
        if v.shape != (len(t), self.grid.n):
            raise GridMismatchError(f"values shape {v.shape} != ({len(t)}, {self.grid.n})")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (len(self.times) - 1))

    @property
    def zero_index(self):
        hits = np.nonzero(np.abs(self.times) <= 1e-9 * max(self.dt, 1e-300))[0]
        return int(hits[0]) if len(hits) else None

    def at_zero(self) -> np.ndarray:
        i = self.zero_index
        if i is None:
            raise ConfigurationError("trajectory has no sample at t=0")
        return self.values[i]

    def restrict(self, t_min, t_max) -> "Trajectory":
        tol = 1e-9 * self.dt
        keep = (self.times >= t_min - tol) & (self.times <= t_max + tol)
        return Trajectory(self.times[keep], self.values[keep], self.grid)

    def conj(self) -> "Trajectory":
        return Trajectory(self.times, np.conj(self.values), self.grid)

    def with_values(self, values) -> "Trajectory":
        return Trajectory(self.times, values, self.grid)


def time_grid(T, dt, symmetric=False) -> np.ndarray:
    """Uniform samples of ``[0, T]`` or ``[-T, T]``; ``dt`` must divide ``T``."""
    if T <= 0 or dt <= 0:
        raise ConfigurationError(f"T and dt must be positive, got T={T}, dt={dt}")
    steps = T / dt
    n = int(round(steps))
    if n < 2 or abs(steps - n) > 1e-9 * max(steps, 1.0):
        raise ConfigurationError(f"dt={dt} must divide T={T} into at least 2 steps")
    if symmetric:
        return np.linspace(-T, T, 2 * n + 1)
    return np.linspace(0.0, T, n + 1)


def propagate_trajectory(op: SpectralOperator, f, times) -> Trajectory:
    return Trajectory(np.asarray(times, float), propagate(op, f, np.asarray(times, float)), op.grid)


# empirical constants ------------------------------------------------------


def random_smooth_fields(grid: Grid, count, rng, modes=6, complex_valued=True, decay=2.0):
    """Random sums of low Dirichlet sine modes with algebraically decaying weights."""
    axes = [np.asarray(c) for c in grid.coords.T]
    combos = list(itertools.product(range(1, modes + 1), repeat=grid.dim))
    basis = []
    for ms in combos:
        b = np.ones(grid.n)
        for a, m in enumerate(ms):
            b = b * np.sin(m * np.pi * axes[a] / grid.extent[a])
        basis.append(b / (1.0 + sum(m * m for m in ms)) ** decay)
    basis = np.stack(basis)
    coef = rng.standard_normal((count, len(combos)))
    if complex_valued:
        coef = coef + 1j * rng.standard_normal((count, len(combos)))
    return coef @ basis


def banach_algebra_constant(grid: Grid, samples=200, rng=None, inflation=1.5, order=2):
    """Empirical K* with ||h1 h2||_{H^2} <= K* ||h1||_{H^2} ||h2||_{H^2}.

    The maximum ratio over random smooth pairs, inflated by ``inflation``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    h1 = random_smooth_fields(grid, samples, rng)
    h2 = random_smooth_fields(grid, samples, rng)
    num = sobolev_norm(h1 * h2, grid, order)
    den = sobolev_norm(h1, grid, order) * sobolev_norm(h2, grid, order)
    return float(inflation * np.max(num / den))


def fit_propagator_constant(op: SpectralOperator, times, samples=50, rng=None, order=2):
    """Single C1 with ||e^{tA} f||_{H^2} <= C1 ||f||_{H^2} over the given times and random f."""
    rng = np.random.default_rng(1) if rng is None else rng
    fs = random_smooth_fields(op.grid, samples, rng)
    base = sobolev_norm(fs, op.grid, order)
    c = op.to_modes(fs)
    worst = 1.0
    for t in np.atleast_1d(times):
        moved = op.from_modes(c * op.phases(t))
        worst = max(worst, float(np.max(sobolev_norm(moved, op.grid, order) / base)))
    return worst


# dumps --------------------------------------------------------------------


def render_field(grid: Grid, values, label="") -> str:
    vals = np.asarray(grid.check(values), dtype=complex)
    axis_names = ["x", "y"][: grid.dim]
    rows = [
        (i, *grid.coords[i], vals[i].real, vals[i].imag) for i in range(grid.n)
    ]
    meta = dict(grid.metadata())
    if label:
        meta["label"] = label
    return render_table("field", ["index", *axis_names, "re", "im"], rows, meta)


def write_field(path, grid: Grid, values, label=""):
    from pathlib import Path

    Path(path).write_text(render_field(grid, values, label))


def read_field(path):
    """Return ``(grid, values)`` from a field dump."""
    schema, meta, columns, rows = read_table(path)
    if schema != "field":
        raise ValueError(f"{path}: expected a field dump, found schema {schema!r}")
    dim = int(meta["dim"])
    extent = [float(v) for v in meta["extent"].split(";")]
    points = [int(v) for v in meta["points"].split(";")]
    grid = Grid(dim, tuple(extent), tuple(points), float(meta["collar_width"]))
    data = np.array([[float(c) for c in r[-2:]] for r in rows])
    return grid, data[:, 0] + 1j * data[:, 1]

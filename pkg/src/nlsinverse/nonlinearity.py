"""Truncated analytic nonlinearities N(z1, z2) given by a table of Taylor coefficients.

``coeffs[(a, b)]`` stores the mixed derivative d^a/dz1^a d^b/dz2^b N(0, 0), so the
polynomial is

    N(z1, z2) = sum_{a+b <= L} coeffs[(a, b)] / (a! b!) * z1**a * z2**b

and is evaluated with ``z1 = u`` and ``z2 = conj(u)`` in the equation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from math import ceil, comb, factorial

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NonlinearitySpec:
    """Order-k analytic nonlinearity truncated at total degree L.

    Parameters
    ----------
    k : int
        Order of the first non-vanishing homogeneous part, k > 1.
    coeffs : dict
        Maps ``(a, b)`` to the derivative value.  Missing entries are zero.
    L : int, optional
        Truncation degree, defaults to ``k + 2``.
    delta : float
        Analyticity radius.
    m0, n0 : int, optional
        Growth exponents; default ``ceil(k/2)`` and ``k - m0`` (bumped so that
        ``m0 + n0 > 1``).
    C0 : float
        Growth constant.
    name : str
        Free-form label.
    """

    k: int
    coeffs: dict
    L: int = None
    delta: float = 1.0
    m0: int = None
    n0: int = None
    C0: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ConfigurationError(f"order k must be an integer > 1, got {self.k}")
        L = self.k + 2 if self.L is None else int(self.L)
        if L < self.k:
            raise ConfigurationError(f"truncation L={L} is below the order k={self.k}")
        table = {}
        for key, val in dict(self.coeffs).items():
            a, b = (int(v) for v in key)
            if a < 0 or b < 0:
                raise ConfigurationError(f"negative coefficient index {key}")
            if a + b > L:
                raise ConfigurationError(f"coefficient {key} exceeds truncation L={L}")
            val = complex(val)
            if not np.isfinite(val):
                raise ConfigurationError(f"coefficient {key} is not finite")
            if val != 0:
                table[(a, b)] = val.real if val.imag == 0 else val
        m0 = ceil(self.k / 2) if self.m0 is None else int(self.m0)
        if self.n0 is None:
            n0 = self.k - m0
            if m0 + n0 <= 1:
                n0 += 1
        else:
            n0 = int(self.n0)
        if not self.delta > 0:
            raise ConfigurationError(f"radius delta must be positive, got {self.delta}")
        if not self.C0 > 0:
            raise ConfigurationError(f"C0 must be positive, got {self.C0}")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "coeffs", dict(sorted(table.items())))
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "n0", n0)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "C0", float(self.C0))

    def c(self, a, b):
        return self.coeffs.get((a, b), 0.0)

    @property
    def binomial_sum(self):
        return sum(comb(self.k, m) * self.c(m, self.k - m) for m in range(self.k + 1))

    @property
    def growth_exponent(self) -> int:
        return self.m0 + self.n0

    def to_dict(self) -> dict:
        coeffs = []
        for (a, b), v in self.coeffs.items():
            v = complex(v)
            coeffs.append([a, b, v.real] if v.imag == 0 else [a, b, v.real, v.imag])
        return {
            "k": self.k,
            "L": self.L,
            "delta": self.delta,
            "coeffs": coeffs,
            "m0": self.m0,
            "n0": self.n0,
            "C0": self.C0,
        }

    @classmethod
    def from_dict(cls, data) -> "NonlinearitySpec":
        allowed = {"k", "L", "delta", "coeffs", "m0", "n0", "C0", "name"}
        extra = set(data) - allowed
        if extra:
            raise ConfigurationError(f"unknown nonlinearity keys: {sorted(extra)}")
        if "k" not in data or "coeffs" not in data:
            raise ConfigurationError("nonlinearity needs keys 'k' and 'coeffs'")
        table = {}
        for entry in data["coeffs"]:
            if len(entry) not in (3, 4):
                raise ConfigurationError(f"coefficient entry {entry} must be [a, b, value]")
            val = entry[2] if len(entry) == 3 else complex(entry[2], entry[3])
            table[(int(entry[0]), int(entry[1]))] = val
        return cls(
            k=data["k"],
            coeffs=table,
            L=data.get("L"),
            delta=data.get("delta", 1.0),
            m0=data.get("m0"),
            n0=data.get("n0"),
            C0=data.get("C0", 1.0),
            name=data.get("name", ""),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def loads(cls, text) -> "NonlinearitySpec":
        return cls.from_dict(json.loads(text))


def quadratic_product(**kw) -> NonlinearitySpec:
    """N = z1 z2, i.e. |u|^2 (k = 2)."""
    return NonlinearitySpec(k=2, coeffs={(1, 1): 1.0}, name="z1*z2", **kw)


def cubic_gross_pitaevskii(**kw) -> NonlinearitySpec:
    """N = z1^2 z2, i.e. |u|^2 u (k = 3)."""
    kw.setdefault("m0", 2)
    kw.setdefault("n0", 1)
    return NonlinearitySpec(k=3, coeffs={(2, 1): 2.0}, name="z1^2*z2", **kw)


PRESETS = {"z1*z2": quadratic_product, "z1^2*z2": cubic_gross_pitaevskii}


@dataclass
class ValidationReport:
    low_orders_vanish: bool
    binomial_sum: complex
    binomial_sum_nonzero: bool
    leading_coefficients_real: bool
    growth_exponents_ok: bool
    offending: list

    @property
    def passed(self) -> bool:
        return (
            self.low_orders_vanish
            and self.binomial_sum_nonzero
            and self.leading_coefficients_real
            and self.growth_exponents_ok
        )

    def failures(self) -> list:
        names = {
            "low_orders_vanish": self.low_orders_vanish,
            "binomial_sum_nonzero": self.binomial_sum_nonzero,
            "leading_coefficients_real": self.leading_coefficients_real,
            "growth_exponents_ok": self.growth_exponents_ok,
        }
        return [k for k, ok in names.items() if not ok]


def validate_spec(spec: NonlinearitySpec, atol=0.0) -> ValidationReport:
    """Check the structural conditions; never raises."""
    low = [key for key, v in spec.coeffs.items() if sum(key) <= spec.k - 1 and abs(v) > atol]
    lead = [spec.c(m, spec.k - m) for m in range(spec.k + 1)]
    nonreal = [
        (m, spec.k - m) for m, v in enumerate(lead) if abs(complex(v).imag) > atol
    ]
    bsum = spec.binomial_sum
    return ValidationReport(
        low_orders_vanish=not low,
        binomial_sum=bsum,
        binomial_sum_nonzero=abs(bsum) > atol,
        leading_coefficients_real=not nonreal,
        growth_exponents_ok=spec.m0 + spec.n0 > 1,
        offending=low + nonreal,
    )


def evaluate(spec: NonlinearitySpec, h1, h2, grid=None, k_star=None):
    """Pointwise value of the truncated series at ``(h1, h2)``.

    When ``grid`` and ``k_star`` are given, a warning is issued if the pair lies
    outside the disk ``||h1||^2 + ||h2||^2 < delta / k_star^2`` in the discrete H^2 norm.
    """
    h1 = np.asarray(h1)
    h2 = np.asarray(h2)
    if grid is not None and k_star is not None:
        from .spectral import sobolev_norm

        r2 = np.max(sobolev_norm(h1, grid, 2) ** 2 + sobolev_norm(h2, grid, 2) ** 2)
        if r2 >= spec.delta / k_star**2:
            warnings.warn(
                f"argument outside the analyticity disk: {r2:.3g} >= {spec.delta / k_star**2:.3g}",
                RuntimeWarning,
                stacklevel=2,
            )
    out = np.zeros(np.broadcast(h1, h2).shape, dtype=np.result_type(h1, h2, complex))
    for (a, b), c in spec.coeffs.items():
        out = out + (c / (factorial(a) * factorial(b))) * h1**a * h2**b
    return out


def homogeneous_part(spec: NonlinearitySpec, h1, h2, degree=None):
    """Degree-``degree`` part of the series (default: degree k)."""
    degree = spec.k if degree is None else degree
    out = 0
    for m in range(degree + 1):
        c = spec.c(degree - m, m)
        if c:
            out = out + c / (factorial(m) * factorial(degree - m)) * h1 ** (degree - m) * h2**m
    return np.asarray(out) + np.zeros(np.broadcast(h1, h2).shape)


def leading_term(spec: NonlinearitySpec, w):
    """sum_m binom(k, m) c[m][k-m] w^m conj(w)^(k-m), the k-th linearized source without -q."""
    w = np.asarray(w)
    wb = np.conj(w)
    out = np.zeros(w.shape, dtype=np.result_type(w, complex))
    for m in range(spec.k + 1):
        c = spec.c(m, spec.k - m)
        if c:
            out = out + comb(spec.k, m) * c * w**m * wb ** (spec.k - m)
    return out


def leading_term_derivative(spec: NonlinearitySpec, w, dw):
    """Time derivative of ``leading_term(spec, w)`` given ``dw = d/dt w``."""
    w = np.asarray(w)
    wb = np.conj(w)
    dwb = np.conj(dw)
    k = spec.k
    out = np.zeros(w.shape, dtype=complex)
    for m in range(k + 1):
        c = spec.c(m, k - m)
        if not c:
            continue
        term = 0
        if m:
            term = term + m * w ** (m - 1) * wb ** (k - m) * dw
        if k - m:
            term = term + (k - m) * w**m * wb ** (k - m - 1) * dwb
        out = out + comb(k, m) * c * term
    return out


def partial_derivatives(spec: NonlinearitySpec, h1, h2):
    """``(dN/dz1, dN/dz2)`` of the truncated series at ``(h1, h2)``."""
    h1 = np.asarray(h1)
    h2 = np.asarray(h2)
    shape = np.broadcast(h1, h2).shape
    d1 = np.zeros(shape, dtype=complex)
    d2 = np.zeros(shape, dtype=complex)
    for (a, b), c in spec.coeffs.items():
        scale = c / (factorial(a) * factorial(b))
        if a:
            d1 = d1 + scale * a * h1 ** (a - 1) * h2**b
        if b:
            d2 = d2 + scale * b * h1**a * h2 ** (b - 1)
    return d1, d2

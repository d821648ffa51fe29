"""Numerical Laplace inversion: Euler summation and the COS expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import comb

from .errors import (
    CumulantError,
    DomainError,
    IntervalError,
    InversionError,
    NoConvergence,
    NonFiniteResult,
    TransformEvalError,
)
from .transforms import CdfOf, Difference, TransformExpr

CLAMP_SLACK = 1e-6


@dataclass(frozen=True)
class EulerConfig:
    A: float = 18.4
    m: int = 11
    n: int = 15

    def __post_init__(self):
        if self.A <= 0 or self.m < 0 or self.n < 1:
            raise ValueError("EulerConfig needs A > 0, m >= 0, n >= 1")


@dataclass(frozen=True)
class CosConfig:
    L: float = 8.0
    n_terms: int = 4096
    cumulant_step: float = 1e-4

    def __post_init__(self):
        if self.L <= 0 or self.n_terms < 8 or self.cumulant_step <= 0:
            raise ValueError("CosConfig needs L > 0, n_terms >= 8, cumulant_step > 0")


def _evaluate(transform, s) -> np.ndarray:
    try:
        return np.asarray(transform(s), dtype=complex)
    except (DomainError, NoConvergence) as exc:
        raise TransformEvalError(str(exc)) from exc


def _euler_weights(cfg: EulerConfig, t: float):
    k = np.arange(cfg.n + cfg.m + 1)
    s = (cfg.A + 2j * math.pi * k) / (2 * t)
    scale = math.exp(cfg.A / 2) / t
    terms_scale = np.where(k == 0, scale / 2, scale * (-1.0) ** k)
    binom = comb(cfg.m, np.arange(cfg.m + 1)) / 2.0**cfg.m
    return s, terms_scale, binom


def euler_invert(transform, t: float, cfg: EulerConfig = EulerConfig()) -> float:
    """Euler-accelerated Bromwich inversion at a single time ``t > 0``."""
    if not t > 0:
        raise ValueError("Euler inversion needs t > 0")
    s, scale, binom = _euler_weights(cfg, t)
    terms = scale * _evaluate(transform, s).real
    partial = np.cumsum(terms)
    value = float(np.dot(binom, partial[cfg.n:]))
    if not math.isfinite(value):
        raise NonFiniteResult(f"Euler summation overflowed at t={t}")
    return value


def euler_invert_many(transform, ts, cfg: EulerConfig = EulerConfig()) -> np.ndarray:
    """Vectorized :func:`euler_invert` over an array of times."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0):
        raise ValueError("Euler inversion needs t > 0")
    k = np.arange(cfg.n + cfg.m + 1)
    s = (cfg.A + 2j * math.pi * k[None, :]) / (2 * ts[:, None])
    scale = math.exp(cfg.A / 2) / ts[:, None] * np.where(k == 0, 0.5, (-1.0) ** k)[None, :]
    terms = scale * _evaluate(transform, s).real
    partial = np.cumsum(terms, axis=1)
    binom = comb(cfg.m, np.arange(cfg.m + 1)) / 2.0**cfg.m
    out = partial[:, cfg.n:] @ binom
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("Euler summation overflowed")
    return out


# ---------------------------------------------------------------------------
# COS


def _log_mgf(density: TransformExpr):
    def C(x):
        vals = _evaluate(density, -np.asarray(x, dtype=float))
        if np.any(np.abs(vals.imag) > 1e-8 * np.abs(vals.real)) or np.any(vals.real <= 0):
            raise CumulantError("moment generating function is not positive near 0")
        out = np.log(vals.real)
        if not np.all(np.isfinite(out)):
            raise CumulantError("non-finite cumulant generating function")
        return out

    return C


def cumulants(density: TransformExpr, step: float = 1e-4) -> tuple[float, float, float]:
    """(c1, c2, c4) by central differences of log f̂(-x) at x = 0."""
    C = _log_mgf(density)
    h = step
    for _ in range(8):
        try:
            cm, c0, cp = C([-h, 0.0, h])
            break
        except (CumulantError, TransformEvalError):
            h /= 10
    else:
        raise CumulantError("cumulant generating function not evaluable near 0")
    c1 = (cp - cm) / (2 * h)
    c2 = (cp - 2 * c0 + cm) / (h * h)
    if not (math.isfinite(c1) and math.isfinite(c2)):
        raise CumulantError("non-finite cumulants")
    if c2 <= 1e-7 * max(1.0, c1 * c1):
        # a point mass up to rounding noise
        return c1, 0.0, 0.0
    # the fourth derivative needs a step on the scale of the distribution
    h4 = 0.02 / math.sqrt(c2)
    for _ in range(8):
        try:
            v = C([-2 * h4, -h4, 0.0, h4, 2 * h4])
            break
        except (CumulantError, TransformEvalError):
            h4 /= 2
    else:
        raise CumulantError("fourth cumulant not evaluable")
    c4 = (v[0] - 4 * v[1] + 6 * v[2] - 4 * v[3] + v[4]) / h4**4
    if not math.isfinite(c4):
        raise CumulantError("non-finite fourth cumulant")
    return c1, c2, abs(c4)


def _density_of(transform: TransformExpr) -> tuple[TransformExpr, bool]:
    if isinstance(transform, CdfOf):
        return transform.density, True
    return transform, False


def select_interval(transform: TransformExpr, cfg: CosConfig = CosConfig()) -> tuple[float, float]:
    density, _ = _density_of(transform)
    c1, c2, c4 = cumulants(density, cfg.cumulant_step)
    half = cfg.L * math.sqrt(c2 + math.sqrt(c4))
    a, b = c1 - half, c1 + half
    if not b - a > 1e-9 * max(1.0, abs(c1)):
        raise CumulantError(f"degenerate truncation interval [{a}, {b}]")
    return a, b


def expansion_interval(transform: TransformExpr, cfg: CosConfig = CosConfig()) -> tuple[float, float]:
    """:func:`select_interval`, cut at 0 for nonnegative variables.

    A density that jumps at 0 converges slowly when the jump lies inside the
    interval; on the boundary the cosine expansion handles it cleanly.
    """
    density, _ = _density_of(transform)
    a, b = select_interval(density, cfg)
    if density.one_sided:
        a = max(a, 0.0)
    return a, b


def cos_coefficients(density: TransformExpr, a: float, b: float, n_terms: int) -> np.ndarray:
    u = np.arange(n_terms) * math.pi / (b - a)
    phi = _evaluate(density, -1j * u)
    return 2.0 / (b - a) * (phi * np.exp(-1j * a * u)).real


def _cos_series(coef: np.ndarray, a: float, b: float, t: float, cdf: bool) -> float:
    k = np.arange(len(coef))
    u = k * math.pi / (b - a)
    x = t - a
    if cdf:
        terms = np.empty_like(coef)
        terms[0] = coef[0] / 2 * x
        terms[1:] = coef[1:] * np.sin(u[1:] * x) / u[1:]
    else:
        terms = coef * np.cos(u * x)
        terms[0] /= 2
    return float(np.sum(terms))


def cos_invert(transform: TransformExpr, t: float, cfg: CosConfig = CosConfig(), interval=None) -> float:
    """Density at ``t``; wrapping the density in :class:`CdfOf` returns the CDF."""
    density, cdf = _density_of(transform)
    a, b = interval if interval is not None else expansion_interval(density, cfg)
    if not a <= t <= b:
        raise IntervalError(f"t={t} outside truncation interval [{a:.6g}, {b:.6g}]")
    coef = cos_coefficients(density, a, b, cfg.n_terms)
    value = _cos_series(coef, a, b, t, cdf)
    if not math.isfinite(value):
        raise NonFiniteResult("COS series is not finite")
    return value


# ---------------------------------------------------------------------------
# P[D <= 0]


@dataclass(frozen=True)
class Inversion:
    value: float
    method: str
    interval: tuple[float, float] | None = None
    terms: int = 0


def _checked(value: float) -> float:
    if not math.isfinite(value) or value < -CLAMP_SLACK or value > 1 + CLAMP_SLACK:
        raise InversionError(f"inverted probability {value!r} outside [0, 1]")
    return min(1.0, max(0.0, value))


def _cdf_at_zero_cos(transform, cfg: CosConfig) -> Inversion:
    density, _ = _density_of(transform)
    a, b = expansion_interval(density, cfg)
    if b < 0:
        return Inversion(1.0, "cos", (a, b), 0)
    if a > 0:
        return Inversion(0.0, "cos", (a, b), 0)
    value = cos_invert(CdfOf(density), 0.0, cfg, interval=(a, b))
    return Inversion(_checked(value), "cos", (a, b), cfg.n_terms)


def _cdf_at_zero_euler(transform, cfg: EulerConfig) -> Inversion:
    density, _ = _density_of(transform)
    if density.one_sided:
        return Inversion(0.0, "euler")
    if not isinstance(density, Difference):
        raise InversionError("Euler inversion needs a difference of one-sided variables")
    # P[X - Y <= 0] = ∫ f_Y(y) F_X(y) dy, each factor inverted on the real line
    cdf_x = CdfOf(density.pos)

    def integrand(y):
        return float(euler_invert_many(density.neg, [y], cfg)[0] * euler_invert_many(cdf_x, [y], cfg)[0])

    value, err = integrate.quad(integrand, 0.0, np.inf, limit=200, epsabs=1e-10, epsrel=1e-9)
    if not math.isfinite(value):
        raise NonFiniteResult("Euler quadrature is not finite")
    return Inversion(_checked(value), "euler", None, cfg.n + cfg.m + 1)


def invert_cdf_at_zero_detailed(transform, method: str = "cos", cos_cfg=CosConfig(), euler_cfg=EulerConfig()) -> Inversion:
    method = method.lower()
    if method == "cos":
        return _cdf_at_zero_cos(transform, cos_cfg)
    if method == "euler":
        return _cdf_at_zero_euler(transform, euler_cfg)
    raise ValueError(f"unknown inversion method {method!r}")


def invert_cdf_at_zero(transform, method: str = "cos", cos_cfg=CosConfig(), euler_cfg=EulerConfig()) -> float:
    """P[D <= 0] for the CDF transform (1/s)·f̂_D(s) of a difference D."""
    return invert_cdf_at_zero_detailed(transform, method, cos_cfg, euler_cfg).value

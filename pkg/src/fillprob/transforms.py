"""Laplace transforms of queue first-passage times.

All evaluators accept scalar or array complex arguments and broadcast over
them, so an inversion routine can evaluate a transform at every abscissa in a
single call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NoConvergence, TransformEvalError
from .lob_core import RateLadder

TOLERANCE = 1e-12
MAX_TERMS = 10_000
TINY = 1e-30

Coefficients = Callable[[int], tuple]


@dataclass(frozen=True)
class ContinuedFraction:
    """K(a_k / b_k) = a_1/(b_1 + a_2/(b_2 + ...)).

    ``coefficients(k)`` returns ``(a_k, b_k)`` for ``k >= 1``; either may be an
    array. ``length`` makes the fraction finite. A zero ``a_k`` also terminates
    it, since every later term is multiplied away.
    """

    coefficients: Coefficients
    length: int | None = None


def _as_output(x: np.ndarray):
    return complex(x) if x.ndim == 0 else x


def lentz_evaluate(cf: ContinuedFraction, tolerance: float = TOLERANCE, max_terms: int = MAX_TERMS):
    """Modified Lentz evaluation with per-element convergence tracking."""
    if tolerance <= 0 or max_terms < 1:
        raise ValueError("tolerance must be positive and max_terms at least 1")
    a, b = cf.coefficients(1)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    shape = np.broadcast(a, b).shape
    f = np.full(shape, TINY, dtype=complex)
    C = f.copy()
    D = np.zeros(shape, dtype=complex)
    done = np.zeros(shape, dtype=bool)
    limit = max_terms if cf.length is None else min(max_terms, cf.length)
    for k in range(1, limit + 1):
        if k > 1:
            a, b = cf.coefficients(k)
        D = b + a * D
        D = np.where(D == 0, TINY, D)
        C = b + a / C
        C = np.where(C == 0, TINY, C)
        D = 1.0 / D
        step = C * D
        f = np.where(done, f, f * step)
        done = done | (np.abs(step - 1.0) < tolerance)
        if not np.all(np.isfinite(f)):
            raise NoConvergence(f"continued fraction became non-finite after {k} terms")
        if done.all():
            return _as_output(f)
    if cf.length is not None and cf.length <= max_terms:
        return _as_output(f)
    raise NoConvergence(f"continued fraction not converged within {max_terms} terms")


def _first_passage_factor(ladder: RateLadder, i: int, s: np.ndarray, tolerance, max_terms, strict=True):
    """Transform of the passage time from size ``i`` to ``i - 1``.

    The fraction -(1/λ_{i-1})·K is evaluated as μ_i/(b_1 + K'), where K' is
    the tail starting at the second partial numerator; the two forms are
    identical but the second stays defined when λ_{i-1} is zero.
    """
    if strict and ladder.birth(i - 1) == 0:
        raise DomainError(f"birth rate at size {i - 1} is zero; prefactor undefined")
    mu_i = ladder.death(i)
    b1 = ladder.birth(i) + mu_i + s

    def tail_at(n, x):
        k = i + n
        return -ladder.birth(k - 1) * ladder.death(k), ladder.birth(k) + ladder.death(k) + x

    def tail(n):
        return tail_at(n, s)

    if mu_i == 0:
        return np.zeros(np.shape(s), dtype=complex)
    if ladder.birth(i) == 0:
        return mu_i / b1
    at_zero = s == 0
    if at_zero.any():
        # the fraction converges only algebraically at s=0 for recurrent chains
        out = np.full(s.shape, _absorption_probability(ladder, i, tolerance, max_terms), dtype=complex)
        if not at_zero.all():
            rest = s[~at_zero]
            K = lentz_evaluate(ContinuedFraction(lambda n: tail_at(n, rest)), tolerance, max_terms)
            out[~at_zero] = mu_i / (ladder.birth(i) + mu_i + rest + np.asarray(K))
        return out
    K = lentz_evaluate(ContinuedFraction(tail), tolerance, max_terms)
    return mu_i / (b1 + np.asarray(K))


def _absorption_probability(ladder: RateLadder, i: int, tolerance, max_terms) -> float:
    """P[the chain started at ``i`` ever reaches ``i - 1``].

    Equals Σ/(1+Σ) with Σ = Σ_{k≥i} ∏_{j=i..k} μ_j/λ_j, and 1 when Σ diverges.
    Divergence is declared once Σ exceeds 1/tolerance, or when the terms stop
    decreasing over the second half of ``max_terms``.
    """
    total, term = 0.0, 1.0
    last_drop = None
    for k in range(i, i + max_terms):
        lam = ladder.birth(k)
        if lam == 0:
            return 1.0
        ratio = ladder.death(k) / lam
        term *= ratio
        total += term
        if total > 1.0 / tolerance:
            return 1.0
        if ratio < 1:
            if term < tolerance * (1.0 + total):
                return total / (1.0 + total)
            last_drop = k
    if last_drop is None or last_drop < i + max_terms // 2:
        return 1.0
    raise NoConvergence(f"absorption series not converged within {max_terms} terms")


def birth_death_fpt_transform(ladder: RateLadder, start: int, s, tolerance=TOLERANCE, max_terms=MAX_TERMS, strict=True):
    """Transform of the time for the queue to empty from size ``start``.

    With ``strict=False`` a zero birth rate below ``start`` is accepted.
    """
    if start < 1:
        raise ValueError("start must be at least 1")
    s = np.asarray(s, dtype=complex)
    out = np.ones(s.shape, dtype=complex)
    for i in range(1, start + 1):
        out = out * _first_passage_factor(ladder, i, s, tolerance, max_terms, strict)
    return _as_output(out)


def _rates(death_rates, lo: int, hi: int) -> list[float]:
    if callable(death_rates):
        return [float(death_rates(k)) for k in range(lo, hi + 1)]
    if hi > len(death_rates):
        raise ValueError(f"need death rates up to size {hi}, got {len(death_rates)}")
    return [float(death_rates[k - 1]) for k in range(lo, hi + 1)]


def _rational_product(rates: Sequence[float], s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    out = np.ones(s.shape, dtype=complex)
    for r in rates:
        den = r + s
        if np.any(den == 0):
            raise DomainError(f"pole at s = {-r}")
        out = out * (r / den)
    return out


def pure_death_fpt_transform(death_rates, start: int, s):
    """∏_{k=1..start} μ_k/(μ_k+s); ``death_rates[k-1]`` (or a callable) gives μ_k."""
    if start < 1:
        raise ValueError("start must be at least 1")
    rates = _rates(death_rates, 1, start)
    if min(rates) <= 0:
        raise DomainError("pure-death rates must be strictly positive")
    return _as_output(_rational_product(rates, s))


def min_with_exponential(inner: Callable, rate: float, s):
    """Transform of min(Y, E) with E ~ Exp(rate) independent of Y ~ ``inner``."""
    if rate <= 0:
        raise DomainError("exponential rate must be positive")
    s = np.asarray(s, dtype=complex)
    if np.any(s == -rate):
        raise DomainError(f"pole at s = {-rate}")
    shifted = np.asarray(inner(rate + s), dtype=complex)
    return _as_output(shifted + rate / (rate + s) * (1.0 - shifted))


HIT_CONVENTIONS = ("step-count", "paper")


def _hit_range(start: int, target: int, convention: str) -> tuple[int, int]:
    if not 1 <= target <= start:
        raise ValueError("need 1 <= target <= start")
    if convention == "paper":
        return target, start
    if convention == "step-count":
        return target + 1, start
    raise ValueError(f"unknown hit index convention {convention!r}")


def partial_hit_transform(death_rates, start: int, target: int, s, convention: str = "step-count"):
    """Transform of the pure-death passage time from ``start`` down to ``target``.

    ``"step-count"`` multiplies the factors for sizes ``target+1..start``, one
    per jump. ``"paper"`` multiplies sizes ``target..start`` (one extra factor).
    """
    lo, hi = _hit_range(start, target, convention)
    rates = _rates(death_rates, lo, hi) if hi >= lo else []
    return _as_output(_rational_product(rates, s))


# ---------------------------------------------------------------------------
# expression trees


class TransformExpr:
    """A Laplace transform that can be evaluated on arrays of complex arguments."""

    one_sided = True

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        try:
            out = np.asarray(self.evaluate(s), dtype=complex)
        except (DomainError, NoConvergence, TransformEvalError):
            raise
        except (ArithmeticError, ValueError) as exc:
            raise TransformEvalError(str(exc)) from exc
        return _as_output(np.broadcast_to(out, s.shape).copy())

    def evaluate(self, s: np.ndarray):
        raise NotImplementedError

    def __mul__(self, other: "TransformExpr") -> "Product":
        return Product((self, other))


@dataclass(frozen=True, eq=False)
class BirthDeathFPT(TransformExpr):
    ladder: RateLadder
    start: int
    tolerance: float = TOLERANCE
    max_terms: int = MAX_TERMS
    strict: bool = True

    def evaluate(self, s):
        return birth_death_fpt_transform(self.ladder, self.start, s, self.tolerance, self.max_terms, self.strict)


@dataclass(frozen=True, eq=False)
class PureDeathFPT(TransformExpr):
    """Sum of independent exponentials with the given rates (Erlang when equal)."""

    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if any(r <= 0 for r in self.rates):
            raise DomainError("pure-death rates must be strictly positive")

    def evaluate(self, s):
        return _rational_product(self.rates, s)


class Exponential(PureDeathFPT):
    def __init__(self, rate: float):
        super().__init__((rate,))


@dataclass(frozen=True, eq=False)
class Constant(TransformExpr):
    """Constant transform; ``Constant(1)`` is a point mass at zero."""

    value: float = 1.0

    def evaluate(self, s):
        return np.full(s.shape, self.value, dtype=complex)


@dataclass(frozen=True, eq=False)
class Deterministic(TransformExpr):
    delay: float

    def evaluate(self, s):
        return np.exp(-s * self.delay)


@dataclass(frozen=True, eq=False)
class Product(TransformExpr):
    """Sum of independent variables."""

    factors: tuple

    @property
    def one_sided(self):
        return all(f.one_sided for f in self.factors)

    def evaluate(self, s):
        out = np.ones(s.shape, dtype=complex)
        for f in self.factors:
            out = out * f(s)
        return out


@dataclass(frozen=True, eq=False)
class Mixture(TransformExpr):
    weights: tuple
    components: tuple

    @property
    def one_sided(self):
        return all(c.one_sided for c in self.components)

    def evaluate(self, s):
        return sum(w * c(s) for w, c in zip(self.weights, self.components))


@dataclass(frozen=True, eq=False)
class MinWithExp(TransformExpr):
    inner: TransformExpr
    rate: float

    def evaluate(self, s):
        return min_with_exponential(self.inner, self.rate, s)


@dataclass(frozen=True, eq=False)
class Shifted(TransformExpr):
    """Argument shift s -> s + shift (exponential tilting)."""

    inner: TransformExpr
    shift: complex

    @property
    def one_sided(self):
        return self.inner.one_sided

    def evaluate(self, s):
        return self.inner(s + self.shift)


@dataclass(frozen=True, eq=False)
class Difference(TransformExpr):
    """Transform of ``pos - neg`` for independent one-sided variables."""

    pos: TransformExpr
    neg: TransformExpr
    one_sided = False

    def evaluate(self, s):
        return self.pos(s) * self.neg(-s)


@dataclass(frozen=True, eq=False)
class CdfOf(TransformExpr):
    """Transform of the CDF of ``density``: density(s)/s."""

    density: TransformExpr

    @property
    def one_sided(self):
        return self.density.one_sided

    def evaluate(self, s):
        if np.any(s == 0):
            raise DomainError("CDF transform has a pole at s = 0")
        return self.density(s) / s


def race_transform(first: TransformExpr, second: TransformExpr) -> CdfOf:
    """CDF transform of ``first - second``; its CDF at 0 is P[first <= second]."""
    return CdfOf(Difference(first, second))


def wrap_in_spread(inner: TransformExpr, rate: float) -> TransformExpr:
    """min(inner, Exp(rate)); the identity when ``rate`` is zero."""
    return MinWithExp(inner, rate) if rate > 0 else inner

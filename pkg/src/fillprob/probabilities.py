"""Mid-price-move and fill probabilities from first-passage races.

Every probability here is a race P[X < Y] between independent passage times,
computed by inverting the CDF transform of X - Y at zero. Rates are frozen at
the query-time book: distances, spread and best-quote ladders do not change
during a race.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import DivergentSeries, InversionError, MassLeak
from .inversion import CosConfig, EulerConfig, Inversion, invert_cdf_at_zero_detailed
from .lob_core import (
    DEFAULT_GRID,
    BookState,
    IntensityModel,
    RateLadder,
    Side,
    deep_cancel_ladder,
    inspread_rate,
    rate_ladder,
)
from .transforms import (
    HIT_CONVENTIONS,
    BirthDeathFPT,
    PureDeathFPT,
    TransformExpr,
    _hit_range,
    race_transform,
    wrap_in_spread,
)

MASS_TOLERANCE = 1e-6
NEGLIGIBLE_WEIGHT = 1e-12


class Direction:
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class MarketQuery:
    """Book condition of a probability query.

    ``side`` is the side of the agent order. For ``depth="deeper"`` the agent
    rests one tick behind its best quote, last in a queue of ``q_deep`` orders.
    """

    q_ask: int
    q_bid: int
    spread: int
    model: IntensityModel
    side: Side = Side.BID
    depth: str = "best"
    q_deep: int = 1
    grid: int = DEFAULT_GRID

    def __post_init__(self):
        if min(self.q_ask, self.q_bid, self.spread, self.q_deep) < 1:
            raise ValueError("queue sizes and spread must be at least 1")
        if self.depth not in ("best", "deeper"):
            raise ValueError(f"unknown depth {self.depth!r}")

    def book(self) -> BookState:
        deep = (self.q_deep,)
        return BookState.from_quotes(
            self.q_ask, self.q_bid, self.spread, self.grid,
            deep_bid=deep if self.side is Side.BID else (),
            deep_ask=deep if self.side is Side.ASK else (),
        )

    def own_size(self) -> int:
        return self.q_bid if self.side is Side.BID else self.q_ask

    def opposite_size(self) -> int:
        return self.q_ask if self.side is Side.BID else self.q_bid


@dataclass(frozen=True)
class Settings:
    method: str = "cos"
    cos: CosConfig = CosConfig()
    euler: EulerConfig = EulerConfig()
    hit_convention: str = "step-count"

    def __post_init__(self):
        if self.method not in ("cos", "euler"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.hit_convention not in HIT_CONVENTIONS:
            raise ValueError(f"unknown hit index convention {self.hit_convention!r}")


@dataclass(frozen=True)
class ProbabilityResult:
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class QueueDistribution:
    support: tuple
    masses: tuple

    def __post_init__(self):
        sup = tuple(int(n) for n in self.support)
        mass = tuple(float(p) for p in self.masses)
        if len(sup) != len(mass) or not sup:
            raise ValueError("support and masses must be nonempty and of equal length")
        if min(mass) < 0:
            raise ValueError("negative probability mass")
        if abs(sum(mass) - 1.0) > 1e-9:
            raise MassLeak(f"masses sum to {sum(mass)!r}")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "masses", mass)

    @classmethod
    def from_weights(cls, weights: Mapping[int, float]) -> "QueueDistribution":
        items = sorted((int(n), float(w)) for n, w in weights.items())
        total = sum(w for _, w in items)
        if total <= 0:
            raise ValueError("weights must have positive total")
        return cls(tuple(n for n, _ in items), tuple(w / total for _, w in items))

    @classmethod
    def point(cls, n: int) -> "QueueDistribution":
        return cls((n,), (1.0,))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support, self.masses))

    def mass(self, n: int) -> float:
        return self.as_dict().get(n, 0.0)

    def conditional_positive(self) -> "QueueDistribution":
        return QueueDistribution.from_weights({n: p for n, p in self.as_dict().items() if n >= 1})

    def mean(self) -> float:
        return float(np.dot(self.support, self.masses))


# ---------------------------------------------------------------------------
# building blocks


def _depletion(ladder: RateLadder, start: int) -> TransformExpr | None:
    """Passage time of a best-quote queue to zero; ``None`` when it never empties."""
    if ladder.death(start) == 0 and ladder.birth(start) == 0:
        return None
    return BirthDeathFPT(ladder, start, strict=False)


def _pure_death(rates) -> TransformExpr | None:
    rates = list(rates)
    if any(r <= 0 for r in rates):
        return None
    return PureDeathFPT(tuple(rates))


def _wrap(inner: TransformExpr | None, rate: float) -> TransformExpr | None:
    if inner is None:
        return PureDeathFPT((rate,)) if rate > 0 else None
    return wrap_in_spread(inner, rate)


def race(first: TransformExpr | None, second: TransformExpr | None, settings: Settings) -> Inversion:
    """P[first < second]; ``None`` stands for a time that is infinite."""
    if first is None and second is None:
        raise InversionError("neither race participant can ever finish")
    if first is None:
        return Inversion(0.0, "exact")
    if second is None:
        return Inversion(1.0, "exact")
    inv = invert_cdf_at_zero_detailed(race_transform(first, second), settings.method, settings.cos, settings.euler)
    # a transient queue may never empty; the inversion only sees finite times
    escape = 1.0 - _finite_mass(second)
    if escape <= NEGLIGIBLE_WEIGHT:
        return inv
    value = min(1.0, inv.value + escape * _finite_mass(first))
    return replace(inv, value=value)


def _finite_mass(t: TransformExpr) -> float:
    return min(1.0, max(0.0, float(np.real(t(np.zeros(1))[0]))))


def _result(inv: Inversion, settings: Settings, **extra) -> ProbabilityResult:
    diag = {"interval": list(inv.interval) if inv.interval else None, "terms": inv.terms,
            "converged": True, "route": inv.method}
    diag.update(extra)
    return ProbabilityResult(inv.value, settings.method, diag)


@dataclass(frozen=True)
class SpreadRace:
    """In-spread arrival rates at the query-time spread."""

    bid: float
    ask: float
    components: tuple = ()

    @property
    def total(self) -> float:
        return self.bid + self.ask

    @classmethod
    def of(cls, model: IntensityModel, book: BookState) -> "SpreadRace":
        S = book.spread
        comp = tuple((m, model.limit_rate(Side.BID, m, S, 0), model.limit_rate(Side.ASK, m, S, 0)) for m in range(1, S))
        return cls(inspread_rate(model, book, Side.BID), inspread_rate(model, book, Side.ASK), comp)


def _ladders(query: MarketQuery):
    book = query.book()
    return book, {s: rate_ladder(query.model, book, s) for s in Side}, SpreadRace.of(query.model, book)


# ---------------------------------------------------------------------------
# propositions


def mid_price_move_prob(query: MarketQuery, direction: str = Direction.UP, settings: Settings = Settings()) -> ProbabilityResult:
    """Probability that the next mid-price move goes in ``direction``.

    The mid rises when the ask queue empties or a buy order lands inside the
    spread, and falls on the mirror events; each side's depletion is raced
    against the opposite side's in-spread clock.
    """
    _, ladders, spread = _ladders(query)
    rising = _wrap(_depletion(ladders[Side.ASK], query.q_ask), spread.bid)
    falling = _wrap(_depletion(ladders[Side.BID], query.q_bid), spread.ask)
    if direction == Direction.UP:
        inv = race(rising, falling, settings)
    elif direction == Direction.DOWN:
        inv = race(falling, rising, settings)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return _result(inv, settings, inspread_bid=spread.bid, inspread_ask=spread.ask)


def best_quote_fill_prob(query: MarketQuery, settings: Settings = Settings()) -> ProbabilityResult:
    """Probability that an order last in the best queue fills before the mid moves."""
    i, j = query.side, query.side.opposite
    _, ladders, spread = _ladders(query)
    own = ladders[i]
    position = _pure_death(own.death(k) for k in range(1, query.own_size() + 1))
    other = _wrap(_depletion(ladders[j], query.opposite_size()), spread.total)
    return _result(race(position, other, settings), settings, inspread_total=spread.total)


def quote_shift_prob(query: MarketQuery, settings: Settings = Settings()) -> ProbabilityResult:
    """Probability that the agent's best quote empties before any other mid move."""
    i, j = query.side, query.side.opposite
    _, ladders, spread = _ladders(query)
    own = _depletion(ladders[i], query.own_size())
    other = _wrap(_depletion(ladders[j], query.opposite_size()), spread.total)
    return _result(race(own, other, settings), settings, inspread_total=spread.total)


def _partial_hit(phi: RateLadder, start: int, target: int, convention: str) -> TransformExpr | None | str:
    lo, hi = _hit_range(start, target, convention)
    if hi < lo:
        return "zero"
    return _pure_death(phi.death(k) for k in range(lo, hi + 1))


def _hits_first(phi, start, target, sigma, convention, settings) -> float:
    """P[deeper queue reaches ``target`` before the best quote empties]."""
    eps = _partial_hit(phi, start, target, convention)
    if eps == "zero":
        return 1.0
    return race(eps, sigma, settings).value


def w_distribution(query: MarketQuery, settings: Settings = Settings()) -> QueueDistribution:
    """Distribution of the agent's queue position when its best quote empties.

    The queue one tick deeper only shrinks through cancellations ahead of the
    agent while the best quote is being consumed. Support is ``1..q_deep``.
    """
    q0 = query.q_deep
    if q0 == 1:
        return QueueDistribution.point(1)
    book, ladders, _ = _ladders(query)
    phi = deep_cancel_ladder(query.model, book, query.side)
    sigma = _depletion(ladders[query.side], query.own_size())
    conv = settings.hit_convention
    hit = {m: _hits_first(phi, q0, m, sigma, conv, settings) for m in range(1, q0)}
    masses = {}
    top = _partial_hit(phi, q0, q0 - 1, conv)
    masses[q0] = 0.0 if top == "zero" else race(sigma, top, settings).value
    for m in range(2, q0):
        masses[m] = hit[m] - hit[m - 1]
    masses[1] = hit[1]
    total = sum(masses.values())
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise MassLeak(f"W masses sum to {total!r}")
    return QueueDistribution.from_weights({m: max(p, 0.0) for m, p in masses.items()})


def stationary_distribution(ladder: RateLadder, n_max: int = 500) -> QueueDistribution:
    """π_n ∝ ∏_{k<n} ρ_k with ρ_k = λ_k / death_{k+1}, truncated at ``n_max``."""
    logw = [0.0]
    for n in range(1, n_max + 1):
        lam, death = ladder.birth(n - 1), ladder.death(n)
        if lam == 0:
            break
        if death == 0:
            raise DivergentSeries(f"zero death rate at size {n} with positive inflow")
        logw.append(logw[-1] + math.log(lam) - math.log(death))
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    total = w.sum()
    if len(w) == n_max + 1 and w[-1] / total > MASS_TOLERANCE:
        raise DivergentSeries(f"mass {w[-1] / total:.3g} remains at the truncation size {n_max}")
    return QueueDistribution(tuple(range(len(w))), tuple(w / total))


def stationary_queue_distribution(model: IntensityModel, book: BookState, side: Side, n_max: int = 500) -> QueueDistribution:
    """Stationary size distribution of the best queue of ``side`` at the book's spread."""
    return stationary_distribution(rate_ladder(model, book, side), n_max)


def default_opposite_distribution(query: MarketQuery, n_max: int = 500) -> QueueDistribution:
    """Stationary opposite best-queue size, conditioned on the queue being nonempty."""
    dist = stationary_queue_distribution(query.model, query.book(), query.side.opposite, n_max)
    return dist.conditional_positive()


def conditional_deeper_fill(query: MarketQuery, position: int, opposite: int, settings: Settings = Settings()) -> float:
    """Fill probability after the quote shift: agent at ``position`` in the new
    best queue, opposite queue of size ``opposite``, spread one tick wider."""
    if query.side is Side.BID:
        q_ask, q_bid = opposite, position
    else:
        q_ask, q_bid = position, opposite
    shifted = replace(query, q_ask=q_ask, q_bid=q_bid, spread=query.spread + 1, depth="best", q_deep=1)
    return best_quote_fill_prob(shifted, settings).value


def deeper_fill_prob(
    query: MarketQuery,
    opposite_dist: QueueDistribution | None = None,
    w_dist: QueueDistribution | None = None,
    settings: Settings = Settings(),
    truncate: bool = False,
    cache: dict | None = None,
) -> ProbabilityResult:
    """Fill probability of an order one tick behind the best quote.

    The order fills only if its best quote empties first; afterwards it is a
    best-quote order at position W in a book whose spread grew by one tick.
    ``truncate`` keeps only positions and opposite sizes up to 2. ``cache``
    may be shared across calls with the same model and spread.
    """
    shift = quote_shift_prob(query, settings)
    if w_dist is None:
        w_dist = w_distribution(query, settings)
    if opposite_dist is None:
        opposite_dist = default_opposite_distribution(query)
    cache = {} if cache is None else cache
    total = 0.0
    cells = 0
    for m, pw in zip(w_dist.support, w_dist.masses):
        if truncate and m > 2:
            continue
        for n, pq in zip(opposite_dist.support, opposite_dist.masses):
            if n < 1 or (truncate and n > 2) or pw * pq < NEGLIGIBLE_WEIGHT:
                continue
            key = (id(query.model), query.side, query.spread, m, n, settings)
            if key not in cache:
                cache[key] = conditional_deeper_fill(query, m, n, settings)
            total += cache[key] * pw * pq
            cells += 1
    value = shift.value * total
    return ProbabilityResult(value, settings.method, {
        **shift.diagnostics, "quote_shift": shift.value, "conditional_cells": cells,
        "w_masses": list(w_dist.masses), "truncated": truncate,
    })

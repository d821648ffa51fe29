"""Order-book state, event update rules and state-dependent intensity models.

Prices live on a grid of ``N`` ticks indexed ``1..N``. Queue sizes are signed:
bid queues are negative, ask queues positive. All orders have unit size.

Distances handed to intensity models are measured in ticks from the opposite
best quote. A level sitting at the side's own best quote is reported with
distance ``0`` so that tabulated models can keep a dedicated best-quote column.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import GridTooSmall, InputError, InvalidEvent, UnsupportedEvent

DEFAULT_GRID = 100


class Side(Enum):
    BID = "B"
    ASK = "A"

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID

    @classmethod
    def parse(cls, text: str | "Side") -> "Side":
        if isinstance(text, Side):
            return text
        key = str(text).strip().upper()
        if key in ("B", "BID", "BUY"):
            return cls.BID
        if key in ("A", "ASK", "SELL"):
            return cls.ASK
        raise ValueError(f"unknown side {text!r}")


class EventKind(Enum):
    LIMIT = "L"
    MARKET = "M"
    CANCEL = "C"


@dataclass(frozen=True)
class OrderEvent:
    """A unit-size book event.

    ``side`` is the side of the book whose queue changes: a buy market order
    consumes the ask queue, so it is ``OrderEvent(MARKET, ASK, p_A)``.
    """

    kind: EventKind
    side: Side
    level: int
    time: float = 0.0


@dataclass(frozen=True)
class BookState:
    """Immutable signed queue vector over price levels ``1..N``."""

    queues: tuple[int, ...]

    def __post_init__(self):
        q = tuple(int(x) for x in self.queues)
        object.__setattr__(self, "queues", q)
        if not q:
            raise ValueError("empty price grid")
        if self.best_bid >= self.best_ask:
            raise ValueError("bid levels must sit strictly below ask levels")

    @property
    def N(self) -> int:
        return len(self.queues)

    def q(self, level: int) -> int:
        return self.queues[level - 1]

    @property
    def best_ask(self) -> int:
        for i, x in enumerate(self.queues, 1):
            if x > 0:
                return i
        return self.N + 1

    @property
    def best_bid(self) -> int:
        for i in range(self.N, 0, -1):
            if self.queues[i - 1] < 0:
                return i
        return 0

    @property
    def mid(self) -> float:
        return (self.best_ask + self.best_bid) / 2

    @property
    def spread(self) -> int:
        return self.best_ask - self.best_bid

    @property
    def two_sided(self) -> bool:
        return self.best_bid >= 1 and self.best_ask <= self.N

    def best(self, side: Side) -> int:
        return self.best_bid if side is Side.BID else self.best_ask

    def best_size(self, side: Side) -> int:
        return abs(self.q(self.best(side)))

    def distance(self, side: Side, level: int) -> int:
        """Ticks from the opposite best quote, with the own best quote at 0."""
        if level == self.best(side):
            return 0
        if side is Side.BID:
            return self.best_ask - level
        return level - self.best_bid

    def mirrored(self) -> "BookState":
        return BookState(tuple(-x for x in reversed(self.queues)))

    @classmethod
    def from_quotes(
        cls,
        q_ask: int,
        q_bid: int,
        spread: int,
        N: int = DEFAULT_GRID,
        deep_bid: Sequence[int] = (),
        deep_ask: Sequence[int] = (),
    ) -> "BookState":
        """Build a book with the given best queues roughly centred on the grid.

        ``deep_bid[k]`` is the size ``k + 1`` ticks below the best bid and
        ``deep_ask[k]`` the size ``k + 1`` ticks above the best ask.
        """
        if q_ask < 1 or q_bid < 1 or spread < 1:
            raise ValueError("queue sizes and spread must be positive")
        p_b = (N - spread) // 2 + 1
        p_a = p_b + spread
        if p_b - len(deep_bid) < 1 or p_a + len(deep_ask) > N or p_b < 2 or p_a > N - 1:
            raise GridTooSmall(f"grid of {N} ticks cannot hold this book")
        q = [0] * N
        q[p_b - 1] = -q_bid
        q[p_a - 1] = q_ask
        for k, v in enumerate(deep_bid, 1):
            q[p_b - k - 1] = -abs(int(v))
        for k, v in enumerate(deep_ask, 1):
            q[p_a + k - 1] = abs(int(v))
        return cls(tuple(q))


def check_event(state: BookState, event: OrderEvent) -> None:
    lvl = event.level
    if not 1 <= lvl <= state.N:
        raise InvalidEvent(f"level {lvl} outside 1..{state.N}")
    q = state.q(lvl)
    p_a, p_b = state.best_ask, state.best_bid
    kind, side = event.kind, event.side
    if kind is EventKind.LIMIT:
        ok = lvl < p_a if side is Side.BID else lvl > p_b
    elif kind is EventKind.MARKET:
        ok = lvl == (p_b if side is Side.BID else p_a) and q != 0
    else:
        ok = lvl <= p_b and q < 0 if side is Side.BID else lvl >= p_a and q > 0
    if not ok:
        raise InvalidEvent(f"{kind.name} on {side.name} at level {lvl} is not admissible")


def event_delta(event: OrderEvent) -> int:
    """Signed change of the queue entry touched by a valid event."""
    if event.kind is EventKind.LIMIT:
        return -1 if event.side is Side.BID else 1
    return 1 if event.side is Side.BID else -1


def apply_event(state: BookState, event: OrderEvent) -> BookState:
    check_event(state, event)
    q = list(state.queues)
    q[event.level - 1] += event_delta(event)
    return BookState(tuple(q))


def mirror_event(event: OrderEvent, N: int) -> OrderEvent:
    return OrderEvent(event.kind, event.side.opposite, N + 1 - event.level, event.time)


# ---------------------------------------------------------------------------
# intensity models


class IntensityModel(ABC):
    """Maps (event kind, side, distance, spread, queue size) to a rate.

    ``distance`` follows the convention of :meth:`BookState.distance`.
    ``cancel_rate`` is the total cancellation rate of the level, not a per-order
    rate.
    """

    kind = "custom"
    max_distance = 15

    @abstractmethod
    def limit_rate(self, side: Side, distance: int, spread: int, queue: int) -> float: ...

    @abstractmethod
    def market_rate(self, side: Side, spread: int, queue: int) -> float: ...

    @abstractmethod
    def cancel_rate(self, side: Side, distance: int, spread: int, queue: int) -> float: ...

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} cannot be serialized")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _clamped(value: float, label: str, record: list) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"non-finite rate for {label}")
    if value < 0:
        warnings.warn(f"negative rate {value} for {label} clamped to 0", stacklevel=3)
        record.append(label)
        return 0.0
    return value


_KEY = re.compile(r"^\(?\s*(-?\d+)\s*,\s*(-?\d+)\s*\)?$")


def _parse_key(key) -> tuple[int, int]:
    if isinstance(key, tuple):
        return int(key[0]), int(key[1])
    m = _KEY.match(str(key))
    if not m:
        raise InputError(f"bad table key {key!r}; expected '(delta,S)'")
    return int(m.group(1)), int(m.group(2))


def _table_lookup(table: Mapping[tuple[int, int], float], distance: int, spread: int) -> float:
    # the best-quote column may be stored either at 0 or at distance == spread
    rate = table.get((distance, spread))
    if rate is None and distance == 0:
        rate = table.get((spread, spread))
    return 0.0 if rate is None else rate


class ModelIII(IntensityModel):
    """Tabulated rates λ(δ,S), μ(S), θ(δ,S); cancellations are θ·|Q|.

    Missing table entries mean a zero rate.
    """

    kind = "III"

    def __init__(self, lam: Mapping, mu: Mapping, theta: Mapping):
        self.clamped: list[str] = []
        self.lam = {_parse_key(k): _clamped(v, f"lambda{k}", self.clamped) for k, v in lam.items()}
        self.mu = {int(k): _clamped(v, f"mu[{k}]", self.clamped) for k, v in mu.items()}
        self.theta = {_parse_key(k): _clamped(v, f"theta{k}", self.clamped) for k, v in theta.items()}
        deltas = [d for d, _ in self.lam] + [d for d, _ in self.theta]
        self.max_distance = max(deltas, default=0)

    def limit_rate(self, side, distance, spread, queue):
        return _table_lookup(self.lam, distance, spread)

    def market_rate(self, side, spread, queue):
        return self.mu.get(spread, 0.0)

    def cancel_rate(self, side, distance, spread, queue):
        return _table_lookup(self.theta, distance, spread) * abs(queue)

    def to_dict(self):
        key = lambda k: f"({k[0]},{k[1]})"
        return {
            "model": "III",
            "lambda": {key(k): v for k, v in sorted(self.lam.items())},
            "mu": {str(k): v for k, v in sorted(self.mu.items())},
            "theta": {key(k): v for k, v in sorted(self.theta.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("lambda", {}), d.get("mu", {}), d.get("theta", {}))


class ModelI(IntensityModel):
    """Power-law arrivals β/δ^α, constant market rate, θ(δ) per order."""

    kind = "I"

    def __init__(self, alpha: float, beta: float, mu: float, theta: Mapping | float, max_distance: int = 15):
        self.clamped: list[str] = []
        self.alpha = float(alpha)
        self.beta = _clamped(beta, "beta", self.clamped)
        self.mu = _clamped(mu, "mu", self.clamped)
        if isinstance(theta, Mapping):
            self.theta = {int(k): _clamped(v, f"theta[{k}]", self.clamped) for k, v in theta.items()}
            self.theta_default = None
        else:
            self.theta = {}
            self.theta_default = _clamped(theta, "theta", self.clamped)
        self.max_distance = int(max_distance)

    def _theta(self, distance, spread):
        if self.theta_default is not None:
            return self.theta_default
        rate = self.theta.get(distance)
        if rate is None and distance == 0:
            rate = self.theta.get(spread)
        return 0.0 if rate is None else rate

    def limit_rate(self, side, distance, spread, queue):
        if distance > self.max_distance:
            return 0.0
        return self.beta / max(distance, 1) ** self.alpha

    def market_rate(self, side, spread, queue):
        return self.mu

    def cancel_rate(self, side, distance, spread, queue):
        if distance > self.max_distance:
            return 0.0
        return self._theta(distance, spread) * abs(queue)

    def to_dict(self):
        theta = self.theta_default if self.theta_default is not None else {
            str(k): v for k, v in sorted(self.theta.items())}
        return {"model": "I", "alpha": self.alpha, "beta": self.beta, "mu": self.mu,
                "theta": theta, "max_distance": self.max_distance}

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], d["beta"], d["mu"], d["theta"], d.get("max_distance", 15))


class ModelII(IntensityModel):
    """Log-linear intensities in log S and log(1+|Q|) with an interaction term.

    Each coefficient vector is ``(c0, c1, c11, c2, c22, c12)`` and the rate is
    ``exp(c0 + c1 x + c11 x² + c2 y + c22 y² + c12 x y)`` with ``x = log S`` and
    ``y = log(1 + |Q|)``. Coefficients ``alpha`` drive limit arrivals,
    ``beta`` market orders and ``gamma`` the total cancellation rate of a level.
    Arrivals and cancellations are active up to ``max_distance`` ticks from the
    opposite best quote.
    """

    kind = "II"

    def __init__(self, alpha: Sequence[float], beta: Sequence[float], gamma: Sequence[float], max_distance: int = 15):
        self.alpha, self.beta, self.gamma = (tuple(float(x) for x in c) for c in (alpha, beta, gamma))
        for c in (self.alpha, self.beta, self.gamma):
            if len(c) != 6:
                raise InputError("Model II coefficient vectors need 6 entries")
        self.max_distance = int(max_distance)
        self.clamped: list[str] = []

    @staticmethod
    def _eval(c, spread, queue):
        x = math.log(spread)
        y = math.log1p(abs(queue))
        return math.exp(c[0] + c[1] * x + c[2] * x * x + c[3] * y + c[4] * y * y + c[5] * x * y)

    def limit_rate(self, side, distance, spread, queue):
        if distance > self.max_distance:
            return 0.0
        return self._eval(self.alpha, spread, queue)

    def market_rate(self, side, spread, queue):
        return self._eval(self.beta, spread, queue)

    def cancel_rate(self, side, distance, spread, queue):
        if queue == 0 or distance > self.max_distance:
            return 0.0
        return self._eval(self.gamma, spread, queue)

    def to_dict(self):
        return {"model": "II", "alpha": list(self.alpha), "beta": list(self.beta),
                "gamma": list(self.gamma), "max_distance": self.max_distance}

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], d["beta"], d["gamma"], d.get("max_distance", 15))


RateFn = Callable[..., float]


class CustomModel(IntensityModel):
    """Wraps user callables with the same signatures as the abstract methods."""

    kind = "custom"

    def __init__(self, limit: RateFn, market: RateFn, cancel: RateFn, max_distance: int = 15):
        self._limit, self._market, self._cancel = limit, market, cancel
        self.max_distance = max_distance

    def limit_rate(self, side, distance, spread, queue):
        return float(self._limit(side, distance, spread, queue))

    def market_rate(self, side, spread, queue):
        return float(self._market(side, spread, queue))

    def cancel_rate(self, side, distance, spread, queue):
        return float(self._cancel(side, distance, spread, queue))


def constant_model(limit: float, market: float, cancel_per_order: float = 0.0, inspread: float = 0.0) -> CustomModel:
    """State-independent rates: best-quote arrivals, market orders, per-order cancels."""
    return CustomModel(
        lambda side, d, S, q: limit if d == 0 else (inspread if d < S else 0.0),
        lambda side, S, q: market,
        lambda side, d, S, q: cancel_per_order * abs(q),
    )


_MODELS = {"I": ModelI, "II": ModelII, "III": ModelIII}


def model_from_dict(d: Mapping) -> IntensityModel:
    try:
        cls = _MODELS[str(d["model"])]
    except KeyError as exc:
        raise InputError(f"unknown or missing model kind: {d.get('model')!r}") from exc
    try:
        return cls.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed model {d.get('model')} document: {exc}") from exc


def load_model(path) -> IntensityModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc)


# ---------------------------------------------------------------------------
# state-aware evaluation


def rate_of(model: IntensityModel, state: BookState, kind: EventKind, side: Side, level: int) -> float:
    if not 1 <= level <= state.N:
        raise UnsupportedEvent(f"level {level} outside 1..{state.N}")
    if not state.two_sided:
        raise UnsupportedEvent("rates need both sides of the book")
    S = state.spread
    p_a, p_b = state.best_ask, state.best_bid
    size = abs(state.q(level))
    if kind is EventKind.LIMIT:
        if (side is Side.BID and level >= p_a) or (side is Side.ASK and level <= p_b):
            raise UnsupportedEvent(f"limit {side.name} cannot rest at level {level}")
        return model.limit_rate(side, state.distance(side, level), S, size)
    if kind is EventKind.MARKET:
        if level != state.best(side):
            raise UnsupportedEvent("market orders only hit the best quote")
        return model.market_rate(side, S, size)
    if (side is Side.BID and level > p_b) or (side is Side.ASK and level < p_a):
        raise UnsupportedEvent(f"no {side.name} orders to cancel at level {level}")
    if size == 0:
        return 0.0
    return model.cancel_rate(side, state.distance(side, level), S, size)


@dataclass(frozen=True)
class RateLadder:
    """Birth rates λ_k (k ≥ 0) and death rates μ_k + φ_k (k ≥ 1) of one queue."""

    birth_fn: Callable[[int], float]
    death_fn: Callable[[int], float]
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def birth(self, k: int) -> float:
        key = ("b", k)
        if key not in self._cache:
            self._cache[key] = float(self.birth_fn(k))
        return self._cache[key]

    def death(self, k: int) -> float:
        key = ("d", k)
        if key not in self._cache:
            self._cache[key] = float(self.death_fn(k))
        return self._cache[key]

    def births(self, n: int) -> np.ndarray:
        """λ_0 .. λ_{n-1}."""
        return np.array([self.birth(k) for k in range(n)])

    def deaths(self, n: int) -> np.ndarray:
        """Array with entry k holding the death rate at size k (entry 0 is 0)."""
        return np.array([0.0] + [self.death(k) for k in range(1, n)])

    @classmethod
    def constant(cls, birth: float, death: float) -> "RateLadder":
        return cls(lambda k: birth, lambda k: death)


def rate_ladder(model: IntensityModel, state: BookState, side: Side) -> RateLadder:
    """Best-quote queue of ``side`` as a birth–death chain with frozen spread."""
    if not state.two_sided:
        raise UnsupportedEvent("ladders need both sides of the book")
    S = state.spread
    return RateLadder(
        lambda k: model.limit_rate(side, 0, S, k),
        lambda k: model.market_rate(side, S, k) + model.cancel_rate(side, 0, S, k),
    )


def deep_cancel_ladder(model: IntensityModel, state: BookState, side: Side) -> RateLadder:
    """Cancellation-only death rates one tick behind the best quote of ``side``."""
    S = state.spread
    return RateLadder(lambda k: 0.0, lambda k: model.cancel_rate(side, S + 1, S, k))


def inspread_rate(model: IntensityModel, state: BookState, side: Side) -> float:
    """Total arrival rate of ``side`` limit orders strictly inside the spread."""
    S = state.spread
    return float(sum(model.limit_rate(side, m, S, 0) for m in range(1, S)))

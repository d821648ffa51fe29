"""Monte Carlo oracle for the race probabilities.

Two modes are available.

``frozen``
    Samples the independent passage times that the analytic races assume:
    best queues as birth–death chains with rates fixed at the starting book,
    exponential in-spread clocks, and the agent position as a pure-death chain.
    Runs in compiled code and is the reference for the analytic values.

``full``
    Simulates the whole book event by event, re-evaluating every rate after
    each event. The agent order is tracked with time priority. Differences
    from the frozen mode measure the cost of freezing the rates.
"""

from __future__ import annotations

import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import EmptyCell, GridTooSmall, InvalidEvent, Stalled
from .lob_core import (
    BookState,
    EventKind,
    IntensityModel,
    OrderEvent,
    Side,
    deep_cancel_ladder,
    inspread_rate,
    rate_ladder,
)
from .probabilities import MarketQuery, QueueDistribution, default_opposite_distribution

LADDER_SIZE = 1024
SEED_MASK = (1 << 64) - 1


def configure_threads(default: int | None = None) -> int:
    """Cap compiled-kernel parallelism with ``FILLPROB_THREADS``."""
    import numba

    raw = os.environ.get("FILLPROB_THREADS")
    n = int(raw) if raw else (default or numba.config.NUMBA_NUM_THREADS)
    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class AgentSpec:
    """Never-cancelled unit order placed last in its queue."""

    side: Side = Side.BID
    depth: str = "best"


@dataclass(frozen=True)
class SimConfig:
    model: IntensityModel
    initial: BookState
    paths: int
    seed: int
    agent: AgentSpec | None = None
    mode: str = "frozen"
    horizon: float = math.inf
    max_events: int = 1_000_000
    opposite_dist: QueueDistribution | None = None
    ladder_size: int = LADDER_SIZE
    suppress_arrivals_behind: bool = False
    record_events: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if not self.horizon > 0 or self.max_events < 1:
            raise ValueError("horizon must be positive")
        if self.mode not in ("frozen", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.initial.two_sided:
            raise ValueError("the initial book must have both sides")


@dataclass
class PathRecord:
    direction: int = 0
    tau: float = math.inf
    moved_quote: str = ""
    filled: bool = False
    fill_time: float = math.inf
    shifted: bool = False
    w: int | None = None
    opposite: int | None = None
    deep_filled: bool = False
    censored: bool = False
    events: list = field(default_factory=list)
    terminal: BookState | None = None


@dataclass
class SimOutcome:
    """Aggregate counts over all paths of one run."""

    mode: str
    paths: int
    up: int = 0
    down: int = 0
    fills: int = 0
    fill_trials: int = 0
    shifts: int = 0
    deep_fills: int = 0
    censored: int = 0
    w_counts: Counter = field(default_factory=Counter)
    opposite_counts: Counter = field(default_factory=Counter)
    occupation: dict = field(default_factory=lambda: defaultdict(float))
    event_counts: Counter = field(default_factory=Counter)
    records: list = field(default_factory=list)

    @property
    def moves(self) -> int:
        return self.up + self.down


def estimate_frequencies(outcome: SimOutcome, event: str, value: int | None = None) -> tuple[float, float, int]:
    """Relative frequency, binomial standard error and conditioning count.

    ``event`` is one of ``up``, ``down``, ``fill``, ``shift``, ``deeper`` or
    ``w`` (with ``value`` the queue position).
    """
    if event in ("up", "down"):
        hits, n = getattr(outcome, event), outcome.moves
    elif event == "fill":
        hits, n = outcome.fills, outcome.fill_trials
    elif event == "shift":
        hits, n = outcome.shifts, outcome.fill_trials
    elif event == "deeper":
        hits, n = outcome.deep_fills, outcome.fill_trials
    elif event == "w":
        hits, n = outcome.w_counts.get(value, 0), sum(outcome.w_counts.values())
    else:
        raise ValueError(f"unknown event {event!r}")
    return frequency(hits, n) + (n,)


def frequency(hits: int, n: int) -> tuple[float, float]:
    if n == 0:
        raise EmptyCell("no paths in the conditioning event")
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


def run(config: SimConfig) -> SimOutcome:
    if config.mode == "frozen":
        return _run_frozen(config)
    return _run_full(config)


# ---------------------------------------------------------------------------
# frozen mode


def _query_of(config: SimConfig) -> MarketQuery:
    book = config.initial
    agent = config.agent or AgentSpec()
    q_deep = 1
    if agent.depth == "deeper":
        lvl = book.best(agent.side) + (-1 if agent.side is Side.BID else 1)
        q_deep = abs(book.q(lvl)) if 1 <= lvl <= book.N else 0
        if q_deep < 1:
            raise ValueError("deeper agent needs a nonempty level behind its best quote")
    return MarketQuery(book.best_size(Side.ASK), book.best_size(Side.BID), book.spread, config.model,
                       agent.side, agent.depth, q_deep, book.N)


def _run_frozen(config: SimConfig) -> SimOutcome:
    query = _query_of(config)
    model, book, n = config.model, query.book(), config.ladder_size
    i, j = query.side, query.side.opposite
    lad_a, lad_b = rate_ladder(model, book, Side.ASK), rate_ladder(model, book, Side.BID)
    phi = deep_cancel_ladder(model, book, i).deaths(max(n, query.q_deep + 1))
    shifted = MarketQuery(1, 1, book.spread + 1, model, i, "best", 1, book.N).book()
    own2, opp2 = rate_ladder(model, shifted, i), rate_ladder(model, shifted, j)
    inspread2 = inspread_rate(model, shifted, Side.BID) + inspread_rate(model, shifted, Side.ASK)
    opp = config.opposite_dist if config.opposite_dist is not None else default_opposite_distribution(query)
    support = np.array([s for s, p in zip(opp.support, opp.masses) if s >= 1], dtype=np.int64)
    masses = np.array([p for s, p in zip(opp.support, opp.masses) if s >= 1])
    cdf = np.cumsum(masses / masses.sum())
    if max(query.q_ask, query.q_bid, query.q_deep, int(support.max())) >= n - 1:
        raise GridTooSmall("initial queue exceeds the materialized ladder size")

    flags = np.zeros((config.paths, K.N_FLAGS), dtype=np.int8)
    w = np.zeros(config.paths, dtype=np.int32)
    K.frozen_races(
        np.uint64(config.seed & SEED_MASK), config.paths, query.q_ask, query.q_bid, i is Side.BID,
        lad_a.births(n), lad_a.deaths(n), lad_b.births(n), lad_b.deaths(n),
        inspread_rate(model, book, Side.BID), inspread_rate(model, book, Side.ASK),
        query.q_deep, phi,
        own2.deaths(n), opp2.births(n), opp2.deaths(n), inspread2,
        support, cdf, flags, w,
    )
    totals = flags.sum(axis=0, dtype=np.int64)
    if totals[K.FLAG_OVERFLOW]:
        raise GridTooSmall(f"{totals[K.FLAG_OVERFLOW]} paths walked past queue size {n - 2}")
    resolved = int(totals[K.FLAG_UP] + totals[K.FLAG_DOWN])
    values, counts = np.unique(w, return_counts=True)
    return SimOutcome(
        mode="frozen", paths=config.paths,
        up=int(totals[K.FLAG_UP]), down=int(totals[K.FLAG_DOWN]),
        fills=int(totals[K.FLAG_FILL]), fill_trials=resolved,
        shifts=int(totals[K.FLAG_SHIFT]), deep_fills=int(totals[K.FLAG_DEEP_FILL]),
        censored=config.paths - resolved,
        w_counts=Counter({int(v): int(c) for v, c in zip(values, counts)}),
    )


# ---------------------------------------------------------------------------
# full mode


class BookEngine:
    """Mutable book with incremental best quotes and rate enumeration.

    Arrivals and cancellations are only generated within ``model.max_distance``
    ticks of the opposite best quote; tabulated models have no rates beyond it.
    """

    def __init__(self, model: IntensityModel, state: BookState):
        self.model = model
        self.q = [0] + list(state.queues)
        self.N = state.N
        self.pa = state.best_ask
        self.pb = state.best_bid
        self.window = int(getattr(model, "max_distance", 15))
        self._memo: dict = {}
        # agent bookkeeping
        self.agent_side: Side | None = None
        self.agent_level = 0
        self.agent_pos = 0
        self.ghosts = 0

    def state(self) -> BookState:
        return BookState(tuple(self.q[1:]))

    @property
    def spread(self) -> int:
        return self.pa - self.pb

    @property
    def two_sided(self) -> bool:
        return self.pb >= 1 and self.pa <= self.N

    def distance(self, side: Side, level: int) -> int:
        if side is Side.BID:
            return 0 if level == self.pb else self.pa - level
        return 0 if level == self.pa else level - self.pb

    def _rate(self, kind, side, d, S, n):
        key = (kind, side, d, S, n)
        r = self._memo.get(key)
        if r is None:
            m = self.model
            if kind is EventKind.LIMIT:
                r = m.limit_rate(side, d, S, n)
            elif kind is EventKind.MARKET:
                r = m.market_rate(side, S, n)
            else:
                r = m.cancel_rate(side, d, S, n) if n else 0.0
            if not (r >= 0 and math.isfinite(r)):
                raise ValueError(f"model returned invalid rate {r!r}")
            self._memo[key] = r
        return r

    def _size(self, side, level):
        n = abs(self.q[level])
        if self.agent_side is side and level == self.agent_level:
            n += self.ghosts
        return n

    def events(self):
        """All admissible (rate, kind, side, level) tuples at the current state."""
        S, pa, pb, W = self.spread, self.pa, self.pb, self.window
        out = []
        for lvl in range(max(1, pa - W), pa):
            out.append((self._rate(EventKind.LIMIT, Side.BID, self.distance(Side.BID, lvl), S, self._size(Side.BID, lvl)),
                        EventKind.LIMIT, Side.BID, lvl))
        for lvl in range(pb + 1, min(self.N, pb + W) + 1):
            out.append((self._rate(EventKind.LIMIT, Side.ASK, self.distance(Side.ASK, lvl), S, self._size(Side.ASK, lvl)),
                        EventKind.LIMIT, Side.ASK, lvl))
        out.append((self._rate(EventKind.MARKET, Side.BID, 0, S, self._size(Side.BID, pb)), EventKind.MARKET, Side.BID, pb))
        out.append((self._rate(EventKind.MARKET, Side.ASK, 0, S, self._size(Side.ASK, pa)), EventKind.MARKET, Side.ASK, pa))
        for lvl in range(max(1, pa - W), pb + 1):
            if self.q[lvl] < 0:
                out.append((self._cancel_rate(Side.BID, lvl, S), EventKind.CANCEL, Side.BID, lvl))
        for lvl in range(pa, min(self.N, pb + W) + 1):
            if self.q[lvl] > 0:
                out.append((self._cancel_rate(Side.ASK, lvl, S), EventKind.CANCEL, Side.ASK, lvl))
        return out

    def _cancel_rate(self, side, lvl, S):
        n = self._size(side, lvl)
        r = self._rate(EventKind.CANCEL, side, self.distance(side, lvl), S, n)
        if self.agent_side is side and lvl == self.agent_level:
            r *= (n - 1) / n
        return r

    def apply(self, kind: EventKind, side: Side, level: int) -> None:
        q = self.q
        if kind is EventKind.LIMIT:
            if side is Side.BID:
                if level >= self.pa:
                    raise InvalidEvent("bid arrival at or above the best ask")
                q[level] -= 1
                self.pb = max(self.pb, level)
            else:
                if level <= self.pb:
                    raise InvalidEvent("ask arrival at or below the best bid")
                q[level] += 1
                self.pa = min(self.pa, level)
            return
        if side is Side.BID:
            if q[level] >= 0 or level > self.pb:
                raise InvalidEvent("no bid order to remove")
            q[level] += 1
            if level == self.pb and q[level] == 0:
                lvl = level - 1
                while lvl >= 1 and q[lvl] >= 0:
                    lvl -= 1
                self.pb = lvl
        else:
            if q[level] <= 0 or level < self.pa:
                raise InvalidEvent("no ask order to remove")
            q[level] -= 1
            if level == self.pa and q[level] == 0:
                lvl = level + 1
                while lvl <= self.N and q[lvl] <= 0:
                    lvl += 1
                self.pa = lvl

    def recentre(self, margin: int) -> int:
        """Translate the book so the mid sits near the grid centre; returns the shift."""
        if self.pb > margin and self.pa < self.N + 1 - margin:
            return 0
        shift = (self.N + 1) // 2 - (self.pa + self.pb) // 2
        old = self.q[1:]
        new = [0] * self.N
        for idx, v in enumerate(old):
            j = idx + shift
            if 0 <= j < self.N:
                new[j] = v
        self.q = [0] + new
        self.pa += shift
        self.pb += shift
        self.agent_level += shift if self.agent_level else 0
        return shift


def _path_rng(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & SEED_MASK, path])))


def _select(rng, events):
    rates = [e[0] for e in events]
    total = math.fsum(rates)
    if total <= 0:
        return None, 0.0
    dt = rng.exponential(1.0 / total)
    u = rng.random() * total
    acc = 0.0
    for e in events:
        acc += e[0]
        if u < acc and e[0] > 0:
            return e, dt
    for e in reversed(events):
        if e[0] > 0:
            return e, dt
    return None, dt


def _run_full(config: SimConfig) -> SimOutcome:
    out = SimOutcome(mode="full", paths=config.paths)
    for p in range(config.paths):
        rec = simulate_path(config, p, out)
        out.records.append(rec)
        if rec.censored:
            out.censored += 1
            continue
        if rec.direction > 0:
            out.up += 1
        elif rec.direction < 0:
            out.down += 1
        out.fill_trials += 1
        out.fills += rec.filled
        out.shifts += rec.shifted
        out.deep_fills += rec.deep_filled
        if rec.w is not None:
            out.w_counts[rec.w] += 1
            out.opposite_counts[rec.opposite] += 1
    if not config.record_events:
        for rec in out.records:
            rec.events = []
    return out


def simulate_path(config: SimConfig, path: int, sink: SimOutcome | None = None) -> PathRecord:
    """Simulate one full-mode path until the mid moves.

    A deeper agent whose quote shifts at that move is followed until the next
    mid move to decide whether it fills.
    """
    eng = BookEngine(config.model, config.initial)
    rng = _path_rng(config.seed, path)
    agent = config.agent
    if agent is not None:
        eng.agent_side = agent.side
        best = eng.pb if agent.side is Side.BID else eng.pa
        step = 0 if agent.depth == "best" else (-1 if agent.side is Side.BID else 1)
        eng.agent_level = best + step
        if not 1 <= eng.agent_level <= eng.N or eng.q[eng.agent_level] == 0:
            raise ValueError("agent level is empty")
        eng.agent_pos = abs(eng.q[eng.agent_level])
    rec = PathRecord()
    t = 0.0
    after_shift = False
    for _ in range(config.max_events):
        choice, dt = _select(rng, eng.events())
        if choice is None:
            raise Stalled("all event rates are zero")
        _, kind, side, level = choice
        if t + dt > config.horizon:
            rec.censored = True
            break
        S = eng.spread
        if sink is not None:
            sink.occupation[S] += dt
            sink.event_counts[(kind.value, side.value, eng.distance(side, level), S)] += 1
        t += dt
        before_a, before_b = eng.pa, eng.pb
        if not _agent_bookkeeping(eng, kind, side, level, rng, config.suppress_arrivals_behind, rec, t):
            eng.apply(kind, side, level)
            if config.record_events:
                rec.events.append(OrderEvent(kind, side, level, t))
        if eng.pa + eng.pb == before_a + before_b:
            continue
        if after_shift:
            break
        rec.tau = t
        rec.direction = 1 if eng.pa + eng.pb > before_a + before_b else -1
        rec.moved_quote = side.value
        if agent is None:
            break
        moved_away = eng.pb < before_b if agent.side is Side.BID else eng.pa > before_a
        rec.shifted = moved_away
        if agent.depth == "best" or not moved_away:
            break
        rec.w = eng.agent_pos
        rec.opposite = abs(eng.q[eng.pa]) if agent.side is Side.BID and eng.pa <= eng.N else (
            abs(eng.q[eng.pb]) if agent.side is Side.ASK and eng.pb >= 1 else 0)
        if not eng.two_sided:
            break
        after_shift = True
    else:
        rec.censored = True
    if agent is not None and agent.depth == "deeper":
        rec.deep_filled = rec.shifted and rec.filled
    rec.terminal = eng.state() if config.record_events else None
    return rec


def _agent_bookkeeping(eng: BookEngine, kind, side, level, rng, suppress, rec, t) -> bool:
    """Update the agent's position; returns True when the event is a null event."""
    if eng.agent_side is not side or level != eng.agent_level:
        return False
    if kind is EventKind.LIMIT:
        if suppress:
            eng.ghosts += 1
            return True
        return False
    if kind is EventKind.MARKET:
        if eng.agent_pos == 1:
            rec.filled = True
            rec.fill_time = t
            eng.agent_side = None
            eng.agent_level = 0
        else:
            eng.agent_pos -= 1
        return False
    real = abs(eng.q[level])
    others = real - 1 + eng.ghosts
    u = rng.random() * others
    if u < eng.agent_pos - 1:
        eng.agent_pos -= 1
        return False
    if u < real - 1:
        return False
    eng.ghosts -= 1
    return True


# ---------------------------------------------------------------------------
# continuous runs with event-log emission


@dataclass
class EventLog:
    rows: list            # (time, kind, side, distance, spread, size, q_ask, q_bid, mid2)
    snapshots: list       # (time, spread, side, distance, volume)
    occupation: dict
    event_counts: Counter
    move_counts: dict     # (q_ask, q_bid, S) -> [ups, moves]
    duration: float


def simulate_event_log(model: IntensityModel, initial: BookState, n_events: int, seed: int,
                       snapshot_interval: float = 1.0, max_distance: int = 15) -> EventLog:
    """Run the book for ``n_events`` events, recording a calibration log.

    Depth snapshots are taken on a uniform time grid. The mid-move frequency
    grid is aggregated in-loop from the pre-event state of every event.
    """
    eng = BookEngine(model, initial)
    rng = _path_rng(seed, 0)
    margin = eng.window + 5
    offset = 0
    t = 0.0
    next_snap = 0.0
    rows, snaps = [], []
    occupation: dict = defaultdict(float)
    counts: Counter = Counter()
    moves: dict = defaultdict(lambda: [0, 0])
    pending: list = []
    last_mid = None
    for _ in range(n_events):
        offset += eng.recentre(margin)
        if not eng.two_sided:
            raise Stalled("one side of the book emptied")
        choice, dt = _select(rng, eng.events())
        if choice is None:
            raise Stalled("all event rates are zero")
        _, kind, side, level = choice
        S = eng.spread
        mid2 = eng.pa + eng.pb - 2 * offset
        while next_snap < t + dt:
            snaps.extend(_snapshot(eng, next_snap, max_distance))
            next_snap += snapshot_interval
        t += dt
        occupation[S] += dt
        d = eng.distance(side, level)
        counts[(kind.value, side.value, d, S)] += 1
        qa, qb = abs(eng.q[eng.pa]), abs(eng.q[eng.pb])
        rows.append((t, kind.value, side.value, d, S, 1, qa, qb, mid2))
        if last_mid is not None and mid2 != last_mid:
            for cell in pending:
                moves[cell][0] += mid2 > last_mid
                moves[cell][1] += 1
            pending = []
        pending.append((qa, qb, S))
        last_mid = mid2
        eng.apply(kind, side, level)
    return EventLog(rows, snaps, dict(occupation), counts, dict(moves), t)


def _snapshot(eng: BookEngine, time: float, max_distance: int):
    S = eng.spread
    out = []
    for side in (Side.BID, Side.ASK):
        best = eng.pb if side is Side.BID else eng.pa
        out.append((time, S, side.value, 0, abs(eng.q[best])))
        for d in range(S + 1, max_distance + 1):
            lvl = eng.pa - d if side is Side.BID else eng.pb + d
            if 1 <= lvl <= eng.N:
                out.append((time, S, side.value, d, abs(eng.q[lvl])))
    return out


EVENT_HEADER = ("time_s", "kind", "side", "distance_ticks", "spread_ticks", "size", "q_ask", "q_bid", "mid_ticks_x2")
DEPTH_HEADER = ("time_s", "spread_ticks", "side", "distance_ticks", "volume")


def write_event_log(log: EventLog, events_path, depth_path=None) -> None:
    import csv

    with open(events_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for r in log.rows:
            w.writerow((repr(r[0]),) + r[1:])
    if depth_path is not None:
        with open(depth_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DEPTH_HEADER)
            for r in log.snapshots:
                w.writerow((repr(r[0]),) + r[1:])

"""Spread-conditioned rate estimation from annotated event logs.

The event log lists one row per book event with the distance (ticks from the
opposite best quote, 0 at the event's own best quote) and the spread before
the event. Depth snapshots give queue volumes by side and distance.

Raw estimators pool both sides of the book. The per-side model published by
:meth:`RateTable.model` halves every pooled rate.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence


from .errors import EmptySpreadCell, InputError, InsufficientData, ZeroDepth
from .lob_core import ModelIII

EVENT_COLUMNS = ("time_s", "kind", "side", "distance_ticks", "spread_ticks", "size")
DEPTH_COLUMNS = ("time_s", "spread_ticks", "side", "distance_ticks", "volume")
STATE_COLUMNS = ("q_ask", "q_bid", "mid_ticks_x2")
DELTA_CAP = 15
SPREAD_CAP = 5
MIN_COUNT = 100


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    side: str
    distance: int
    spread: int
    size: float
    q_ask: int | None = None
    q_bid: int | None = None
    mid2: int | None = None


@dataclass(frozen=True)
class DepthSnapshot:
    time: float
    spread: int
    side: str
    distance: int
    volume: float


def _open_rows(path, required: Sequence[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise InputError(f"{path}: missing columns {missing}")
    return fh, reader


def read_events(path) -> list[EventRecord]:
    fh, reader = _open_rows(path, EVENT_COLUMNS)
    with fh:
        has_state = all(c in (reader.fieldnames or []) for c in STATE_COLUMNS)
        records = []
        for line, row in enumerate(reader, start=2):
            try:
                rec = EventRecord(
                    float(row["time_s"]), row["kind"].strip(), row["side"].strip(),
                    int(row["distance_ticks"]), int(row["spread_ticks"]), float(row["size"]),
                    *((int(row["q_ask"]), int(row["q_bid"]), int(row["mid_ticks_x2"])) if has_state else ()),
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{line}: {exc}") from exc
            records.append(rec)
    validate_events(records)
    return records


def validate_events(events: Sequence[EventRecord]) -> None:
    prev = -math.inf
    for n, e in enumerate(events, start=1):
        if e.kind not in ("L", "M", "C"):
            raise InputError(f"event {n}: kind must be L, M or C")
        if e.side not in ("B", "A"):
            raise InputError(f"event {n}: side must be B or A")
        if not math.isfinite(e.time) or e.time < prev:
            raise InputError(f"event {n}: non-monotone time")
        if e.spread < 1 or e.distance < 0 or not e.size > 0:
            raise InputError(f"event {n}: need spread >= 1, distance >= 0, size > 0")
        prev = e.time


def read_depth(path) -> list[DepthSnapshot]:
    fh, reader = _open_rows(path, DEPTH_COLUMNS)
    with fh:
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                snap = DepthSnapshot(float(row["time_s"]), int(row["spread_ticks"]), row["side"].strip(),
                                     int(row["distance_ticks"]), float(row["volume"]))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{line}: {exc}") from exc
            if snap.volume < 0 or snap.side not in ("B", "A") or snap.spread < 1:
                raise InputError(f"{path}:{line}: invalid snapshot row")
            out.append(snap)
    return out


@dataclass
class SpreadClock:
    occupation: dict

    @classmethod
    def from_events(cls, events: Sequence[EventRecord]) -> "SpreadClock":
        """Each inter-event interval is charged to the spread seen by the later event."""
        occ: dict = defaultdict(float)
        for prev, cur in zip(events, events[1:]):
            occ[cur.spread] += cur.time - prev.time
        return cls(dict(occ))

    def __getitem__(self, S: int) -> float:
        return self.occupation.get(S, 0.0)

    @property
    def duration(self) -> float:
        return math.fsum(self.occupation.values())


@dataclass
class LogCounts:
    """Sufficient statistics of one log; logs combine by addition."""

    limit: Counter = field(default_factory=Counter)
    market: Counter = field(default_factory=Counter)
    cancel: Counter = field(default_factory=Counter)
    occupation: Counter = field(default_factory=Counter)
    size_sum: Counter = field(default_factory=Counter)
    size_n: Counter = field(default_factory=Counter)
    volume_sum: Counter = field(default_factory=Counter)
    snapshot_times: Counter = field(default_factory=Counter)
    overflow: int = 0

    def __add__(self, other: "LogCounts") -> "LogCounts":
        out = LogCounts()
        for name in ("limit", "market", "cancel", "occupation", "size_sum", "size_n", "volume_sum", "snapshot_times"):
            getattr(out, name).update(getattr(self, name))
            getattr(out, name).update(getattr(other, name))
        out.overflow = self.overflow + other.overflow
        return out


def count_log(events: Sequence[EventRecord], snapshots: Iterable[DepthSnapshot] = (),
              delta_cap: int = DELTA_CAP, spread_cap: int = SPREAD_CAP) -> LogCounts:
    c = LogCounts()
    c.occupation.update(SpreadClock.from_events(events).occupation)
    for e in events:
        c.size_sum[e.kind] += e.size
        c.size_n[e.kind] += 1
        if e.spread > spread_cap or e.distance > delta_cap:
            c.overflow += 1
        elif e.kind == "L":
            c.limit[(e.distance, e.spread)] += 1
        elif e.kind == "M":
            c.market[e.spread] += 1
        else:
            c.cancel[(e.distance, e.spread)] += 1
    times = defaultdict(set)
    for s in snapshots:
        times[s.spread].add(s.time)
        c.volume_sum[(s.side, s.distance, s.spread)] += s.volume
    for S, ts in times.items():
        c.snapshot_times[S] += len(ts)
    return c


def size_ratios(counts: LogCounts) -> tuple[float, float]:
    """(S_m/S_l, S_c/S_l) from mean event sizes; 1.0 when undetermined."""
    mean = {k: counts.size_sum[k] / counts.size_n[k] for k in counts.size_n if counts.size_n[k]}
    if "L" not in mean:
        return 1.0, 1.0
    return mean.get("M", mean["L"]) / mean["L"], mean.get("C", mean["L"]) / mean["L"]


def _rate(n: int, T: float, S: int) -> float:
    if n == 0:
        return 0.0
    if T <= 0:
        raise EmptySpreadCell(f"{n} events at spread {S} but zero occupation time")
    return n / T


def estimate_lambda(counts: LogCounts) -> dict:
    return {k: _rate(n, counts.occupation[k[1]], k[1]) for k, n in sorted(counts.limit.items())}


def estimate_mu(counts: LogCounts, ratio: float = 1.0) -> dict:
    return {S: _rate(n, counts.occupation[S], S) * ratio for S, n in sorted(counts.market.items())}


def average_depth(counts: LogCounts, limit_size: float = 1.0) -> dict:
    """Q_δ^S: mean of the two sides' average volumes, in units of the limit size."""
    out = {}
    keys = {(d, S) for (_, d, S) in counts.volume_sum}
    for d, S in sorted(keys):
        M = counts.snapshot_times[S]
        sides = [counts.volume_sum[(side, d, S)] / M for side in ("B", "A")]
        out[(d, S)] = (sides[0] + sides[1]) / 2 / limit_size
    return out


def estimate_theta(counts: LogCounts, depth: dict, ratio: float = 1.0, skipped: list | None = None) -> dict:
    """Cancellation rate per resting unit.

    Cells with cancellations but no recorded depth raise :class:`ZeroDepth`,
    or are left out and appended to ``skipped`` when a list is given.
    """
    out = {}
    for (d, S), n in sorted(counts.cancel.items()):
        if n == 0:
            out[(d, S)] = 0.0
            continue
        Q = depth.get((d, S), 0.0)
        if Q <= 0:
            if skipped is None:
                raise ZeroDepth(f"{n} cancellations at (delta={d}, S={S}) with zero recorded depth")
            skipped.append((d, S))
            continue
        out[(d, S)] = _rate(n, counts.occupation[S], S) / Q * ratio
    return out


@dataclass
class RateTable:
    lam: dict
    mu: dict
    theta: dict
    market_ratio: float
    cancel_ratio: float
    depth: dict
    occupation: dict
    counts: LogCounts
    notes: list = field(default_factory=list)

    def model(self) -> ModelIII:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            m = ModelIII({k: v / 2 for k, v in self.lam.items()},
                         {k: v / 2 for k, v in self.mu.items()},
                         {k: v / 2 for k, v in self.theta.items()})
        self.notes.extend(str(w.message) for w in caught)
        return m

    def to_dict(self) -> dict:
        doc = self.model().to_dict()
        key = lambda k: f"({k[0]},{k[1]})"
        doc["calibration"] = {
            "pooled_lambda": {key(k): v for k, v in self.lam.items()},
            "pooled_mu": {str(k): v for k, v in self.mu.items()},
            "pooled_theta": {key(k): v for k, v in self.theta.items()},
            "market_size_ratio": self.market_ratio,
            "cancel_size_ratio": self.cancel_ratio,
            "average_depth": {key(k): v for k, v in self.depth.items()},
            "occupation_s": {str(k): v for k, v in sorted(self.occupation.items())},
            "overflow_events": self.counts.overflow,
            "notes": list(self.notes),
        }
        return doc


def calibrate(events: Sequence[EventRecord], snapshots: Sequence[DepthSnapshot] = (),
              ratios: tuple[float, float] | None = None,
              delta_cap: int = DELTA_CAP, spread_cap: int = SPREAD_CAP) -> RateTable:
    return calibrate_counts(count_log(events, snapshots, delta_cap, spread_cap), ratios)


def calibrate_counts(counts: LogCounts, ratios: tuple[float, float] | None = None) -> RateTable:
    notes = []
    if not counts.size_n:
        notes.append("empty event log: all rates are zero")
        warnings.warn(notes[-1], stacklevel=2)
    r_m, r_c = ratios if ratios is not None else size_ratios(counts)
    if r_m <= 0 or r_c <= 0:
        raise InputError("size ratios must be positive")
    limit_size = counts.size_sum["L"] / counts.size_n["L"] if counts.size_n["L"] else 1.0
    depth = average_depth(counts, limit_size)
    no_depth: list = []
    theta = estimate_theta(counts, depth, r_c, no_depth)
    table = RateTable(estimate_lambda(counts), estimate_mu(counts, r_m), theta,
                      r_m, r_c, depth, dict(counts.occupation), counts, notes)
    if no_depth:
        notes.append("no depth snapshot for cancellation cells " + ", ".join(f"({d},{S})" for d, S in no_depth)
                     + "; their cancellation rates are left out")
        warnings.warn(notes[-1], stacklevel=2)
    if counts.overflow:
        notes.append(f"{counts.overflow} events beyond the distance/spread caps were excluded")
    return table


def mape(empirical: Sequence[float], model: Sequence[float]) -> float:
    """Mean absolute percentage error over cells with nonzero empirical value."""
    if len(empirical) != len(model) or not empirical:
        raise ValueError("need two nonempty sequences of equal length")
    pairs = [(p, q) for p, q in zip(empirical, model) if p != 0]
    skipped = len(empirical) - len(pairs)
    if skipped:
        warnings.warn(f"{skipped} cells with zero empirical probability excluded", stacklevel=2)
    if not pairs:
        raise ZeroDivisionError("every empirical probability is zero")
    return math.fsum(abs(p - q) / abs(p) for p, q in pairs) / len(pairs)


@dataclass(frozen=True)
class EmpiricalCell:
    value: float
    hits: int
    count: int
    sufficient: bool


def _cells(raw: dict, min_count: int) -> dict:
    return {k: EmpiricalCell(h / n, h, n, n >= min_count) for k, (h, n) in sorted(raw.items()) if n}


def empirical_conditional_tables(events: Sequence[EventRecord], min_count: int = MIN_COUNT) -> dict:
    """Empirical grids from a log carrying the pre-event best queues and mid.

    ``"mid_up"`` maps (q_A, q_B, S) to the frequency that the next mid move is
    upward. ``"ask_after_bid_drop"`` maps S to the distribution of the best ask
    queue right after the best bid queue empties. Cells under ``min_count``
    observations are marked insufficient.
    """
    if events and events[0].mid2 is None:
        raise InputError("log lacks the q_ask, q_bid and mid_ticks_x2 columns")
    moves: dict = defaultdict(lambda: [0, 0])
    pending: list = []
    last_mid = None
    after_drop: dict = defaultdict(Counter)
    for prev, e in zip([None] + list(events[:-1]), events):
        if last_mid is not None and e.mid2 != last_mid:
            for cell in pending:
                moves[cell][0] += e.mid2 > last_mid
                moves[cell][1] += 1
            pending = []
        if prev is not None and prev.side == "B" and prev.kind in ("M", "C") and prev.distance == 0 and prev.q_bid == 1:
            after_drop[prev.spread][e.q_ask] += 1
        pending.append((e.q_ask, e.q_bid, e.spread))
        last_mid = e.mid2
    return {
        "mid_up": _cells(moves, min_count),
        "ask_after_bid_drop": {S: dict(sorted(c.items())) for S, c in sorted(after_drop.items())},
    }


def require_sufficient(cell: EmpiricalCell) -> float:
    if not cell.sufficient:
        raise InsufficientData(f"only {cell.count} observations")
    return cell.value

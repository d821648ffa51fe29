"""Command-line entry point: calibrate, prob, simulate, validate.

Exit codes: 0 success, 1 some grid cells failed, 2 input error. Errors are
printed to stderr as a JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import calibration as cal
from .errors import FillProbError, InputError, KeyMismatch
from .lob_core import BookState, Side, load_model
from .probabilities import (
    MarketQuery,
    QueueDistribution,
    Settings,
    best_quote_fill_prob,
    deeper_fill_prob,
    mid_price_move_prob,
    quote_shift_prob,
)

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT = 0, 1, 2
KEY_COLUMNS = ("s0", "qA", "qB", "depth", "q_deep", "direction")
PROB_COLUMNS = KEY_COLUMNS + ("value", "method", "converged")
FREQ_COLUMNS = KEY_COLUMNS + ("value", "se", "n", "mode")
QUANTITIES = ("mid", "fill", "shift", "deeper")

# best-ask queue size right after the best bid empties, by spread before the move
S54_ASK_QUEUE = {
    1: {1: 0.762, 2: 0.220, 3: 0.016, 6: 0.002},
    2: {1: 0.822, 2: 0.152, 3: 0.014, 6: 0.006},
}


class CliError(Exception):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_grid(text: str) -> dict[str, list[int]]:
    """``"qA=1..5,qB=1..5,s0=1..2"``; single values and ``a..b`` ranges."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(qA|qB|s0)\s*=\s*(\d+)(?:\.\.(\d+))?", part)
        if not m:
            raise InputError(f"bad grid component {part!r}")
        lo = int(m.group(2))
        hi = int(m.group(3) or lo)
        if lo < 1 or hi < lo:
            raise InputError(f"bad range in {part!r}")
        out[m.group(1)] = list(range(lo, hi + 1))
    missing = {"qA", "qB", "s0"} - out.keys()
    if missing:
        raise InputError(f"grid lacks {sorted(missing)}")
    return out


def _cells(grid):
    for s0 in grid["s0"]:
        for qa in grid["qA"]:
            for qb in grid["qB"]:
                yield s0, qa, qb


def _quantities(arg: str) -> list[str]:
    if arg == "all":
        return list(QUANTITIES)
    qs = [q.strip() for q in arg.split(",")]
    bad = [q for q in qs if q not in QUANTITIES]
    if bad:
        raise InputError(f"unknown quantities {bad}")
    return qs


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | None, flag: str) -> str:
    if not path:
        raise InputError(f"{flag} is required")
    if not Path(path).is_file():
        raise InputError(f"{flag}: no such file {path}")
    return path


def _read_distribution(path: str) -> QueueDistribution:
    with open(_require_file(path, "--opposite-dist"), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return QueueDistribution.from_weights({int(r["n"]): float(r["mass"]) for r in rows})
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: expected columns n,mass ({exc})") from exc


def _direction(side: Side) -> str:
    return "bid" if side is Side.BID else "ask"


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    events = cal.read_events(_require_file(args.events, "--events"))
    snaps = cal.read_depth(_require_file(args.depth, "--depth")) if args.depth else []
    ratios = None
    if args.market_ratio is not None or args.cancel_ratio is not None:
        ratios = (args.market_ratio or 1.0, args.cancel_ratio or 1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = cal.calibrate(events, snaps, ratios, args.delta_cap, args.spread_cap)
        doc = table.to_dict()
    out = _out_dir(args.out)
    _write_json(out / "ratetable.json", doc)
    lines = [
        f"events: {len(events)}",
        f"limit/market/cancel: {sum(table.counts.limit.values())}/"
        f"{sum(table.counts.market.values())}/{sum(table.counts.cancel.values())}",
        f"overflow events: {table.counts.overflow}",
        f"size ratios market/cancel: {table.market_ratio!r}/{table.cancel_ratio!r}",
        "occupation time by spread:",
        *(f"  S={S}: {T!r} s" for S, T in sorted(table.occupation.items())),
        "notes:",
        *(f"  {n}" for n in table.notes),
        *(f"  warning: {w.message}" for w in caught if str(w.message) not in table.notes),
    ]
    (out / "calibration_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _settings(args) -> Settings:
    return Settings(method=args.method, hit_convention=args.hit_convention)


def _prob_rows(model, grid, quantities, args, settings):
    side = Side.parse(args.side)
    opposite = _read_distribution(args.opposite_dist) if args.opposite_dist else None
    cache: dict = {}
    for s0, qa, qb in _cells(grid):
        for quantity in quantities:
            depth = "deeper" if quantity == "deeper" else "best"
            q_deep = args.q_deep if quantity == "deeper" else 0
            query = MarketQuery(qa, qb, s0, model, side, depth, max(q_deep, 1))
            label = {"mid": "mid", "fill": "best", "shift": "shift", "deeper": "deeper"}[quantity]
            direction = args.direction if quantity == "mid" else _direction(side)
            key = (s0, qa, qb, label, q_deep, direction)
            try:
                if quantity == "mid":
                    res = mid_price_move_prob(query, direction, settings)
                elif quantity == "fill":
                    res = best_quote_fill_prob(query, settings)
                elif quantity == "shift":
                    res = quote_shift_prob(query, settings)
                else:
                    opp = opposite
                    if opp is None and args.paper_s54:
                        opp = QueueDistribution.from_weights(S54_ASK_QUEUE.get(s0, S54_ASK_QUEUE[2]))
                    res = deeper_fill_prob(query, opp, None, settings, truncate=args.paper_s54, cache=cache)
                yield key, res.value, True, res.diagnostics
            except FillProbError as exc:
                yield key, math.nan, False, {"error": type(exc).__name__, "message": str(exc)}


def cmd_prob(args) -> int:
    model = load_model(_require_file(args.model, "--model"))
    grid = parse_grid(args.grid)
    settings = _settings(args)
    rows, mirror = [], []
    for key, value, ok, diag in _prob_rows(model, grid, _quantities(args.quantity), args, settings):
        rows.append(key + (_fmt(value), settings.method, str(ok).lower()))
        mirror.append({**dict(zip(KEY_COLUMNS, key)), "value": value if ok else None,
                       "method": settings.method, "converged": ok, "diagnostics": diag})
    out = _out_dir(args.out)
    _write_csv(out / "probs.csv", PROB_COLUMNS, rows)
    _write_json(out / "probs.json", {"cells": mirror, "grid": args.grid, "method": settings.method,
                                     "hit_convention": settings.hit_convention, "paper_s54": args.paper_s54})
    failed = sum(not m["converged"] for m in mirror)
    if failed == len(mirror):
        raise CliError("no grid cell could be computed")
    return EXIT_PARTIAL if failed else EXIT_OK


def _cell_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed & ((1 << 64) - 1), *parts]).generate_state(1, np.uint64)[0])


def cmd_simulate(args) -> int:
    from .simulator import (
        AgentSpec,
        SimConfig,
        configure_threads,
        estimate_frequencies,
        run,
        simulate_event_log,
        write_event_log,
    )

    model = load_model(_require_file(args.model, "--model"))
    if args.paths < 1:
        raise InputError("--paths must be at least 1")
    configure_threads()
    out = _out_dir(args.out)
    rows = []
    failed = 0
    side = Side.parse(args.side)
    if args.grid:
        grid = parse_grid(args.grid)
        quantities = _quantities(args.quantity)
        for s0, qa, qb in _cells(grid):
            deep = (args.q_deep,)
            book = BookState.from_quotes(qa, qb, s0, deep_bid=deep if side is Side.BID else (),
                                         deep_ask=deep if side is Side.ASK else ())
            depth = "deeper" if "deeper" in quantities else "best"
            config = SimConfig(model, book, args.paths, _cell_seed(args.seed, s0, qa, qb),
                               AgentSpec(side, depth), mode=args.mode)
            try:
                outcome = run(config)
            except FillProbError as exc:
                failed += 1
                print(json.dumps({"cell": [s0, qa, qb], "error": type(exc).__name__, "message": str(exc)}),
                      file=sys.stderr)
                continue
            if depth == "deeper" and args.mode == "full":
                best = run(SimConfig(model, book, args.paths, _cell_seed(args.seed, s0, qa, qb, 1),
                                     AgentSpec(side, "best"), mode=args.mode))
            else:
                best = outcome
            for quantity in quantities:
                source = outcome if quantity in ("mid", "deeper") else best
                event = {"mid": args.direction, "fill": "fill", "shift": "shift", "deeper": "deeper"}[quantity]
                label = {"mid": "mid", "fill": "best", "shift": "shift", "deeper": "deeper"}[quantity]
                q_deep = args.q_deep if quantity == "deeper" else 0
                direction = args.direction if quantity == "mid" else _direction(side)
                try:
                    p, se, n = estimate_frequencies(source, event)
                except FillProbError:
                    p, se, n = math.nan, math.nan, 0
                rows.append((s0, qa, qb, label, q_deep, direction, _fmt(p), _fmt(se), n, args.mode))
        _write_csv(out / "freqs.csv", FREQ_COLUMNS, rows)
    if args.emit_events:
        initial = BookState.from_quotes(2, 2, 1, deep_bid=(2,) * 10, deep_ask=(2,) * 10)
        log = simulate_event_log(model, initial, args.emit_events, args.seed, args.snapshot_interval)
        write_event_log(log, out / "events.csv", out / "depth.csv")
    if not args.grid and not args.emit_events:
        raise InputError("simulate needs --grid and/or --emit-events")
    if args.grid and failed == len(rows) + failed and failed:
        raise CliError("every simulated cell failed")
    return EXIT_PARTIAL if failed else EXIT_OK


def _read_table(path: str) -> dict:
    with open(_require_file(path, "table"), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in KEY_COLUMNS + ("value",) if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        out = {}
        for row in reader:
            try:
                key = (int(row["s0"]), int(row["qA"]), int(row["qB"]), row["depth"], int(row["q_deep"]), row["direction"])
                se = float(row["se"]) if row.get("se") not in (None, "") else None
                out[key] = (float(row["value"]), se)
            except ValueError as exc:
                raise InputError(f"{path}: {exc}") from exc
    return out


def cmd_validate(args) -> int:
    model = _read_table(args.probs)
    other_path = args.freqs or args.empirical
    if not other_path:
        raise InputError("--freqs or --empirical is required")
    ref = _read_table(other_path)
    missing = sorted(set(model) ^ set(ref))
    if missing:
        raise KeyMismatch(f"{len(missing)} cells present in only one table", [list(k) for k in missing])
    cells, by_spread, skipped = [], defaultdict(list), 0
    passed = True
    for key in sorted(model):
        p_hat, _ = model[key]
        p, se = ref[key]
        err = abs(p - p_hat)
        ok = None if se is None or math.isnan(se) else bool(err <= 3 * se)
        if ok is False:
            passed = False
        cells.append({**dict(zip(KEY_COLUMNS, key)), "model": p_hat, "reference": p, "abs_error": err,
                      "se": se, "within_3se": ok})
        if p != 0 and not math.isnan(p) and not math.isnan(p_hat):
            by_spread[key[0]].append(err / abs(p))
        else:
            skipped += 1
    all_terms = [x for v in by_spread.values() for x in v]
    report = {
        "mape": math.fsum(all_terms) / len(all_terms) if all_terms else None,
        "mape_by_spread": {str(S): math.fsum(v) / len(v) for S, v in sorted(by_spread.items())},
        "excluded_cells": skipped,
        "cells": cells,
        "all_within_3se": passed,
    }
    _write_json(_out_dir(args.out) / "report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fillprob", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate a Model III rate table from an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--depth")
    p.add_argument("--out", required=True)
    p.add_argument("--market-ratio", type=float)
    p.add_argument("--cancel-ratio", type=float)
    p.add_argument("--delta-cap", type=int, default=cal.DELTA_CAP)
    p.add_argument("--spread-cap", type=int, default=cal.SPREAD_CAP)
    p.set_defaults(func=cmd_calibrate)

    def grid_flags(p, grid_required=True):
        p.add_argument("--model", required=True, help="model or rate-table JSON")
        p.add_argument("--grid", required=grid_required, help='e.g. "qA=1..5,qB=1..5,s0=1..5"')
        p.add_argument("--quantity", default="mid", help="mid, fill, shift, deeper, a comma list, or all")
        p.add_argument("--direction", choices=("up", "down"), default="up")
        p.add_argument("--side", default="bid", help="agent side for fill quantities")
        p.add_argument("--q-deep", type=int, default=2)
        p.add_argument("--out", required=True)

    p = sub.add_parser("prob", help="analytic probability grid")
    grid_flags(p)
    p.add_argument("--method", choices=("cos", "euler"), default="cos")
    p.add_argument("--hit-convention", choices=("step-count", "paper"), default="step-count")
    p.add_argument("--opposite-dist", help="CSV n,mass for the opposite queue after a quote shift")
    p.add_argument("--paper-s54", action="store_true",
                   help="keep positions and opposite sizes up to 2 and use the tabulated ask-queue distribution")
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("simulate", help="Monte Carlo frequency grid and optional event log")
    grid_flags(p, grid_required=False)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("frozen", "full"), default="frozen")
    p.add_argument("--emit-events", type=int, default=0, help="also write an event log of this many events")
    p.add_argument("--snapshot-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="compare an analytic grid with frequencies")
    p.add_argument("--probs", required=True)
    p.add_argument("--freqs")
    p.add_argument("--empirical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, KeyMismatch):
        doc["unmatched"] = exc.missing
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "q_deep", 1) < 1:
        return _fail(InputError("--q-deep must be at least 1"), EXIT_INPUT)
    try:
        return args.func(args)
    except (InputError, KeyMismatch, OSError, ValueError, CliError) as exc:
        return _fail(exc, EXIT_INPUT)
    except FillProbError as exc:
        return _fail(exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())

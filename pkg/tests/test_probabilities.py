import itertools

import numpy as np
import pytest

from conftest import synthetic_model, within_se
from fillprob.errors import MassLeak
from fillprob.lob_core import BookState, ModelIII, RateLadder, Side
from fillprob.probabilities import (
    Direction,
    MarketQuery,
    QueueDistribution,
    Settings,
    best_quote_fill_prob,
    conditional_deeper_fill,
    deeper_fill_prob,
    default_opposite_distribution,
    mid_price_move_prob,
    quote_shift_prob,
    stationary_distribution,
    stationary_queue_distribution,
    w_distribution,
)
from fillprob.simulator import AgentSpec, SimConfig, estimate_frequencies, run

GRID = list(itertools.product(range(1, 6), repeat=2))


def no_cancel_deep(max_spread=4):
    """Synthetic rates with no cancellations one tick behind the best quote."""
    m = synthetic_model(max_spread=max_spread)
    theta = {k: (0.0 if k[0] > 0 else v) for k, v in m.theta.items()}
    return ModelIII(m.lam, m.mu, theta)


def transient_fill_oracle(paths=400_000, seed=1, cap=60):
    """Front order (rate 0.21) against an opposite queue with λ=1, death 0.2+0.01k.

    Paths whose opposite queue passes ``cap`` count as fills; from there the
    chance of ever emptying is below 1e-30.
    """
    rng = np.random.default_rng(seed)
    size = np.ones(paths, dtype=np.int64)
    alive = np.ones(paths, dtype=bool)
    win = np.zeros(paths, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        k = size[idx]
        u = rng.random(idx.size) * (1.21 + 0.2 + 0.01 * k)
        fill = u < 0.21
        size[idx] += (u >= 0.21) & (u < 1.21)
        size[idx] -= u >= 1.21
        escaped = size[idx] > cap
        win[idx[fill | escaped]] = True
        alive[idx[fill | escaped | (size[idx] == 0)]] = False
    p = win.mean()
    return p, float(np.sqrt(p * (1 - p) / paths))


def up(model, qa, qb, s0, **kw):
    return mid_price_move_prob(MarketQuery(qa, qb, s0, model), Direction.UP, **kw).value


class TestMidPrice:
    @pytest.mark.parametrize("s0", [1, 2])
    @pytest.mark.parametrize("q", [1, 3, 5])
    def test_diagonal(self, synthetic, q, s0):
        assert up(synthetic, q, q, s0) == pytest.approx(0.5, abs=2e-4)

    def test_complement(self, synthetic):
        for qa, qb in GRID:
            assert up(synthetic, qa, qb, 1) + up(synthetic, qb, qa, 1) == pytest.approx(1.0, abs=2e-4)

    def test_up_and_down_sum_to_one(self, synthetic):
        q = MarketQuery(2, 4, 2, synthetic)
        total = sum(mid_price_move_prob(q, d).value for d in (Direction.UP, Direction.DOWN))
        assert total == pytest.approx(1.0, abs=2e-4)

    @pytest.mark.parametrize("s0", [1, 2])
    def test_monotone(self, synthetic, s0):
        p = np.array([[up(synthetic, qa, qb, s0) for qb in range(1, 6)] for qa in range(1, 6)])
        assert np.all(np.diff(p, axis=0) <= 0)
        assert np.all(np.diff(p, axis=1) >= 0)

    def test_methods_agree(self, synthetic):
        cos = up(synthetic, 2, 1, 2)
        euler = up(synthetic, 2, 1, 2, settings=Settings(method="euler"))
        assert cos == pytest.approx(euler, abs=1e-4)

    def test_result_metadata(self, synthetic):
        r = mid_price_move_prob(MarketQuery(1, 2, 1, synthetic))
        assert r.method == "cos" and 0 <= r.value <= 1

    def test_simulator_oracle(self, synthetic):
        value = up(synthetic, 2, 1, 1)
        out = run(SimConfig(synthetic, BookState.from_quotes(2, 1, 1), 10**6, 11))
        p, se, _ = estimate_frequencies(out, "up")
        assert within_se(p, se, value)


class TestBestQuoteFill:
    def test_monotone_in_own_queue(self, synthetic):
        for s0, qa in itertools.product((1, 2), range(1, 6)):
            p = [best_quote_fill_prob(MarketQuery(qa, qb, s0, synthetic)).value for qb in range(1, 6)]
            assert all(b <= a for a, b in zip(p, p[1:]))

    def test_fill_approaches_one_when_opposite_rarely_empties(self):
        # with λ well above μ the opposite queue drifts upward, so a deep
        # opposite queue almost never empties before the front order trades
        lam = {(0, S): 1.0 for S in (1, 2)}
        sticky = ModelIII(lam, {1: 0.2, 2: 0.2}, {(0, 1): 0.01, (0, 2): 0.01})
        p = [best_quote_fill_prob(MarketQuery(qa, 1, 1, sticky)).value for qa in range(1, 6)]
        assert all(b >= a for a, b in zip(p, p[1:]))
        assert p[-1] > 0.98

    def test_transient_opposite_against_simulation(self):
        # the opposite queue escapes to infinity with probability 0.79
        lam = {(0, S): 1.0 for S in (1, 2)}
        sticky = ModelIII(lam, {1: 0.2, 2: 0.2}, {(0, 1): 0.01, (0, 2): 0.01})
        value = best_quote_fill_prob(MarketQuery(1, 1, 1, sticky)).value
        p, se = transient_fill_oracle()
        assert within_se(p, se, value)

    def test_simulator_oracle(self, synthetic):
        value = best_quote_fill_prob(MarketQuery(1, 1, 1, synthetic)).value
        out = run(SimConfig(synthetic, BookState.from_quotes(1, 1, 1), 10**6, 12, AgentSpec(Side.BID)))
        p, se, _ = estimate_frequencies(out, "fill")
        assert within_se(p, se, value)

    def test_ask_side_mirrors_bid(self, synthetic):
        bid = best_quote_fill_prob(MarketQuery(3, 2, 2, synthetic, Side.BID)).value
        ask = best_quote_fill_prob(MarketQuery(2, 3, 2, synthetic, Side.ASK)).value
        assert bid == pytest.approx(ask, abs=1e-10)


class TestQuoteShift:
    def test_symmetric_half(self, synthetic):
        assert quote_shift_prob(MarketQuery(3, 3, 1, synthetic)).value == pytest.approx(0.5, abs=2e-4)

    def test_inspread_arrivals_preempt(self, synthetic):
        assert quote_shift_prob(MarketQuery(3, 3, 2, synthetic)).value < 0.5 - 1e-3

    def test_simulator_oracle(self, synthetic):
        value = quote_shift_prob(MarketQuery(2, 1, 1, synthetic)).value
        out = run(SimConfig(synthetic, BookState.from_quotes(2, 1, 1), 10**6, 13, AgentSpec(Side.BID)))
        p, se, _ = estimate_frequencies(out, "shift")
        assert within_se(p, se, value)


class TestWDistribution:
    def test_single_order(self, synthetic):
        assert w_distribution(MarketQuery(1, 1, 1, synthetic, depth="deeper", q_deep=1)).as_dict() == {1: 1.0}

    def test_no_cancellations_keep_position(self):
        w = w_distribution(MarketQuery(2, 2, 1, no_cancel_deep(), depth="deeper", q_deep=4))
        assert w.mass(4) == pytest.approx(1.0)

    @pytest.mark.parametrize("q_deep", range(1, 6))
    @pytest.mark.parametrize("convention", ["step-count", "paper"])
    def test_mass_conserved(self, synthetic, q_deep, convention):
        w = w_distribution(MarketQuery(2, 3, 1, synthetic, depth="deeper", q_deep=q_deep),
                           Settings(hit_convention=convention))
        assert sum(w.masses) == pytest.approx(1.0, abs=1e-6)
        assert w.support == tuple(range(1, q_deep + 1))


class TestStationary:
    def test_geometric(self):
        pi = stationary_distribution(RateLadder.constant(1.0, 2.0))
        assert [pi.mass(n) for n in range(3)] == pytest.approx([0.5, 0.25, 0.125], abs=1e-12)

    def test_no_arrivals(self):
        assert stationary_distribution(RateLadder.constant(0.0, 2.0)).as_dict() == {0: 1.0}

    def test_linear_death_decays_fast(self, synthetic):
        pi = stationary_queue_distribution(synthetic, BookState.from_quotes(1, 1, 1), Side.ASK)
        assert sum(pi.masses) == pytest.approx(1.0, abs=1e-9)
        ratios = [pi.mass(n + 1) / pi.mass(n) for n in range(1, 6)]
        assert all(b < a for a, b in zip(ratios, ratios[1:]))

    def test_opposite_default_is_positive(self, synthetic):
        d = default_opposite_distribution(MarketQuery(1, 1, 1, synthetic, depth="deeper", q_deep=2))
        assert min(d.support) >= 1 and sum(d.masses) == pytest.approx(1.0)

    def test_queue_distribution_checks(self):
        with pytest.raises(MassLeak):
            QueueDistribution((1, 2), (0.5, 0.4))
        with pytest.raises(ValueError):
            QueueDistribution((1,), (-1.0,))
        assert QueueDistribution.from_weights({2: 1, 1: 3}).masses == (0.75, 0.25)


class TestDeeperFill:
    def test_point_masses_reduce_to_product(self, synthetic):
        q = MarketQuery(2, 2, 1, synthetic, depth="deeper", q_deep=3)
        r = deeper_fill_prob(q, QueueDistribution.point(2), QueueDistribution.point(1))
        expected = quote_shift_prob(q).value * conditional_deeper_fill(q, 1, 2)
        assert r.value == pytest.approx(expected, rel=1e-12)

    def test_truncated_sum(self, synthetic):
        q = MarketQuery(2, 2, 1, synthetic, depth="deeper", q_deep=4)
        w = w_distribution(q)
        opp = QueueDistribution.from_weights({1: 0.5, 2: 0.3, 3: 0.2})
        restricted = sum(conditional_deeper_fill(q, m, n) * w.mass(m) * opp.mass(n)
                         for m in (1, 2) for n in (1, 2))
        got = deeper_fill_prob(q, opp, w, truncate=True).value
        assert got == pytest.approx(quote_shift_prob(q).value * restricted, rel=1e-12)

    def test_bounded_by_shift(self, synthetic):
        cache = {}
        for (qa, qb), s0 in itertools.product(GRID, (1, 2)):
            q = MarketQuery(qa, qb, s0, synthetic, depth="deeper", q_deep=2)
            assert deeper_fill_prob(q, cache=cache).value <= quote_shift_prob(q).value

    def test_simulator_oracle(self, synthetic):
        q = MarketQuery(1, 1, 1, synthetic, depth="deeper", q_deep=2)
        value = deeper_fill_prob(q).value
        book = BookState.from_quotes(1, 1, 1, deep_bid=(2,))
        out = run(SimConfig(synthetic, book, 10**6, 14, AgentSpec(Side.BID, "deeper")))
        p, se, _ = estimate_frequencies(out, "deeper")
        assert within_se(p, se, value)

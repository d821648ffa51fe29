import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fillprob.errors import DomainError, NoConvergence
from fillprob.lob_core import RateLadder
from fillprob.transforms import (
    BirthDeathFPT,
    CdfOf,
    Constant,
    ContinuedFraction,
    Difference,
    Exponential,
    MinWithExp,
    Mixture,
    Product,
    PureDeathFPT,
    birth_death_fpt_transform,
    lentz_evaluate,
    min_with_exponential,
    partial_hit_transform,
    pure_death_fpt_transform,
)


def busy_period(lam, mu, s):
    """First-passage transform from 1 to 0 of an M/M/1 queue."""
    x = lam + mu + s
    return (x - np.sqrt(x * x - 4 * lam * mu)) / (2 * lam)


class TestLentz:
    def test_golden_ratio(self):
        value = lentz_evaluate(ContinuedFraction(lambda k: (1.0, 1.0)))
        assert value.real == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-10)

    def test_single_term(self):
        assert lentz_evaluate(ContinuedFraction(lambda k: (1.0, 2.0), length=1)) == pytest.approx(0.5)

    def test_birth_death_fraction(self):
        lad = RateLadder.constant(1.0, 2.0)
        assert birth_death_fpt_transform(lad, 1, 1.0).real == pytest.approx(0.5857864376, abs=1e-10)

    def test_vectorized_matches_scalar(self):
        s = np.array([0.1, 1.0, 3.0 + 2.0j])
        cf = lambda x: ContinuedFraction(lambda k: (-2.0, 3.0 + x))
        vec = lentz_evaluate(ContinuedFraction(lambda k: (-2.0, 3.0 + s)))
        for x, v in zip(s, vec):
            assert v == pytest.approx(lentz_evaluate(cf(x)), abs=1e-13)

    def test_invariant_under_more_terms(self):
        cf = ContinuedFraction(lambda k: (-k * 0.5, 2.0 + 0.3 * k))
        assert lentz_evaluate(cf, max_terms=500) == pytest.approx(lentz_evaluate(cf, max_terms=1000), abs=1e-10)

    def test_no_convergence(self):
        # partial numerators growing like k² with constant denominators oscillate
        with pytest.raises(NoConvergence):
            lentz_evaluate(ContinuedFraction(lambda k: (-(k * k) * 1.0, 1.0)), max_terms=50)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            lentz_evaluate(ContinuedFraction(lambda k: (1.0, 1.0)), tolerance=0)


class TestBirthDeath:
    def test_two_steps_square(self):
        lad = RateLadder.constant(1.0, 2.0)
        assert birth_death_fpt_transform(lad, 2, 1.0).real == pytest.approx(0.3431457506, abs=1e-10)

    def test_null_recurrent_at_zero(self):
        lad = RateLadder.constant(1.0, 1.0)
        assert birth_death_fpt_transform(lad, 1, 0.0).real == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize("ratio", [0.25, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("q0", [1, 2, 5])
    def test_mm1_closed_form(self, ratio, q0):
        mu = 1.0
        lam = ratio * mu
        lad = RateLadder.constant(lam, mu)
        s = np.array([0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
        got = birth_death_fpt_transform(lad, q0, s)
        want = busy_period(lam, mu, s) ** q0
        assert np.max(np.abs(got / want - 1)) <= 1e-8

    @pytest.mark.parametrize("lam,mu", [(2.0, 1.0), (4.0, 1.0), (1.0, 3.0)])
    def test_absorption_weight_at_zero(self, lam, mu):
        lad = RateLadder.constant(lam, mu)
        assert birth_death_fpt_transform(lad, 3, 0.0).real == pytest.approx(min(1.0, mu / lam) ** 3, abs=1e-10)

    def test_zero_lane_mixed_with_others(self):
        lad = RateLadder.constant(2.0, 1.0)
        v = birth_death_fpt_transform(lad, 1, np.array([0.0, 1.0]))
        assert v[0] == pytest.approx(0.5) and v[1] == pytest.approx(busy_period(2.0, 1.0, 1.0))

    def test_strict_zero_birth(self):
        lad = RateLadder(lambda k: 0.0 if k == 0 else 1.0, lambda k: 2.0)
        with pytest.raises(DomainError):
            birth_death_fpt_transform(lad, 1, 1.0)
        loose = birth_death_fpt_transform(lad, 1, 1.0, strict=False)
        assert loose.real == pytest.approx(busy_period(1.0, 2.0, 1.0), abs=1e-10)

    def test_product_of_steps(self):
        lad = RateLadder(lambda k: 1.0 + 0.1 * k, lambda k: 2.0 + 0.5 * k)
        whole = birth_death_fpt_transform(lad, 3, 0.7)
        one = [birth_death_fpt_transform(RateLadder(lambda k, i=i: lad.birth(k + i), lambda k, i=i: lad.death(k + i)), 1, 0.7)
               for i in (0, 1, 2)]
        assert whole == pytest.approx(np.prod(one), rel=1e-12)

    def test_linear_death_growth_converges(self):
        lad = RateLadder(lambda k: 1.0, lambda k: 2.0 + 0.5 * k)
        v = birth_death_fpt_transform(lad, 4, np.array([1e-3, 1.0, -0.5 + 3j]))
        assert np.all(np.isfinite(v))


class TestPureDeath:
    def test_values(self):
        assert pure_death_fpt_transform([1.0, 1.0], 2, 1.0) == pytest.approx(0.25)
        assert pure_death_fpt_transform([1.0, 2.0], 2, 1.0) == pytest.approx(1 / 3)
        assert pure_death_fpt_transform([0.3, 7.0, 2.0], 3, 0.0) == pytest.approx(1.0)

    def test_pole_and_rates(self):
        with pytest.raises(DomainError):
            pure_death_fpt_transform([1.0, 2.0], 2, -2.0)
        with pytest.raises(DomainError):
            pure_death_fpt_transform([1.0, 0.0], 2, 1.0)

    def test_product_law(self):
        rates = [0.5, 1.5, 2.5, 3.5, 4.5]
        s = 0.9
        whole = pure_death_fpt_transform(rates, 5, s)
        head = pure_death_fpt_transform(rates, 2, s)
        tail = pure_death_fpt_transform(rates[2:], 3, s)
        assert whole == pytest.approx(head * tail, rel=1e-14)


class TestMinWithExponential:
    def test_two_exponentials(self):
        assert min_with_exponential(Exponential(1.0), 1.0, 1.0) == pytest.approx(2 / 3)

    @pytest.mark.parametrize("rate", [0.1, 1.0, 7.0])
    def test_proper_at_zero(self, rate):
        assert min_with_exponential(PureDeathFPT((1.0, 3.0)), rate, 0.0) == pytest.approx(1.0)

    def test_min_with_zero(self):
        assert min_with_exponential(Constant(1.0), 3.0, 2.0) == pytest.approx(1.0)

    def test_pole(self):
        with pytest.raises(DomainError):
            min_with_exponential(Exponential(1.0), 2.0, -2.0)


class TestPartialHit:
    def test_paper_convention(self):
        assert partial_hit_transform([1.0, 1.0, 1.0], 3, 2, 1.0, convention="paper") == pytest.approx(0.25)
        assert partial_hit_transform([1.0, 2.0, 3.0], 3, 3, 1.0, convention="paper") == pytest.approx(0.75)

    def test_step_count_convention(self):
        assert partial_hit_transform([1.0, 1.0, 1.0], 3, 2, 1.0) == pytest.approx(0.5)
        assert partial_hit_transform([1.0, 2.0, 3.0], 3, 3, 1.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("convention", ["paper", "step-count"])
    def test_proper_at_zero(self, convention):
        assert partial_hit_transform([0.4, 0.7, 1.1, 2.0], 4, 2, 0.0, convention=convention) == pytest.approx(1.0)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            partial_hit_transform([1.0, 1.0], 2, 3, 1.0)


DENSITIES = [
    Exponential(1.3),
    PureDeathFPT((1.0, 2.0, 0.5)),
    BirthDeathFPT(RateLadder(lambda k: 1.0, lambda k: 2.0 + 0.5 * k), 2),
    MinWithExp(BirthDeathFPT(RateLadder.constant(1.0, 2.0), 1), 0.6),
    Mixture((0.25, 0.75), (Exponential(1.0), PureDeathFPT((2.0, 2.0)))),
    Product((Exponential(1.0), Exponential(3.0))),
]


class TestExpressions:
    @pytest.mark.parametrize("density", DENSITIES)
    def test_complete_monotonicity(self, density):
        s = np.array([0.05, 0.3, 1.0, 4.0, 20.0])
        v = np.asarray(density(s)).real
        assert np.all(v > 0) and np.all(v <= 1 + 1e-12)
        assert np.all(np.diff(v) < 0)
        assert density(np.array([0.0]))[0].real == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 50), st.floats(0.01, 50), st.floats(0.1, 5), st.floats(0.1, 5))
    def test_monotone_random_rates(self, s1, ds, r1, r2):
        t = PureDeathFPT((r1, r2))
        a, b = t(np.array([s1]))[0].real, t(np.array([s1 + ds]))[0].real
        assert 0 < b < a <= 1

    def test_difference_and_cdf(self):
        d = Difference(Exponential(1.0), Exponential(2.0))
        assert not d.one_sided
        s = np.array([0.3 + 0.1j])
        assert d(s)[0] == pytest.approx(1 / (1 + s[0]) * 2 / (2 - s[0]))
        assert CdfOf(Exponential(1.0))(s)[0] == pytest.approx(1 / (s[0] * (1 + s[0])))
        assert Mixture((1.0,), (Exponential(1.0),)).one_sided
        assert not Mixture((0.5, 0.5), (Exponential(1.0), d)).one_sided

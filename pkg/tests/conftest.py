import warnings

import pytest
from scipy import stats

from fillprob.lob_core import ModelIII
from fillprob.transforms import CdfOf, Exponential, Mixture, PureDeathFPT

warnings.filterwarnings("ignore", message=".*TBB.*")


def synthetic_model(deep_lambda: float = 1.0, max_spread: int = 7) -> ModelIII:
    """Symmetric test rates: λ(0,S)=1, μ=2, θ=0.5, in-spread 0.3, five deeper levels."""
    lam, mu, theta = {}, {}, {}
    for S in range(1, max_spread + 1):
        lam[(0, S)] = 1.0
        mu[S] = 2.0
        theta[(0, S)] = 0.5
        for d in range(1, S):
            lam[(d, S)] = 0.3
        for d in range(S + 1, S + 6):
            lam[(d, S)] = deep_lambda
            theta[(d, S)] = 0.5
    return ModelIII(lam, mu, theta)


def compact_model(max_spread: int = 10) -> ModelIII:
    """Rates that keep the spread near one tick, so a short log fills few cells densely."""
    lam, mu, theta = {}, {}, {}
    for S in range(1, max_spread + 1):
        lam[(0, S)] = 2.0
        mu[S] = 1.0
        theta[(0, S)] = 0.25
        for d in range(1, S):
            lam[(d, S)] = 1.5
        for d in range(S + 1, S + 4):
            lam[(d, S)] = 1.0
            theta[(d, S)] = 0.25
    return ModelIII(lam, mu, theta)


def erlang(k, rate=1.0):
    return PureDeathFPT((rate,) * k)


def analytic_set():
    """(name, transform, exact function of t) for densities and CDFs."""
    out = []
    for k in range(1, 5):
        d = stats.gamma(k)
        out.append((f"erlang{k}-pdf", erlang(k), d.pdf))
        out.append((f"erlang{k}-cdf", CdfOf(erlang(k)), d.cdf))
    mix = Mixture((0.3, 0.7), (Exponential(0.5), erlang(2, 2.0)))

    def mix_pdf(t):
        return 0.3 * stats.expon(scale=2).pdf(t) + 0.7 * stats.gamma(2, scale=0.5).pdf(t)

    def mix_cdf(t):
        return 0.3 * stats.expon(scale=2).cdf(t) + 0.7 * stats.gamma(2, scale=0.5).cdf(t)

    out.append(("mixture-pdf", mix, mix_pdf))
    out.append(("mixture-cdf", CdfOf(mix), mix_cdf))
    return out


def within_se(estimate: float, se: float, target: float, k: float = 3.0) -> bool:
    return abs(estimate - target) <= k * se


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_model()


@pytest.fixture(scope="session")
def compact():
    return compact_model()


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

"""Compiled Monte Carlo kernels for the frozen-rate race simulator.

Random numbers come from SplitMix64 used as a counter-based generator: path
``p`` of a run seeded with ``seed`` owns the key ``mix(mix(seed) ^ mix(p))`` and
its ``i``-th draw is ``mix(key + i·γ)``. Paths therefore never share a stream
and results do not depend on how paths are spread across threads.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# skip the TBB probe; an outdated system TBB only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0

FLAG_UP, FLAG_DOWN, FLAG_FILL, FLAG_SHIFT, FLAG_DEEP_FILL, FLAG_OVERFLOW = range(6)
N_FLAGS = 6


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(cache=True)
def path_key(seed, path):
    return mix64(mix64(seed + GAMMA) ^ mix64(np.uint64(path) * M1 + GAMMA))


@njit(cache=True)
def uniform(state):
    state = state + GAMMA
    z = mix64(state)
    return state, (float(z >> S11) + 0.5) * INV53


@njit(cache=True)
def exponential(state, rate):
    if rate <= 0.0:
        return state, np.inf
    state, u = uniform(state)
    return state, -math.log(u) / rate


@njit(cache=True)
def birth_death_passage(state, start, birth, death):
    """Time for a birth–death chain to hit 0; flags walks past the ladder end."""
    t = 0.0
    k = start
    top = birth.shape[0] - 1
    while k > 0:
        if k >= top:
            return state, t, True
        lam = birth[k]
        mu = death[k]
        total = lam + mu
        if total <= 0.0:
            return state, np.inf, False
        state, u = uniform(state)
        t += -math.log(u) / total
        state, u = uniform(state)
        if u * total < mu:
            k -= 1
        else:
            k += 1
    return state, t, False


@njit(cache=True)
def pure_death_passage(state, start, death):
    t = 0.0
    for k in range(start, 0, -1):
        state, e = exponential(state, death[k])
        t += e
    return state, t


@njit(cache=True)
def deep_position(state, start, phi, horizon):
    """Size of a cancellation-only queue (never below 1) at time ``horizon``."""
    w = start
    t = 0.0
    while w > 1:
        state, e = exponential(state, phi[w])
        t += e
        if t > horizon:
            break
        w -= 1
    return state, w


@njit(cache=True)
def sample_index(state, cdf):
    state, u = uniform(state)
    n = cdf.shape[0]
    for i in range(n):
        if u <= cdf[i]:
            return state, i
    return state, n - 1


@njit(parallel=True, cache=True)
def frozen_races(seed, paths, q_ask, q_bid, agent_bid,
                 birth_a, death_a, birth_b, death_b, inspread_bid, inspread_ask,
                 q_deep, phi,
                 death_own2, birth_opp2, death_opp2, inspread2,
                 opp_support, opp_cdf,
                 flags, w_out):
    """One independent set of passage times per path.

    flags[p] holds up, down, best fill, quote shift, deeper fill and a ladder
    overflow marker; ``w_out[p]`` is the deeper queue position when an
    independent copy of the agent's best quote empties.
    """
    for p in prange(paths):
        st = path_key(seed, p)
        st, sig_a, of1 = birth_death_passage(st, q_ask, birth_a, death_a)
        st, sig_b, of2 = birth_death_passage(st, q_bid, birth_b, death_b)
        st, tau_bid = exponential(st, inspread_bid)
        st, tau_ask = exponential(st, inspread_ask)
        rise = min(sig_a, tau_bid)
        fall = min(sig_b, tau_ask)
        if rise < fall:
            flags[p, FLAG_UP] = 1
        elif fall < rise:
            flags[p, FLAG_DOWN] = 1
        if agent_bid:
            sig_i, sig_j, q_i, death_i, birth_i = sig_b, sig_a, q_bid, death_b, birth_b
        else:
            sig_i, sig_j, q_i, death_i, birth_i = sig_a, sig_b, q_ask, death_a, birth_a
        other = min(sig_j, min(tau_ask, tau_bid))
        st, eps = pure_death_passage(st, q_i, death_i)
        if eps < other:
            flags[p, FLAG_FILL] = 1
        shifted = sig_i < other
        if shifted:
            flags[p, FLAG_SHIFT] = 1
        # deeper order: position when an independent copy of the best quote empties
        st, sig_copy, of3 = birth_death_passage(st, q_i, birth_i, death_i)
        st, w = deep_position(st, q_deep, phi, sig_copy)
        w_out[p] = w
        of4 = False
        if shifted:
            st, idx = sample_index(st, opp_cdf)
            n = opp_support[idx]
            st, eps2 = pure_death_passage(st, w, death_own2)
            st, sig_j2, of4 = birth_death_passage(st, n, birth_opp2, death_opp2)
            st, tau2 = exponential(st, inspread2)
            if eps2 < min(sig_j2, tau2):
                flags[p, FLAG_DEEP_FILL] = 1
        if of1 or of2 or of3 or of4:
            flags[p, FLAG_OVERFLOW] = 1

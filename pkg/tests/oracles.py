"""Independent oracles used to freeze expected values.

Everything here is deliberately written against the raw math, not against
the package's own code paths: plain-float bisection for the duration scale,
exhaustive state enumeration for tiny chains, numpy's eigensolver for the
Perron root, and factorial-form multinomial probabilities.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np


def bisect_theta(gamma, beta, means, iterations=200):
    """200-step pure bisection for the positive root of
    sum_i means_i gamma_i (1 - exp(-beta_i x)) - x."""

    def f(x):
        return math.fsum(
            m * g * (1.0 - math.exp(-b * x)) for m, g, b in zip(means, gamma, beta)
        ) - x

    hi = math.fsum(m * g for m, g in zip(means, gamma))
    lo = hi
    while f(lo) <= 0.0:
        lo *= 0.5
        if lo < 1e-12:
            raise RuntimeError("no positive root")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bisect_extinction(alpha, pgfs, pgf_root):
    """Smallest fixed point of x = sum_j alpha_j g_j(x) on [0, 1], located by
    sign scan plus bisection; returns (g_root(x*), x*)."""

    def h(x):
        return math.fsum(a * g(x) for a, g in zip(alpha, pgfs)) - x

    # h(0) >= 0; find the first sign change on a fine grid
    xs = np.linspace(0.0, 1.0, 10_001)
    lo = 0.0
    hi = 1.0
    for a, b in zip(xs[:-1], xs[1:]):
        if h(a) >= 0.0 > h(b):
            lo, hi = a, b
            break
    else:
        return pgf_root(1.0), 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return pgf_root(x), x


def multinomial_pmf(counts, alpha):
    """Exact Multinomial(sum counts; alpha) probability."""
    l = sum(counts)
    p = math.factorial(l)
    for k, a in zip(counts, alpha):
        p *= a**k / math.factorial(k)
    return p


def eig_spectral_radius(m):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(m, dtype=float)))))


def enumerate_chain(n_i, p, capacity_pmf, i0=0, max_capacity=64):
    """Exhaustive law of (tau, final counts) for the chain with bounded
    capacities.

    n_i: per-type integer sizes; p: per-vertex weights; capacity_pmf[i] is a
    dict {value: prob} for type i's capacity. Returns a dict
    {(tau, counts_tuple): probability}. Only practical for tiny populations.
    """
    J = len(n_i)
    outcomes: dict = {}
    start_counts = tuple(1 if j == i0 else 0 for j in range(J))
    frontier: dict = {}
    for cap, q in capacity_pmf[i0].items():
        state = (start_counts, cap)
        if cap == 0:
            outcomes[(0, start_counts)] = outcomes.get((0, start_counts), 0.0) + q
        else:
            frontier[state] = frontier.get(state, 0.0) + q
    t = 0
    while frontier:
        t += 1
        nxt: dict = {}
        for (counts, s), prob in frontier.items():
            waste = math.fsum(c * pi for c, pi in zip(counts, p))
            _push(nxt, outcomes, (counts, s - 1), prob * waste, t)
            for j in range(J):
                hit = p[j] * (n_i[j] - counts[j])
                if hit <= 0:
                    continue
                new_counts = tuple(c + 1 if k == j else c for k, c in enumerate(counts))
                for cap, q in capacity_pmf[j].items():
                    if s + cap - 1 > max_capacity:
                        raise RuntimeError("state space escaped the capacity bound")
                    _push(nxt, outcomes, (new_counts, s + cap - 1), prob * q * hit, t)
        frontier = nxt
    return outcomes


def _push(frontier, outcomes, state, prob, t):
    if prob <= 0.0:
        return
    counts, s = state
    if s == 0:
        key = (t, counts)
        outcomes[key] = outcomes.get(key, 0.0) + prob
    else:
        frontier[state] = frontier.get(state, 0.0) + prob


def chain_summary(outcomes):
    """(E[tau], {total_infected: prob}) from enumerate_chain output."""
    e_tau = math.fsum(t * p for (t, _), p in outcomes.items())
    dist: dict = {}
    for (_, counts), p in outcomes.items():
        k = sum(counts)
        dist[k] = dist.get(k, 0.0) + p
    return e_tau, dist

"""Discrete-time epidemic chain and its Poissonized continuous-time coupling.

The chain tracks (N_t, S_t): per-type infected counts and the total spread
capacity still available. Each step draws a target type j with probability
alpha_j and succeeds (infects a new vertex) with probability
(n_j - N_t^j) / n_j; a success reveals a fresh capacity L^j and adds it to S,
every step consumes one unit. The walk stops at tau = min{t : S_t = 0}.

Two engines realize the same law:

  * "stepwise" — a literal per-step loop; the reference implementation used
    for small populations and exactness tests.
  * "collector" — a vectorized coupon-collector construction: per type, the
    number of attempts between consecutive new vertices is geometric, so the
    within-type success schedule can be drawn up front and the global step
    axis processed in chunks. Identical in law, O(n) memory, and fast enough
    for n = 10^6 in well under a second.

The continuous-time snapshot realizes the same draws on a unit-rate Poisson
clock: each vertex carries an independent exponential first-hit time, which
makes the per-type counts independent — the coupling the limit theorems and
covariance checks are built on.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CalledOnTerminated, RunawayEpidemic
from .model import InstanceSpec

_CHUNK0 = 4096
_CHUNK_MAX = 1 << 20
_EXP_BLOCK = 1 << 19


@dataclass(frozen=True)
class ChainState:
    """State of the chain after `step` transmission attempts."""

    counts: tuple
    capacity: int
    step: int


@dataclass
class EpidemicOptions:
    engine: str = "auto"                # auto | stepwise | collector
    record_acquisitions: bool = False
    record_trajectory: bool = False
    trajectory_points: int = 64


@dataclass(frozen=True, eq=False)
class EpidemicResult:
    """One realized epidemic.

    acquisition_times[i][k] is the step at which the (k+1)-th type-i vertex
    was infected (the seed contributes time 0 for its own type). trajectory
    rows are (t, N^1..N^J, S) at roughly `trajectory_points` strided steps.
    """

    n: int
    tau: int
    tau_tilde: float
    final_counts: tuple
    total_infected: int
    full_transmission: bool
    acquisition_times: tuple | None = None
    trajectory: np.ndarray | None = None


def initial_state(instance: InstanceSpec, rng: np.random.Generator) -> ChainState:
    """Seed vertex of type i0 infected at t=0; S_0 is its revealed capacity."""
    spec = instance.spec
    counts = [0] * spec.J
    counts[spec.i0] = 1
    cap = int(spec.offspring[spec.i0].sample(rng, 1)[0])
    return ChainState(counts=tuple(counts), capacity=cap, step=0)


def step(state: ChainState, instance: InstanceSpec, rng: np.random.Generator) -> ChainState:
    """One transmission attempt (two-stage draw: type by alpha, then success)."""
    if state.capacity <= 0:
        raise CalledOnTerminated(f"capacity is 0 at step {state.step}")
    spec = instance.spec
    j = int(np.searchsorted(instance.alpha_cumulative, rng.random()))
    j = min(j, spec.J - 1)
    n_j = int(instance.n_i[j])
    if rng.random() < (n_j - state.counts[j]) / n_j:
        cap = int(spec.offspring[j].sample(rng, 1)[0])
        counts = list(state.counts)
        counts[j] += 1
        return ChainState(tuple(counts), state.capacity + cap - 1, state.step + 1)
    return ChainState(state.counts, state.capacity - 1, state.step + 1)


def _iteration_cap(instance: InstanceSpec) -> int:
    mean_total = math.fsum(
        g * law.mean for g, law in zip(instance.spec.gamma, instance.spec.offspring)
    )
    return int(math.ceil(instance.n * (1.0 + mean_total) * 1e3)) + 1000


def _sum_exp1(rng: np.random.Generator, count: int) -> float:
    """Sum of `count` Exp(1) draws, Kahan-compensated across blocks."""
    total = 0.0
    comp = 0.0
    remaining = int(count)
    while remaining > 0:
        b = min(remaining, _EXP_BLOCK)
        part = float(rng.exponential(size=b).sum())
        y = part - comp
        t = total + y
        comp = (t - total) - y
        total = t
        remaining -= b
    return total


class _TrajectoryBuffer:
    """Strided (t, counts, S) rows; stride doubles to stay near `points` rows."""

    def __init__(self, points: int):
        self.points = max(2, points)
        self.stride = 1
        self.rows: list[tuple] = []

    def offer(self, t: int, counts: Sequence[int], capacity: int) -> None:
        if t % self.stride:
            return
        self.rows.append((t, *counts, capacity))
        if len(self.rows) > 2 * self.points:
            self.rows = self.rows[::2]
            self.stride *= 2

    def next_time(self, t: int) -> int:
        """Smallest recordable time >= t for the current stride."""
        return ((t + self.stride - 1) // self.stride) * self.stride

    def to_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=np.int64)


def run_epidemic(
    instance: InstanceSpec,
    rng: np.random.Generator,
    opts: EpidemicOptions | None = None,
) -> EpidemicResult:
    """Run the chain to termination and report duration and infected counts.

    tau_tilde is the same termination read on the unit-rate Poisson clock,
    realized as the sum of tau i.i.d. Exp(1) gaps. Deterministic given rng.
    """
    opts = opts or EpidemicOptions()
    engine = opts.engine
    if engine == "auto":
        engine = "stepwise" if instance.n <= 256 else "collector"
    if engine == "stepwise":
        return _run_stepwise(instance, rng, opts)
    if engine == "collector":
        return _run_collector(instance, rng, opts)
    raise ValueError(f"unknown engine {opts.engine!r}")


def _finalize(instance, rng, tau, counts, acq, traj) -> EpidemicResult:
    total = int(sum(counts))
    return EpidemicResult(
        n=instance.n,
        tau=int(tau),
        tau_tilde=_sum_exp1(rng, tau),
        final_counts=tuple(int(c) for c in counts),
        total_infected=total,
        full_transmission=total == instance.n,
        acquisition_times=(
            tuple(np.asarray(a, dtype=np.int64) for a in acq) if acq is not None else None
        ),
        trajectory=traj.to_array() if traj is not None else None,
    )


class _ScalarBuffer:
    """Scalar draws served from block refills (cuts per-call RNG overhead).

    Blocks start small and grow, so short epidemics do not pay for draws
    they never consume.
    """

    __slots__ = ("_refill", "_size", "_max", "_buf", "_pos", "_len")

    def __init__(self, refill, size=32, max_size=8192):
        self._refill = refill
        self._size = size
        self._max = max_size
        self._buf = refill(size)
        self._len = size
        self._pos = 0

    def one(self):
        if self._pos >= self._len:
            self._size = min(self._size * 4, self._max)
            self._buf = self._refill(self._size)
            self._len = self._size
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


def _run_stepwise(instance, rng, opts) -> EpidemicResult:
    spec = instance.spec
    J = spec.J
    cum = instance.alpha_cumulative.tolist()
    n_i = instance.n_i.tolist()
    uniform = _ScalarBuffer(rng.random).one
    cap_draw = [_ScalarBuffer(lambda s, law=law: law.sample(rng, s)).one
                for law in spec.offspring]
    counts = [0] * J
    counts[spec.i0] = 1
    capacity = int(cap_draw[spec.i0]())
    acq = [[] for _ in range(J)] if opts.record_acquisitions else None
    if acq is not None:
        acq[spec.i0].append(0)
    traj = _TrajectoryBuffer(opts.trajectory_points) if opts.record_trajectory else None
    if traj is not None:
        traj.offer(0, counts, capacity)
    cap_limit = _iteration_cap(instance)
    t = 0
    while capacity > 0:
        if J == 1:
            j = 0
        else:
            u = uniform()
            j = 0
            while j < J - 1 and u > cum[j]:
                j += 1
        nj = n_i[j]
        if uniform() * nj < nj - counts[j]:
            counts[j] += 1
            capacity += int(cap_draw[j]()) - 1
            if acq is not None:
                acq[j].append(t + 1)
        else:
            capacity -= 1
        t += 1
        if traj is not None:
            traj.offer(t, counts, capacity)
        if t > cap_limit:
            raise RunawayEpidemic(f"exceeded {cap_limit} steps at n={instance.n}")
    return _finalize(instance, rng, t, counts, acq, traj)


def _run_collector(instance, rng, opts) -> EpidemicResult:
    spec = instance.spec
    J = spec.J
    i0 = spec.i0
    n_i = instance.n_i
    alpha_cum = instance.alpha_cumulative

    # Per-type schedule: success_at[j][k] is the within-type attempt index at
    # which the next new type-j vertex appears; caps[j][l] the capacity
    # revealed by the (l+1)-th infected type-j vertex (the seed uses caps[i0][0]).
    success_at = []
    caps = []
    for j in range(J):
        nj = int(n_i[j])
        already = 1 if j == i0 else 0
        collected = np.arange(already, nj, dtype=np.int64)
        gaps = rng.geometric((nj - collected) / nj).astype(np.int64) if nj > already else np.empty(0, np.int64)
        success_at.append(np.cumsum(gaps))
        caps.append(spec.offspring[j].sample(rng, nj))

    counts = np.zeros(J, dtype=np.int64)
    counts[i0] = 1
    capacity = int(caps[i0][0])
    acq = [[] for _ in range(J)] if opts.record_acquisitions else None
    if acq is not None:
        acq[i0].append(0)
    traj = _TrajectoryBuffer(opts.trajectory_points) if opts.record_trajectory else None
    if traj is not None:
        traj.offer(0, counts, capacity)
    if capacity == 0:
        return _finalize(instance, rng, 0, counts, acq, traj)

    attempts_seen = np.zeros(J, dtype=np.int64)
    cap_limit = _iteration_cap(instance)
    t = 0
    B = min(max(_CHUNK0, instance.n // 8), _CHUNK_MAX)
    while True:
        delta = np.full(B, -1, dtype=np.int64)
        succ_pos: list[np.ndarray] = [None] * J
        if J == 1:
            lo = int(np.searchsorted(success_at[0], attempts_seen[0], side="right"))
            hi = int(np.searchsorted(success_at[0], attempts_seen[0] + B, side="right"))
            sp = success_at[0][lo:hi] - attempts_seen[0] - 1
            delta[sp] += caps[0][counts[0]: counts[0] + (hi - lo)]
            succ_pos[0] = sp
            chunk_attempts = np.full(1, B, dtype=np.int64)
        else:
            types = np.searchsorted(alpha_cum, rng.random(B)).astype(np.int64)
            np.minimum(types, J - 1, out=types)
            chunk_attempts = np.zeros(J, dtype=np.int64)
            for j in range(J):
                pos = np.nonzero(types == j)[0]
                kj = len(pos)
                lo = int(np.searchsorted(success_at[j], attempts_seen[j], side="right"))
                hi = int(np.searchsorted(success_at[j], attempts_seen[j] + kj, side="right"))
                sp = pos[success_at[j][lo:hi] - attempts_seen[j] - 1]
                delta[sp] += caps[j][counts[j]: counts[j] + (hi - lo)]
                succ_pos[j] = sp
                chunk_attempts[j] = kj
        path = capacity + np.cumsum(delta)
        zeros = np.nonzero(path == 0)[0]
        stop = int(zeros[0]) if len(zeros) else -1

        if traj is not None:
            last = stop if stop >= 0 else B - 1
            tq = traj.next_time(t + 1)
            while tq <= t + last + 1:
                z = tq - t - 1
                row_counts = counts + np.array(
                    [np.searchsorted(succ_pos[j], z, side="right") for j in range(J)]
                )
                traj.offer(tq, row_counts, int(path[z]))
                tq = traj.next_time(tq + 1)

        if stop >= 0:
            for j in range(J):
                upto = int(np.searchsorted(succ_pos[j], stop, side="right"))
                if acq is not None and upto:
                    acq[j].extend((t + 1 + succ_pos[j][:upto]).tolist())
                counts[j] += upto
            tau = t + stop + 1
            return _finalize(instance, rng, tau, counts, acq, traj)

        for j in range(J):
            if acq is not None and len(succ_pos[j]):
                acq[j].extend((t + 1 + succ_pos[j]).tolist())
            counts[j] += len(succ_pos[j])
        attempts_seen += chunk_attempts
        capacity = int(path[-1])
        t += B
        if t > cap_limit:
            raise RunawayEpidemic(f"exceeded {cap_limit} steps at n={instance.n}")
        B = min(B * 2, _CHUNK_MAX)


@dataclass(frozen=True, eq=False)
class ContinuousSnapshot:
    """Poissonized view of one epidemic's coupon draws on a time grid.

    grid holds s-values; column j of every series refers to absolute time
    n * grid[j]. counts[i, j] is the number of type-i vertices hit at least
    once, attempts[j] the total number of Poisson draw events, revealed[i, j]
    the capacity revealed by the hit type-i vertices. acq maps
    (type_index, fraction q) to the first-hit time of the floor(n_i q)-th
    type-i vertex (NaN when floor(n_i q) = 0).
    """

    n: int
    n_i: np.ndarray
    grid: np.ndarray
    counts: np.ndarray
    attempts: np.ndarray | None = None
    revealed: np.ndarray | None = None
    acq: dict | None = None


def continuous_snapshot(
    instance: InstanceSpec,
    grid: Sequence[float],
    rng: np.random.Generator,
    *,
    include_attempts: bool = True,
    include_revealed: bool = False,
    acq_fractions: Sequence[float] = (),
) -> ContinuousSnapshot:
    """Simulate the continuous-time coupling directly on a sorted grid.

    Every vertex k of type i carries an independent Exp(p_i) first-hit time;
    later hits (needed only for attempt totals) are filled in lazily as
    independent Poisson increments per grid interval.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    spec = instance.spec
    J = spec.J
    times = instance.n * grid
    m = len(grid)
    p = instance.p
    counts = np.zeros((J, m), dtype=np.int64)
    attempts = np.zeros(m, dtype=np.int64) if include_attempts else None
    revealed = np.zeros((J, m), dtype=np.int64) if include_revealed else None
    acq: dict | None = {} if len(acq_fractions) else None
    for i in range(J):
        ni = int(instance.n_i[i])
        first = rng.exponential(1.0 / p[i], ni)
        first_sorted = np.sort(first)
        counts[i] = np.searchsorted(first_sorted, times, side="right")
        if include_attempts:
            prev = 0.0
            extra = np.zeros(m, dtype=np.int64)
            for jg in range(m):
                lo = np.maximum(first, prev)
                lengths = np.maximum(0.0, times[jg] - lo)
                extra[jg] = int(rng.poisson(p[i] * lengths).sum())
                prev = times[jg]
            attempts += np.cumsum(extra) + counts[i]
        if include_revealed:
            capcum = np.concatenate(([0], np.cumsum(spec.offspring[i].sample(rng, ni))))
            revealed[i] = capcum[counts[i]]
        if acq is not None:
            for q in acq_fractions:
                k = int(math.floor(ni * q))
                acq[(i, float(q))] = float(first_sorted[k - 1]) if k >= 1 else float("nan")
    return ContinuousSnapshot(
        n=instance.n,
        n_i=instance.n_i.copy(),
        grid=grid,
        counts=counts,
        attempts=attempts,
        revealed=revealed,
        acq=acq,
    )


REPLICATE_CSV_COLUMNS = (
    "replicate_id",
    "seed",
    "n",
    "tau",
    "tau_tilde",
    "infected_total",
    "infected_per_type",
    "full_transmission",
    "survived_flag",
)


def write_replicates_csv(
    out: io.TextIOBase,
    results: Sequence[EpidemicResult],
    seeds: Sequence[int],
    survived: Sequence[bool] | None = None,
) -> None:
    """Write one CSV row per replicate (per-type counts semicolon-joined)."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPLICATE_CSV_COLUMNS)
    for idx, (res, seed) in enumerate(zip(results, seeds)):
        writer.writerow(
            [
                idx,
                seed,
                res.n,
                res.tau,
                repr(res.tau_tilde),
                res.total_infected,
                ";".join(str(c) for c in res.final_counts),
                int(res.full_transmission),
                "" if survived is None else int(survived[idx]),
            ]
        )

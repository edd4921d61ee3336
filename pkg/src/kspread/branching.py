"""Multitype branching trees, extinction probability, and the pruned-tree
coupling that realizes the epidemic inside the tree.

A type-i node gets L^i children whose types are i.i.d. with weights alpha_j,
so the per-type child counts are Multinomial(L^i; alpha). Because the split
weights do not depend on the parent type, the J-dimensional extinction system
q_i = g_i(sum_j alpha_j q_j) collapses to the scalar fixed point
x = sum_j alpha_j g_j(x), from which q_i = g_i(x*).

run_coupled grows the tree lazily while walking the pending set in
(generation, lexicographic) order: the popped node's type names the target
class in the population, an independent uniform decides whether that target
is new. Pruned (failed) nodes lose their subtree; the surviving infected set
reproduces the epidemic chain exactly, which is what the coupling tests
exercise.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, RunawayEpidemic, ThetaUnavailable
from .model import InstanceSpec, ModelSpec
from .simulate import EpidemicResult, _iteration_cap, _sum_exp1

FIXED_POINT_TOL = 1e-12
_FIXED_POINT_MAX_ITER = 1_000_000


@dataclass(frozen=True, eq=False)
class GWRun:
    """Generation-by-generation record of one branching tree.

    generation_sizes[t] is the J-vector of type counts in generation t;
    total_population counts every node ever born (including a truncated
    final generation). extinct means the tree died before the cap.
    """

    generation_sizes: np.ndarray
    total_population: int
    extinct: bool
    truncated: bool

    def to_json_dict(self) -> dict:
        return {
            "generations": self.generation_sizes.tolist(),
            "total": self.total_population,
            "extinct": self.extinct,
            "truncated": self.truncated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def grow_tree(spec: ModelSpec, max_population: int, rng: np.random.Generator) -> GWRun:
    """Breadth-first growth from one type-i0 root.

    Stops at extinction or once the cumulative population exceeds
    max_population (truncated=True).
    """
    if max_population < 1:
        raise ValueError("max_population must be >= 1")
    J = spec.J
    alpha = spec.alpha
    z = np.zeros(J, dtype=np.int64)
    z[spec.i0] = 1
    sizes = [z.copy()]
    total = 1
    truncated = False
    while z.sum() > 0:
        if total > max_population:
            truncated = True
            break
        children = np.zeros(J, dtype=np.int64)
        for i in range(J):
            if z[i] == 0:
                continue
            born = int(spec.offspring[i].sample(rng, int(z[i])).sum())
            if born:
                children += rng.multinomial(born, alpha)
        z = children
        total += int(z.sum())
        sizes.append(z.copy())
    return GWRun(
        generation_sizes=np.asarray(sizes, dtype=np.int64),
        total_population=total,
        extinct=bool(z.sum() == 0),
        truncated=truncated,
    )


def extinction_probability(spec: ModelSpec) -> tuple[float, float]:
    """(sigma_mgw, x_star): extinction probability for a type-i0 root, and the
    fixed point of x = sum_j alpha_j g_j(x).

    Monotone iteration from x=0 (the map is increasing and convex on [0,1]),
    declared converged at 1e-12. Subcritical/critical specs return (1, 1).
    """
    from .model import mean_matrix, spectral_radius  # local to avoid cycles

    if spectral_radius(mean_matrix(spec)) <= 1.0:
        return 1.0, 1.0
    alpha = spec.alpha
    x = 0.0
    for _ in range(_FIXED_POINT_MAX_ITER):
        nxt = float(sum(a * law.pgf(x) for a, law in zip(alpha, spec.offspring)))
        if abs(nxt - x) < FIXED_POINT_TOL:
            x = nxt
            break
        x = nxt
    else:
        raise NonConvergence("extinction fixed point did not converge")
    return spec.offspring[spec.i0].pgf(x), x


@dataclass(frozen=True, eq=False)
class CouplingResult:
    """Outcome of one coupled (tree + population) run.

    infected_tree_size equals the epidemic's total infected count; failures
    counts pruned nodes. revealed_capacities[i][l] is the capacity of the
    (l+1)-th infected type-i vertex, padded with fresh i.i.d. draws beyond
    the infected range when a pad was requested. pending_sizes (optional)
    records |pending set| after each step, which must match S_t.
    """

    epidemic: EpidemicResult
    infected_tree_size: int
    failures: int
    per_type_infected: tuple
    revealed_capacities: tuple | None = None
    pending_sizes: np.ndarray | None = None


class _DrawBuffer:
    """Amortizes per-draw numpy overhead behind growing block refills."""

    __slots__ = ("_refill", "_size", "_max", "_buf", "_pos")

    def __init__(self, refill, size=32, max_size=4096):
        self._refill = refill
        self._size = size
        self._max = max_size
        self._buf = refill(size)
        self._pos = 0

    def one(self):
        if self._pos >= len(self._buf):
            self._size = min(self._size * 4, self._max)
            self._buf = self._refill(self._size)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def take(self, k: int) -> np.ndarray:
        if self._pos + k > len(self._buf):
            self._size = min(max(self._size * 4, k), max(self._max, k))
            self._buf = np.concatenate([self._buf[self._pos:], self._refill(self._size)])
            self._pos = 0
        out = self._buf[self._pos: self._pos + k]
        self._pos += k
        return out


def run_coupled(
    instance: InstanceSpec,
    rng: np.random.Generator,
    *,
    capacity_pad: int = 0,
    extend_acquisitions_to: int = 0,
    record_pending: bool = False,
    record_acquisitions: bool = True,
) -> CouplingResult:
    """Walk the pruned-tree construction to termination.

    capacity_pad > 0 pads each type's revealed-capacity sequence with fresh
    i.i.d. draws out to that length. extend_acquisitions_to = k keeps the
    capacity-free coupon collector running past termination until every type
    has acquired min(k, n_i) vertices, so early acquisition times are defined
    on every run.
    """
    spec = instance.spec
    J = spec.J
    n_i = instance.n_i
    alpha_cum = instance.alpha_cumulative
    uniforms = _DrawBuffer(rng.random)
    caps_buf = [_DrawBuffer(lambda s, law=law: law.sample(rng, s))
                for law in spec.offspring]
    counts = [0] * J
    counts[spec.i0] = 1
    root_cap = int(caps_buf[spec.i0].one())
    revealed = [[] for _ in range(J)]
    revealed[spec.i0].append(root_cap)
    acq = [[] for _ in range(J)] if (record_acquisitions or extend_acquisitions_to) else None
    if acq is not None:
        acq[spec.i0].append(0)
    failures = 0
    # pending set: (generation, word, type); words are child-index tuples
    pending: list[tuple] = []
    for k, ty in enumerate(
        np.searchsorted(alpha_cum, uniforms.take(root_cap)), start=1
    ):
        heapq.heappush(pending, (1, (k,), min(int(ty), J - 1)))
    pending_sizes = [len(pending)] if record_pending else None
    cap_limit = _iteration_cap(instance)
    t = 0
    while pending:
        gen, word, j0 = heapq.heappop(pending)
        t += 1
        nj = int(n_i[j0])
        if uniforms.one() < (nj - counts[j0]) / nj:
            counts[j0] += 1
            cap = int(caps_buf[j0].one())
            revealed[j0].append(cap)
            if acq is not None:
                acq[j0].append(t)
            if cap:
                child_types = np.searchsorted(alpha_cum, uniforms.take(cap))
                for k in range(cap):
                    heapq.heappush(
                        pending, (gen + 1, word + (k + 1,), min(int(child_types[k]), J - 1))
                    )
        else:
            failures += 1
        if pending_sizes is not None:
            pending_sizes.append(len(pending))
        if t > cap_limit:
            raise RunawayEpidemic(f"coupled walk exceeded {cap_limit} steps")
    tau = t
    final_counts = tuple(counts)
    total = int(sum(final_counts))

    if extend_acquisitions_to > 0:
        _extend_collector(instance, rng, counts, acq, tau, extend_acquisitions_to, cap_limit)
    result = EpidemicResult(
        n=instance.n,
        tau=tau,
        tau_tilde=_sum_exp1(rng, tau),
        final_counts=final_counts,
        total_infected=total,
        full_transmission=total == instance.n,
        acquisition_times=(
            tuple(np.asarray(a, dtype=np.int64) for a in acq) if acq is not None else None
        ),
    )
    caps_out = None
    if capacity_pad > 0:
        caps_out = []
        for j in range(J):
            have = revealed[j]
            if len(have) < capacity_pad:
                extra = spec.offspring[j].sample(rng, capacity_pad - len(have))
                have = have + extra.tolist()
            caps_out.append(np.asarray(have, dtype=np.int64))
        caps_out = tuple(caps_out)
    else:
        caps_out = tuple(np.asarray(r, dtype=np.int64) for r in revealed)
    return CouplingResult(
        epidemic=result,
        infected_tree_size=total,
        failures=failures,
        per_type_infected=final_counts,
        revealed_capacities=caps_out,
        pending_sizes=np.asarray(pending_sizes, dtype=np.int64) if pending_sizes is not None else None,
    )


def _extend_collector(instance, rng, counts, acq, tau, target, cap_limit) -> None:
    """Continue the capacity-free coupon collector past termination."""
    spec = instance.spec
    n_i = instance.n_i
    cum = instance.alpha_cumulative
    t = tau
    want = [min(target, int(n_i[j])) for j in range(spec.J)]
    while any(len(acq[j]) < want[j] for j in range(spec.J)):
        j = min(int(np.searchsorted(cum, rng.random())), spec.J - 1)
        t += 1
        nj = int(n_i[j])
        if rng.random() < (nj - counts[j]) / nj:
            counts[j] += 1
            acq[j].append(t)
        if t > cap_limit + tau:
            raise RunawayEpidemic("post-termination collector overran its cap")


def classify_survival(result: EpidemicResult, predictions, kappa: float = 0.5) -> bool:
    """True iff the run's duration is macroscopic: tau >= kappa * theta * n."""
    if not (0.0 < kappa < 1.0):
        raise ValueError(f"kappa must lie in (0,1), got {kappa}")
    theta = getattr(predictions, "theta", None)
    if theta is None or not np.isfinite(theta) or theta <= 0:
        raise ThetaUnavailable("no positive duration scale available (subcritical spec?)")
    return result.tau >= kappa * theta * result.n

"""Replicated Monte Carlo experiments with statistical verdicts.

Every replicate owns an RNG seeded from (master seed, stream, index) through
a splitmix64 mix, so reports are byte-identical across thread counts and
scheduling orders. Verdicts follow fixed bands: z-based checks pass below 3,
are inconclusive on [3, 4] and fail above 4; p-based checks fail below 0.001,
are inconclusive on [0.001, 0.01] and pass above.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaincc, ndtr

from . import limits
from .branching import run_coupled
from .errors import (
    ConfigError,
    GridMismatch,
    InsufficientSurvivors,
    SparseCells,
    TooFewSamples,
)
from .model import InstanceSpec, ModelSpec, OffspringLaw, realize_instance
from .simulate import (
    ContinuousSnapshot,
    EpidemicOptions,
    continuous_snapshot,
    run_epidemic,
)

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

# RNG stream tags, kept disjoint per purpose so adding replicates to one
# batch never shifts another batch's draws.
STREAM_EPIDEMIC = 1
STREAM_SNAPSHOT = 2
STREAM_COUPLED = 3
STREAM_COUPLED_REF = 4


def splitmix64(x: int) -> int:
    """One splitmix64 scramble round (avalanche-quality 64-bit mix)."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, *parts: int) -> int:
    """Chain-mix the master seed with stream tags and indices."""
    s = splitmix64(master & _MASK)
    for p in parts:
        s = splitmix64(s ^ (p & _MASK))
    return s


def replicate_rng(master: int, *parts: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *parts)))


# ---------------------------------------------------------------------------
# statistics primitives
# ---------------------------------------------------------------------------

def ks_normality(samples: Sequence[float]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic against N(0,1) and its
    asymptotic p-value (alternating series, truncated at a 1e-10 term)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 30:
        raise TooFewSamples(f"KS test needs >= 30 samples, got {n}")
    cdf = ndtr(x)
    grid = np.arange(1, n + 1) / n
    d = float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n))))
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
    return d, _kolmogorov_sf(lam)


def _kolmogorov_sf(lam: float) -> float:
    if lam <= 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 1000):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < 1e-10:
            break
        sign = -sign
    return float(min(1.0, max(0.0, 2.0 * total)))


def _merge_sparse(table: np.ndarray) -> np.ndarray:
    """Merge adjacent rows/columns until all expected counts reach 5."""
    tab = table.astype(float)
    while True:
        total = tab.sum()
        expected = np.outer(tab.sum(axis=1), tab.sum(axis=0)) / total
        if expected.min() >= 5.0:
            return tab
        if tab.shape[0] <= 2 and tab.shape[1] <= 2:
            raise SparseCells("cannot reach expected cell counts >= 5")
        # merge along the dimension with the smaller offending marginal
        row_marg = tab.sum(axis=1)
        col_marg = tab.sum(axis=0)
        merge_rows = tab.shape[0] > 2 and (
            tab.shape[1] <= 2 or row_marg.min() <= col_marg.min()
        )
        if merge_rows:
            j = int(np.argmin(row_marg))
            k = j + 1 if j + 1 < tab.shape[0] else j - 1
            tab[k] += tab[j]
            tab = np.delete(tab, j, axis=0)
        else:
            j = int(np.argmin(col_marg))
            k = j + 1 if j + 1 < tab.shape[1] else j - 1
            tab[:, k] += tab[:, j]
            tab = np.delete(tab, j, axis=1)


def chi_square_independence(x: Sequence, y: Sequence) -> tuple[float, float]:
    """Contingency-table chi-square for two categorical samples.

    Sparse cells are pooled by merging adjacent categories (the inputs are
    ordinal after binning); SparseCells is raised when pooling cannot reach
    expected counts of 5.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ValueError("samples must have equal length")
    if len(x) < 100:
        raise TooFewSamples(f"chi-square independence needs >= 100 pairs, got {len(x)}")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(table, (xi, yi), 1.0)
    if min(table.shape) < 2:
        raise SparseCells("one of the samples is constant")
    tab = _merge_sparse(table)
    expected = np.outer(tab.sum(axis=1), tab.sum(axis=0)) / tab.sum()
    stat = float(((tab - expected) ** 2 / expected).sum())
    dof = (tab.shape[0] - 1) * (tab.shape[1] - 1)
    return stat, float(gammaincc(dof / 2.0, stat / 2.0))


def chi_square_gof(samples: Sequence[int], law: OffspringLaw) -> tuple[float, float]:
    """Goodness of fit of integer samples against an offspring law's pmf.

    Bins 0..K plus a tail bin, where K covers all but 1e-9 of the mass;
    adjacent bins with expected counts below 5 are pooled.
    """
    x = np.asarray(samples, dtype=np.int64)
    n = len(x)
    if n < 100:
        raise TooFewSamples(f"GOF needs >= 100 samples, got {n}")
    kmax = int(x.max())
    cum = 0.0
    probs = []
    k = 0
    while cum < 1.0 - 1e-9 and k <= max(kmax, 1) + 64:
        pk = law.pmf(k)
        probs.append(pk)
        cum += pk
        k += 1
    probs.append(max(0.0, 1.0 - cum))  # tail
    edges = len(probs)
    observed = np.bincount(np.minimum(x, edges - 1), minlength=edges).astype(float)
    expected = np.asarray(probs) * n
    # pool adjacent sparse bins from the right
    obs, exp = list(observed), list(expected)
    i = len(obs) - 1
    while i > 0:
        if exp[i] < 5.0:
            exp[i - 1] += exp[i]
            obs[i - 1] += obs[i]
            del exp[i], obs[i]
        i -= 1
    if len(obs) < 2 or min(exp) < 5.0:
        raise SparseCells("law support too concentrated for a chi-square GOF")
    obs_a, exp_a = np.asarray(obs), np.asarray(exp)
    stat = float(((obs_a - exp_a) ** 2 / exp_a).sum())
    dof = len(obs_a) - 1
    return stat, float(gammaincc(dof / 2.0, stat / 2.0))


def bin_quantiles(values: Sequence[float], bins: int) -> np.ndarray:
    """Ordinal quantile-bin codes for a continuous sample."""
    v = np.asarray(values, dtype=float)
    edges = np.quantile(v, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="right")


def _verdict_z(z: float) -> str:
    az = abs(z)
    if az < 3.0:
        return "pass"
    if az <= 4.0:
        return "inconclusive"
    return "fail"


def _verdict_p(p: float) -> str:
    if p < 0.001:
        return "fail"
    if p <= 0.01:
        return "inconclusive"
    return "pass"


# ---------------------------------------------------------------------------
# configuration and report
# ---------------------------------------------------------------------------

KNOWN_CHECKS = (
    "lln",
    "extinction",
    "clt_ks",
    "clt_var",
    "clt_var_w",
    "poisson_moments",
    "covariance",
    "acquisition",
    "coupled_law",
    "capacity_independence",
)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: ModelSpec
    n_values: tuple
    replicates: int
    seed: int
    condition_on_survival: bool = True
    kappa: float = 0.5
    checks: tuple = ("lln",)
    c_w_variant: str = "proof"
    threads: int = 1
    grid: tuple = (0.5, 1.0, 2.0)
    snapshot_replicates: int = 1000
    acq_fractions: tuple = (0.25, 0.5, 0.75)
    kappa_set: tuple = (0.2, 0.5, 0.8)
    coupled_n: int = 50
    coupled_replicates: int = 20_000
    override_theta: float | None = None

    def __post_init__(self):
        if not self.n_values:
            raise ConfigError("n_values must be nonempty")
        if self.replicates < 2:
            raise ConfigError("replicates must be >= 2 for any variance check")
        unknown = [c for c in self.checks if c not in KNOWN_CHECKS]
        if unknown:
            raise ConfigError(f"unknown checks: {unknown}; known: {list(KNOWN_CHECKS)}")


@dataclass
class CheckRecord:
    check_id: str
    n: int
    estimate: float
    target: float
    se: float | None
    statistic: float | None
    p_value: float | None
    z: float | None
    verdict: str
    detail: str = ""

    def to_json_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "n": self.n,
            "estimate": self.estimate,
            "target": self.target,
            "se": self.se,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "z": self.z,
            "verdict": self.verdict,
            "detail": self.detail,
        }


REPORT_CSV_COLUMNS = (
    "check_id",
    "n",
    "estimate",
    "target",
    "se",
    "statistic",
    "p_value",
    "z",
    "verdict",
    "detail",
)


@dataclass
class ValidationReport:
    records: list
    metadata: dict
    samples: dict = field(default_factory=dict, repr=False)

    def verdict_counts(self) -> dict:
        out = {"pass": 0, "fail": 0, "inconclusive": 0}
        for r in self.records:
            out[r.verdict] += 1
        return out

    def exit_status(self) -> int:
        return 1 if any(r.verdict == "fail" for r in self.records) else 0

    def to_json_dict(self, include_volatile: bool = False) -> dict:
        meta = dict(self.metadata)
        if not include_volatile:
            meta.pop("wall_time_s", None)
        return {
            "metadata": meta,
            "records": [r.to_json_dict() for r in self.records],
            "verdicts": self.verdict_counts(),
        }

    def to_json(self, include_volatile: bool = False) -> str:
        return json.dumps(self.to_json_dict(include_volatile), sort_keys=True, indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ValidationReport":
        records = [CheckRecord(**r) for r in doc["records"]]
        return cls(records=records, metadata=dict(doc["metadata"]))

    def write_csv(self, out: io.TextIOBase) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(REPORT_CSV_COLUMNS)
        for r in self.records:
            writer.writerow(
                [
                    r.check_id,
                    r.n,
                    repr(r.estimate),
                    repr(r.target),
                    "" if r.se is None else repr(r.se),
                    "" if r.statistic is None else repr(r.statistic),
                    "" if r.p_value is None else repr(r.p_value),
                    "" if r.z is None else repr(r.z),
                    r.verdict,
                    r.detail,
                ]
            )


# ---------------------------------------------------------------------------
# replicate tables
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ReplicateTable:
    """Column store for one batch of epidemics at a fixed n."""

    n: int
    seeds: np.ndarray
    taus: np.ndarray
    tau_tildes: np.ndarray
    infected: np.ndarray
    counts: np.ndarray          # (R, J)
    survived: np.ndarray | None = None


def _index_blocks(count: int, workers: int) -> list[tuple[int, int]]:
    if count <= 0:
        return []
    per = max(1, math.ceil(count / max(1, workers * 4)))
    return [(a, min(a + per, count)) for a in range(0, count, per)]


def _parallel_blocks(task: Callable, arg_blocks: Sequence, workers: int) -> list:
    """Run `task` over argument blocks, concatenating results in block order.

    Uses a process pool (threads cannot speed this CPU-bound work under the
    GIL); per-index derived seeds make the output independent of the worker
    count. Falls back to in-process execution when pools are unavailable.
    """
    if workers <= 1 or len(arg_blocks) <= 1:
        out: list = []
        for ab in arg_blocks:
            out.extend(task(ab))
        return out
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        ctx = multiprocessing.get_context()
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            out = []
            for part in pool.map(task, arg_blocks):
                out.extend(part)
            return out
    except (OSError, PermissionError):
        out = []
        for ab in arg_blocks:
            out.extend(task(ab))
        return out


def _replicate_block(args) -> list:
    instance, master_seed, stream, opts, start, stop = args
    rows = []
    for r in range(start, stop):
        rng = replicate_rng(master_seed, stream, instance.n, r)
        res = run_epidemic(instance, rng, opts)
        rows.append((res.tau, res.tau_tilde, res.total_infected, res.final_counts))
    return rows


def run_replicates(
    instance: InstanceSpec,
    replicates: int,
    master_seed: int,
    *,
    threads: int = 1,
    stream: int = STREAM_EPIDEMIC,
    opts: EpidemicOptions | None = None,
) -> ReplicateTable:
    """Run independent epidemics with per-replicate derived seeds."""
    opts = opts or EpidemicOptions()
    rows = _parallel_blocks(
        _replicate_block,
        [(instance, master_seed, stream, opts, a, b)
         for a, b in _index_blocks(replicates, threads)],
        threads,
    )
    taus = np.array([r[0] for r in rows], dtype=np.int64)
    tau_tildes = np.array([r[1] for r in rows], dtype=float)
    infected = np.array([r[2] for r in rows], dtype=np.int64)
    counts = np.array([r[3] for r in rows], dtype=np.int64)
    seeds = np.array(
        [derive_seed(master_seed, stream, instance.n, r) for r in range(replicates)],
        dtype=np.uint64,
    )
    return ReplicateTable(
        n=instance.n, seeds=seeds, taus=taus, tau_tildes=tau_tildes,
        infected=infected, counts=counts,
    )


# ---------------------------------------------------------------------------
# covariance check
# ---------------------------------------------------------------------------

def empirical_covariance_check(
    snapshots: Sequence[ContinuousSnapshot],
    kernels: Sequence[limits.CovarianceKernel],
    grid: Sequence[float] | None = None,
) -> list[CheckRecord]:
    """Compare empirical covariances of the sqrt(n)-scaled snapshot series
    against their predicted kernels, one z-scored record per grid pair."""
    if len(snapshots) < 500:
        raise TooFewSamples(f"covariance check needs >= 500 snapshots, got {len(snapshots)}")
    base = snapshots[0]
    g = np.asarray(grid if grid is not None else base.grid, dtype=float)
    for s in snapshots:
        if len(s.grid) != len(g) or np.any(s.grid != g):
            raise GridMismatch("snapshots do not share the requested grid")
    spec = kernels[0].spec
    n = base.n
    m = len(g)
    gamma = np.asarray(spec.gamma)
    beta = np.asarray(spec.beta)
    counts = np.stack([s.counts for s in snapshots])              # (R, J, m)
    mean_ct = n * gamma[:, None] * (1.0 - np.exp(-np.outer(beta, g)))
    z_type = (counts - mean_ct[None]) / math.sqrt(n)
    z_total = z_type.sum(axis=1)
    z_attempts = None
    if base.attempts is not None:
        attempts = np.stack([s.attempts for s in snapshots])      # (R, m)
        z_attempts = (attempts - n * g[None]) / math.sqrt(n)

    def cov_record(xa: np.ndarray, xb: np.ndarray, target: float, scale: float, label: str) -> CheckRecord:
        u = (xa - xa.mean()) * (xb - xb.mean())
        est = float(u.sum() / (len(u) - 1)) / scale
        se = float(u.std(ddof=1) / math.sqrt(len(u))) / scale
        z = (est - target) / se if se > 0 else 0.0
        return CheckRecord(
            check_id="covariance", n=n, estimate=est, target=target, se=se,
            statistic=None, p_value=None, z=z, verdict=_verdict_z(z), detail=label,
        )

    records = []
    for kern in kernels:
        for a in range(m):
            for b in range(m):
                if kern.kind in ("n_type", "n_total", "poisson") and b < a:
                    continue
                s, t = float(g[a]), float(g[b])
                target = limits.covariance(kern, s, t)
                if kern.kind == "n_type":
                    i = kern.type_index
                    rec = cov_record(
                        z_type[:, i, a], z_type[:, i, b], target, float(gamma[i]),
                        f"n_type[{i}] s={s} t={t}",
                    )
                elif kern.kind == "n_total":
                    rec = cov_record(z_total[:, a], z_total[:, b], target, 1.0,
                                     f"n_total s={s} t={t}")
                elif kern.kind == "joint":
                    if z_attempts is None:
                        raise GridMismatch("joint kernel requires snapshots with attempt totals")
                    i = kern.type_index
                    rec = cov_record(z_type[:, i, a], z_attempts[:, b], target, 1.0,
                                     f"joint[{i}] s={s} t={t}")
                elif kern.kind == "poisson":
                    if z_attempts is None:
                        raise GridMismatch("poisson kernel requires snapshots with attempt totals")
                    rec = cov_record(z_attempts[:, a], z_attempts[:, b], target, 1.0,
                                     f"poisson s={s} t={t}")
                else:
                    continue
                records.append(rec)
    return records


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

class _NContext:
    """Lazily built shared state for all checks at one population size."""

    def __init__(self, config: ExperimentConfig, n: int, preds):
        self.config = config
        self.n = n
        self.preds = preds
        self.instance = realize_instance(config.spec, n)
        self._table: ReplicateTable | None = None
        self._snapshots: list[ContinuousSnapshot] | None = None

    @property
    def theta(self) -> float:
        if self.config.override_theta is not None:
            return self.config.override_theta
        return self.preds.theta

    def targets(self):
        """(theta, w_vec, w_total, vtt, vt, vw_proof, vw_display) at the
        effective theta (respects the negative-control override)."""
        spec = self.config.spec
        th = self.theta
        gamma = np.asarray(spec.gamma)
        beta = np.asarray(spec.beta)
        w_vec = gamma * (1.0 - np.exp(-beta * th))
        vtt, vt, vw_p = limits.clt_variances(spec, "proof", theta=th)
        _, _, vw_d = limits.clt_variances(spec, "display", theta=th)
        return th, w_vec, float(w_vec.sum()), vtt, vt, vw_p, vw_d

    def table(self) -> ReplicateTable:
        if self._table is None:
            tab = run_replicates(
                self.instance, self.config.replicates, self.config.seed,
                threads=self.config.threads,
            )
            flags = np.array(
                [tau >= self.config.kappa * self.theta * self.n for tau in tab.taus]
            )
            tab.survived = flags
            self._table = tab
        return self._table

    def survivors(self) -> np.ndarray:
        tab = self.table()
        if not self.config.condition_on_survival:
            return np.ones(len(tab.taus), dtype=bool)
        return tab.survived

    def snapshots(self) -> list[ContinuousSnapshot]:
        if self._snapshots is None:
            cfg = self.config
            self._snapshots = _parallel_blocks(
                _snapshot_block,
                [(self.instance, cfg.grid, cfg.seed, self.n, True, (), a, b)
                 for a, b in _index_blocks(cfg.snapshot_replicates, cfg.threads)],
                cfg.threads,
            )
        return self._snapshots


def _check_lln(ctx: _NContext) -> list[CheckRecord]:
    th, _, w_total, *_ = ctx.targets()
    tab = ctx.table()
    keep = ctx.survivors()
    records = []
    for label, values, target in (
        ("tau/n", tab.taus[keep] / ctx.n, th),
        ("tau_tilde/n", tab.tau_tildes[keep] / ctx.n, th),
        ("infected/n", tab.infected[keep] / ctx.n, w_total),
    ):
        if len(values) < 2:
            raise InsufficientSurvivors("not enough surviving replicates for LLN check")
        est = float(np.mean(values))
        se = float(np.std(values, ddof=1) / math.sqrt(len(values)))
        z = (est - target) / se if se > 0 else 0.0
        records.append(
            CheckRecord("lln", ctx.n, est, target, se, None, None, z, _verdict_z(z),
                        detail=label)
        )
    return records


def _check_extinction(ctx: _NContext) -> list[CheckRecord]:
    tab = ctx.table()
    frac = float(np.mean(~tab.survived))
    target = ctx.preds.sigma_mgw
    se = math.sqrt(max(frac * (1 - frac), 1e-12) / len(tab.taus))
    z = (frac - target) / se
    records = [
        CheckRecord("extinction", ctx.n, frac, target, se, None, None, z,
                    _verdict_z(z), detail="extinct fraction vs sigma_mgw")
    ]
    flags = np.stack([tab.taus >= k * ctx.theta * ctx.n for k in ctx.config.kappa_set])
    agree = float(np.mean(np.all(flags == flags[0][None, :], axis=0)))
    records.append(
        CheckRecord(
            "extinction", ctx.n, agree, 1.0, None, None, None, None,
            "pass" if agree >= 0.999 else "fail",
            detail=f"classification agreement across kappa={list(ctx.config.kappa_set)}",
        )
    )
    return records


def _standardized(ctx: _NContext):
    th, _, w_total, vtt, vt, vw_p, vw_d = ctx.targets()
    tab = ctx.table()
    keep = ctx.survivors()
    if int(keep.sum()) < 30:
        raise InsufficientSurvivors(
            f"{int(keep.sum())} surviving replicates; need >= 30 for distributional checks"
        )
    root_n = math.sqrt(ctx.n)
    return {
        "tau": (tab.taus[keep] - ctx.n * th) / root_n,
        "tau_tilde": (tab.tau_tildes[keep] - ctx.n * th) / root_n,
        "infected": (tab.infected[keep] - ctx.n * w_total) / root_n,
        "targets": (vtt, vt, vw_p, vw_d),
    }


def _check_clt_ks(ctx: _NContext) -> list[CheckRecord]:
    data = _standardized(ctx)
    vtt, vt, vw_p, vw_d = data["targets"]
    vw = vw_p if ctx.config.c_w_variant == "proof" else vw_d
    records = []
    for label, values, var in (
        ("tau", data["tau"], vt),
        ("tau_tilde", data["tau_tilde"], vtt),
        ("infected", data["infected"], vw),
    ):
        stat, p = ks_normality(values / math.sqrt(var))
        records.append(
            CheckRecord("clt_ks", ctx.n, stat, 0.0, None, stat, p, None,
                        _verdict_p(p), detail=f"KS normality of standardized {label}")
        )
    return records


def _var_record(check_id, ctx, values, target, label) -> CheckRecord:
    est = float(np.var(values, ddof=1))
    centered = values - values.mean()
    m4 = float(np.mean(centered**4))
    se = math.sqrt(max(m4 - est**2, 0.0) / len(values))
    z = (est - target) / se if se > 0 else 0.0
    return CheckRecord(check_id, ctx.n, est, target, se, None, None, z,
                       _verdict_z(z), detail=label)


def _check_clt_var(ctx: _NContext) -> list[CheckRecord]:
    data = _standardized(ctx)
    vtt, vt, _, _ = data["targets"]
    return [
        _var_record("clt_var", ctx, data["tau_tilde"], vtt,
                    f"var of standardized tau_tilde (ratio={np.var(data['tau_tilde'], ddof=1)/vtt:.4f})"),
        _var_record("clt_var", ctx, data["tau"], vt,
                    f"var of standardized tau (ratio={np.var(data['tau'], ddof=1)/vt:.4f})"),
    ]


def _check_clt_var_w(ctx: _NContext) -> list[CheckRecord]:
    data = _standardized(ctx)
    _, _, vw_p, vw_d = data["targets"]
    est = float(np.var(data["infected"], ddof=1))
    matches = []
    if abs(est / vw_p - 1.0) <= 0.15:
        matches.append("proof")
    if abs(est / vw_d - 1.0) <= 0.15:
        matches.append("display")
    selected = ctx.config.c_w_variant
    target = vw_p if selected == "proof" else vw_d
    ok = len(matches) == 1 and matches[0] == selected
    centered = data["infected"] - data["infected"].mean()
    se = math.sqrt(max(float(np.mean(centered**4)) - est**2, 0.0) / len(centered))
    z = (est - target) / se if se > 0 else 0.0
    return [
        CheckRecord(
            "clt_var_w", ctx.n, est, target, se, None, None, z,
            "pass" if ok else "fail",
            detail=(
                f"matched={matches or ['none']} selected={selected} "
                f"ratio_proof={est / vw_p:.4f} ratio_display={est / vw_d:.4f}"
            ),
        )
    ]


def _check_poisson_moments(ctx: _NContext) -> list[CheckRecord]:
    snaps = ctx.snapshots()
    counts = np.stack([s.counts for s in snaps])     # (R, J, m)
    spec = ctx.config.spec
    records = []
    for i in range(spec.J):
        ni = int(ctx.instance.n_i[i])
        for jg, s in enumerate(ctx.config.grid):
            decay = math.exp(-spec.beta[i] * s)
            mean_t = ni * (1.0 - decay)
            var_t = ni * decay * (1.0 - decay)
            x = counts[:, i, jg].astype(float)
            est = float(x.mean())
            se = float(x.std(ddof=1) / math.sqrt(len(x)))
            z = (est - mean_t) / se if se > 0 else 0.0
            records.append(
                CheckRecord("poisson_moments", ctx.n, est, mean_t, se, None, None,
                            z, _verdict_z(z), detail=f"mean type={i} s={s}")
            )
            records.append(
                _var_record("poisson_moments", ctx, x, var_t, f"var type={i} s={s}")
            )
    return records


def _check_covariance(ctx: _NContext) -> list[CheckRecord]:
    spec = ctx.config.spec
    kernels = [limits.CovarianceKernel.n_type(spec, i) for i in range(spec.J)]
    kernels.append(limits.CovarianceKernel.n_total(spec))
    kernels.extend(limits.CovarianceKernel.joint(spec, i) for i in range(spec.J))
    kernels.append(limits.CovarianceKernel.poisson(spec))
    return empirical_covariance_check(ctx.snapshots(), kernels, ctx.config.grid)


def _snapshot_block(args) -> list:
    instance, grid, seed, n, include_attempts, acq_fractions, start, stop = args
    out = []
    for r in range(start, stop):
        rng = replicate_rng(seed, STREAM_SNAPSHOT, n, r)
        out.append(
            continuous_snapshot(
                instance, grid, rng,
                include_attempts=include_attempts, acq_fractions=acq_fractions,
            )
        )
    return out


def _check_acquisition(ctx: _NContext) -> list[CheckRecord]:
    cfg = ctx.config
    spec = cfg.spec
    snaps = _parallel_blocks(
        _snapshot_block,
        [(ctx.instance, cfg.grid, cfg.seed, ctx.n, False, cfg.acq_fractions, a, b)
         for a, b in _index_blocks(cfg.snapshot_replicates, cfg.threads)],
        cfg.threads,
    )
    acqs = [s.acq for s in snaps]
    records = []
    for i in range(spec.J):
        ni = int(ctx.instance.n_i[i])
        for q in cfg.acq_fractions:
            vals = np.array([a[(i, float(q))] for a in acqs])
            vals = vals[np.isfinite(vals)]
            center = math.log(1.0 / (1.0 - q)) / spec.beta[i]
            x = math.sqrt(ni) * (vals / ctx.n - center)
            target = limits.covariance(limits.CovarianceKernel.t_type(spec, i), q, q)
            records.append(
                _var_record("acquisition", ctx, x, target,
                            f"var of scaled acquisition time type={i} q={q}")
            )
    return records


def _coupled_category(tau: int, infected: int) -> tuple:
    return (int(tau), int(infected))


def _coupled_ref_block(args) -> list:
    instance, seed, start, stop = args
    opts = EpidemicOptions(engine="stepwise")
    out = []
    for r in range(start, stop):
        rng = replicate_rng(seed, STREAM_COUPLED_REF, instance.n, r)
        res = run_epidemic(instance, rng, opts)
        out.append(_coupled_category(res.tau, res.total_infected))
    return out


def _coupled_block(args) -> list:
    instance, seed, start, stop = args
    out = []
    for r in range(start, stop):
        rng = replicate_rng(seed, STREAM_COUPLED, instance.n, r)
        res = run_coupled(instance, rng, record_acquisitions=False)
        out.append(_coupled_category(res.epidemic.tau, res.epidemic.total_infected))
    return out


def _check_coupled_law(ctx: _NContext) -> list[CheckRecord]:
    cfg = ctx.config
    inst = realize_instance(cfg.spec, cfg.coupled_n)
    R = cfg.coupled_replicates
    blocks = _index_blocks(R, cfg.threads)
    a = _parallel_blocks(_coupled_ref_block,
                         [(inst, cfg.seed, lo, hi) for lo, hi in blocks], cfg.threads)
    b = _parallel_blocks(_coupled_block,
                         [(inst, cfg.seed, lo, hi) for lo, hi in blocks], cfg.threads)
    cats = {c: k for k, c in enumerate(sorted(set(a) | set(b)))}
    source = np.array([0] * len(a) + [1] * len(b))
    code = np.array([cats[c] for c in a] + [cats[c] for c in b])
    stat, p = chi_square_independence(source, code)
    return [
        CheckRecord("coupled_law", cfg.coupled_n, stat, 0.0, None, stat, p, None,
                    _verdict_p(p),
                    detail=f"two-sample (tau, infected) law match over {R} paired runs")
    ]


def _capacity_block(args) -> list:
    instance, seed, target_type, start, stop = args
    J = instance.spec.J
    out = []
    for r in range(start, stop):
        rng = replicate_rng(seed, STREAM_COUPLED, instance.n, r)
        res = run_coupled(instance, rng, capacity_pad=1, extend_acquisitions_to=1)
        caps = [int(res.revealed_capacities[i][0]) for i in range(J)]
        out.append((caps, int(res.epidemic.acquisition_times[target_type][0])))
    return out


def _check_capacity_independence(ctx: _NContext) -> list[CheckRecord]:
    cfg = ctx.config
    spec = cfg.spec
    if spec.J < 2:
        raise ConfigError("capacity_independence needs J >= 2 (first acquisition of a "
                          "non-seed type is degenerate otherwise)")
    target_type = 0 if spec.i0 != 0 else 1
    inst = realize_instance(spec, cfg.coupled_n)
    R = cfg.coupled_replicates
    rows = _parallel_blocks(
        _capacity_block,
        [(inst, cfg.seed, target_type, lo, hi) for lo, hi in _index_blocks(R, cfg.threads)],
        cfg.threads,
    )
    caps_first = np.array([r[0][target_type] for r in rows])
    t_first = np.array([r[1] for r in rows], dtype=float)
    stat, p = chi_square_independence(caps_first, bin_quantiles(t_first, 6))
    records = [
        CheckRecord("capacity_independence", cfg.coupled_n, stat, 0.0, None, stat,
                    p, None, _verdict_p(p),
                    detail=f"chi-square independence of (L^{target_type}_1, T^{target_type}_1)")
    ]
    for i in range(spec.J):
        caps_i = np.array([r[0][i] for r in rows])
        stat_i, p_i = chi_square_gof(caps_i, spec.offspring[i])
        records.append(
            CheckRecord("capacity_independence", cfg.coupled_n, stat_i, 0.0, None,
                        stat_i, p_i, None, _verdict_p(p_i),
                        detail=f"GOF of first revealed capacity, type {i}")
        )
    return records


_CHECKS: dict[str, Callable] = {
    "lln": _check_lln,
    "extinction": _check_extinction,
    "clt_ks": _check_clt_ks,
    "clt_var": _check_clt_var,
    "clt_var_w": _check_clt_var_w,
    "poisson_moments": _check_poisson_moments,
    "covariance": _check_covariance,
    "acquisition": _check_acquisition,
    "coupled_law": _check_coupled_law,
    "capacity_independence": _check_capacity_independence,
}


def run_experiment(config: ExperimentConfig, *, keep_samples: bool = False) -> ValidationReport:
    """Run every requested check at every population size.

    Deterministic given (config, seed): replicate RNGs are derived, results
    aggregated in replicate order, and the report carries no volatile fields
    apart from wall time (excluded from serialized output by default).
    """
    start = time.perf_counter()
    preds = limits.predictions(config.spec, config.c_w_variant)
    records: list[CheckRecord] = []
    samples: dict = {}
    survivors_meta: dict = {}
    for n in config.n_values:
        ctx = _NContext(config, int(n), preds)
        for check in config.checks:
            records.extend(_CHECKS[check](ctx))
        if ctx._table is not None:
            survivors_meta[str(n)] = int(ctx._table.survived.sum())
            if keep_samples:
                samples[int(n)] = ctx._table
    metadata = {
        "seed": config.seed,
        "n_values": [int(n) for n in config.n_values],
        "replicates": config.replicates,
        "checks": list(config.checks),
        "c_w_variant": config.c_w_variant,
        "condition_on_survival": config.condition_on_survival,
        "kappa": config.kappa,
        "survivors": survivors_meta,
        "predictions": preds.to_json_dict(),
        "wall_time_s": time.perf_counter() - start,
    }
    return ValidationReport(records=records, metadata=metadata, samples=samples)

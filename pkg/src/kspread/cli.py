"""Command-line interface: predict, simulate, validate, sweep.

All verbs read one JSON config document (see configs/ for examples) and
write machine-readable files into the output directory; validate and sweep
also render diagnostic figures there. Flags can be mirrored by environment
variables with the KSPREAD_ prefix (KSPREAD_SEED, KSPREAD_N,
KSPREAD_REPLICATES, KSPREAD_THREADS, KSPREAD_CW).

Exit codes: 0 success (all checks pass or are inconclusive), 1 at least one
check failed, 2 model/semantic error (e.g. subcritical spec where theta is
required), 3 I/O failure, 4 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import limits
from .branching import classify_survival
from .errors import ConfigError, KspreadError, RebalanceImpossible, Subcritical
from .harness import ExperimentConfig, run_replicates, run_experiment
from .model import ModelSpec, OffspringLaw, realize_instance, validate_spec
from .report import (
    render_figures,
    render_sweep_figure,
    write_predictions,
    write_report_files,
)
from .simulate import write_replicates_csv

ENV_PREFIX = "KSPREAD_"


def _env_override(name: str, cast, current):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None or current is not None:
        return current
    return cast(raw)


def load_config(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if "model" not in doc:
        raise ConfigError("config must contain a 'model' section")
    return doc


def spec_from_config(doc: dict) -> ModelSpec:
    return ModelSpec.from_json_dict(doc["model"])


def experiment_from_config(doc: dict, spec: ModelSpec, args) -> ExperimentConfig:
    n_values = doc.get("n_values")
    if n_values is None:
        n_values = [doc.get("n", 10_000)]
    if args.n is not None:
        n_values = [args.n]
    replicates = args.replicates if args.replicates is not None else doc.get("replicates", 1000)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    threads = args.threads if args.threads is not None else doc.get("threads", 0)
    if threads == 0:
        threads = os.cpu_count() or 1
    cw = args.cw if getattr(args, "cw", None) else doc.get("cw_variant", "proof")
    coupled = doc.get("coupled", {})
    return ExperimentConfig(
        spec=spec,
        n_values=tuple(int(n) for n in n_values),
        replicates=int(replicates),
        seed=int(seed),
        condition_on_survival=bool(doc.get("condition_on_survival", True)),
        kappa=float(doc.get("kappa", 0.5)),
        checks=tuple(doc.get("checks", ["lln"])),
        c_w_variant=cw,
        threads=int(threads),
        grid=tuple(doc.get("grid", [0.5, 1.0, 2.0])),
        snapshot_replicates=int(doc.get("snapshot_replicates", 1000)),
        acq_fractions=tuple(doc.get("acq_fractions", [0.25, 0.5, 0.75])),
        kappa_set=tuple(doc.get("kappa_set", [0.2, 0.5, 0.8])),
        coupled_n=int(coupled.get("n", 50)),
        coupled_replicates=int(coupled.get("replicates", 20_000)),
        override_theta=doc.get("override_theta"),
    )


def cmd_predict(args) -> int:
    doc = load_config(args.config)
    spec = spec_from_config(doc)
    cw = args.cw or doc.get("cw_variant", "proof")
    preds = limits.predictions(spec, cw)
    path = write_predictions(preds, args.output_dir)
    print(f"theta        = {preds.theta:.9f}")
    print(f"w_total      = {preds.w_total:.9f}")
    print(f"rho(M)       = {preds.rho:.9f}")
    print(f"sigma_mgw    = {preds.sigma_mgw:.9f}")
    print(f"var_tau_tilde= {preds.var_tau_tilde:.9f}")
    print(f"var_tau      = {preds.var_tau:.9f}")
    print(f"var_w[{preds.c_w_variant}] = {preds.var_w:.9f}")
    print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    doc = load_config(args.config)
    spec = spec_from_config(doc)
    cfg = experiment_from_config(doc, spec, args)
    n = cfg.n_values[0]
    instance = realize_instance(spec, n)
    table = run_replicates(instance, cfg.replicates, cfg.seed, threads=cfg.threads)
    survived = None
    try:
        preds = limits.predictions(spec, cfg.c_w_variant)
        survived = [bool(t >= cfg.kappa * preds.theta * n) for t in table.taus]
    except Subcritical:
        survived = [False] * len(table.taus)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "replicates.csv"
    from .simulate import EpidemicResult

    results = [
        EpidemicResult(
            n=n, tau=int(table.taus[r]), tau_tilde=float(table.tau_tildes[r]),
            final_counts=tuple(int(c) for c in table.counts[r]),
            total_infected=int(table.infected[r]),
            full_transmission=bool(table.infected[r] == n),
        )
        for r in range(len(table.taus))
    ]
    with path.open("w", newline="") as fh:
        write_replicates_csv(fh, results, table.seeds.tolist(), survived)
    print(f"wrote {path} ({len(results)} replicates, n={n}, seed={cfg.seed})")
    return 0


def cmd_validate(args) -> int:
    doc = load_config(args.config)
    spec = spec_from_config(doc)
    cfg = experiment_from_config(doc, spec, args)
    report = run_experiment(cfg, keep_samples=True)
    paths = write_report_files(report, args.output_dir)
    if not args.no_figures:
        paths += render_figures(report, args.output_dir)
    counts = report.verdict_counts()
    for rec in report.records:
        mark = {"pass": "PASS", "fail": "FAIL", "inconclusive": "INCONCLUSIVE"}[rec.verdict]
        print(f"[{mark:12s}] {rec.check_id:22s} n={rec.n:<8d} {rec.detail}")
    print(
        f"{counts['pass']} pass, {counts['inconclusive']} inconclusive, "
        f"{counts['fail']} fail over {len(report.records)} records "
        f"({report.metadata['wall_time_s']:.1f} s)"
    )
    for p in paths:
        print(f"wrote {p}")
    return report.exit_status()


def _sweep_points(doc: dict, spec: ModelSpec):
    sweep = doc.get("sweep")
    if not sweep:
        raise ConfigError("sweep verb needs a 'sweep' section {parameter, values}")
    parameter = sweep["parameter"]
    values = sweep["values"]
    rebalance = sweep.get("rebalance", "none")
    for v in values:
        yield v, _apply_parameter(spec, parameter, v, rebalance), parameter


def _apply_parameter(spec: ModelSpec, parameter: str, value, rebalance: str) -> tuple:
    """Returns (spec_at_point, n_override or None)."""
    if parameter == "n":
        return spec, int(value)
    if parameter.startswith("beta_"):
        idx = int(parameter.split("_", 1)[1]) - 1
        beta = list(spec.beta)
        beta[idx] = float(value)
        gamma = np.asarray(spec.gamma)
        if rebalance == "none":
            raise RebalanceImpossible(
                "varying beta changes the total weight; declare rebalance='scale_others'"
            )
        if rebalance != "scale_others":
            raise ConfigError(f"unknown rebalance rule {rebalance!r}")
        rest = 1.0 - gamma[idx] * beta[idx]
        others = sum(g * b for k, (g, b) in enumerate(zip(gamma, beta)) if k != idx)
        if rest <= 0 or others <= 0:
            raise RebalanceImpossible(
                f"beta_{idx+1}={value} leaves weight {rest:.4g} for the other types"
            )
        scale = rest / others
        beta = [b if k == idx else b * scale for k, b in enumerate(beta)]
        return validate_spec(replace(spec, beta=tuple(beta))), None
    if parameter.startswith("mean_"):
        idx = int(parameter.split("_", 1)[1]) - 1
        law = spec.offspring[idx]
        if law.family == "point_mass":
            new_law = OffspringLaw.point_mass(int(value))
        elif law.family == "poisson":
            new_law = OffspringLaw.poisson(float(value))
        else:
            raise ConfigError(
                f"mean sweep supports point_mass and poisson laws, not {law.family}"
            )
        offspring = list(spec.offspring)
        offspring[idx] = new_law
        return validate_spec(replace(spec, offspring=tuple(offspring))), None
    raise ConfigError(f"unknown sweep parameter {parameter!r} (use n, beta_i, mean_i)")


def cmd_sweep(args) -> int:
    import csv as _csv

    doc = load_config(args.config)
    base_spec = spec_from_config(doc)
    rows = []
    for value, (spec_at, n_override), parameter in _sweep_points(doc, base_spec):
        cfg = experiment_from_config(doc, spec_at, args)
        n = n_override if n_override is not None else cfg.n_values[0]
        preds = limits.predictions(spec_at, cfg.c_w_variant)
        instance = realize_instance(spec_at, n)
        table = run_replicates(instance, cfg.replicates, cfg.seed, threads=cfg.threads)
        survived = table.taus >= cfg.kappa * preds.theta * n
        row = {
            parameter: value,
            "n": n,
            "theta": preds.theta,
            "w_total": preds.w_total,
            "rho": preds.rho,
            "sigma_mgw": preds.sigma_mgw,
            "var_tau_tilde": preds.var_tau_tilde,
            "var_tau": preds.var_tau,
            "var_w": preds.var_w,
            "replicates": cfg.replicates,
            "survivors": int(survived.sum()),
            "mean_tau_over_n": float(np.mean(table.taus[survived] / n)) if survived.any() else None,
            "mean_infected_over_n": float(np.mean(table.infected[survived] / n)) if survived.any() else None,
        }
        rows.append(row)
        print(f"{parameter}={value}: theta={preds.theta:.6f} "
              f"mean_tau/n={row['mean_tau_over_n']}")
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "sweep.csv"
    fieldnames = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    if not args.no_figures:
        render_sweep_figure(rows, fieldnames[0], outdir)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kspread",
        description="Simulate and validate the multitype spread process on K_n.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn in (
        ("predict", cmd_predict),
        ("simulate", cmd_simulate),
        ("validate", cmd_validate),
        ("sweep", cmd_sweep),
    ):
        p = sub.add_parser(verb)
        p.add_argument("-c", "--config", required=True, type=Path)
        p.add_argument("-o", "--output-dir", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--cw", choices=("proof", "display"), default=None)
        p.add_argument("--no-figures", action="store_true")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = _env_override("seed", int, args.seed)
    args.n = _env_override("n", int, args.n)
    args.replicates = _env_override("replicates", int, args.replicates)
    args.threads = _env_override("threads", int, args.threads)
    args.cw = _env_override("cw", str, args.cw)
    try:
        return args.fn(args)
    except Subcritical as exc:
        print(f"error: {exc} (rho(M) <= 1)", file=sys.stderr)
        return 2
    except (ConfigError, RebalanceImpossible) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except KspreadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

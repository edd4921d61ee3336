"""Report writers: canonical JSON/CSV files plus rendered diagnostic figures.

The JSON and CSV outputs are the machine boundary and are byte-stable for a
fixed (config, seed); figures are rendered next to them as PNGs for quick
visual triage (duration histogram, standardized-fluctuation fit, per-check
z-scores).
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import ValidationReport
from .limits import Predictions


def write_report_files(report: ValidationReport, outdir: Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    json_path = outdir / "report.json"
    json_path.write_text(report.to_json() + "\n")
    csv_path = outdir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        report.write_csv(fh)
    return [json_path, csv_path]


def write_predictions(preds: Predictions, outdir: Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "predictions.json"
    path.write_text(preds.to_json() + "\n")
    return path


def render_figures(report: ValidationReport, outdir: Path) -> list[Path]:
    """Render diagnostic figures for whichever data the report carries."""
    outdir = Path(outdir) / "figures"
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    preds = report.metadata.get("predictions", {})
    theta = preds.get("theta")
    for n, table in report.samples.items():
        paths.append(_duration_histogram(table, theta, outdir / f"duration_n{n}.png"))
        if table.survived is not None and int(table.survived.sum()) >= 30:
            paths.append(
                _standardized_fit(table, preds, outdir / f"clt_tau_n{n}.png")
            )
    zs = [(r.detail or r.check_id, r.z) for r in report.records if r.z is not None]
    if zs:
        paths.append(_z_bars(zs, outdir / "check_z.png"))
    return paths


def _duration_histogram(table, theta, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(table.taus / table.n, bins=60, color="#4878a8", alpha=0.85)
    if theta is not None:
        ax.axvline(theta, color="crimson", ls="--", lw=1.2, label=f"theta = {theta:.4f}")
        ax.legend(frameon=False)
    ax.set_xlabel("tau / n")
    ax.set_ylabel("replicates")
    ax.set_title(f"Duration per vertex, n = {table.n}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _standardized_fit(table, preds, path: Path) -> Path:
    theta = preds["theta"]
    var_tau = preds["var_tau"]
    keep = table.survived
    x = (table.taus[keep] - table.n * theta) / math.sqrt(table.n * var_tau)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(x, bins=50, density=True, color="#6aa84f", alpha=0.85, label="standardized tau")
    grid = np.linspace(-4, 4, 200)
    ax.plot(grid, np.exp(-grid**2 / 2) / math.sqrt(2 * math.pi), "k-", lw=1.2,
            label="N(0,1)")
    ax.set_xlabel("(tau - n theta) / sqrt(n var_tau)")
    ax.set_ylabel("density")
    ax.set_title(f"CLT fit on surviving runs, n = {table.n}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _z_bars(zs, path: Path) -> Path:
    labels = [z[0] for z in zs]
    values = [z[1] for z in zs]
    height = max(2.5, 0.22 * len(zs))
    fig, ax = plt.subplots(figsize=(8, height))
    y = np.arange(len(zs))
    colors = ["#4878a8" if abs(v) < 3 else ("#e69f00" if abs(v) <= 4 else "crimson")
              for v in values]
    ax.barh(y, values, color=colors)
    ax.axvline(0, color="k", lw=0.8)
    for bound in (-4, -3, 3, 4):
        ax.axvline(bound, color="gray", lw=0.6, ls=":")
    ax.set_yticks(y, labels, fontsize=6)
    ax.invert_yaxis()
    ax.set_xlabel("z-score (estimate vs prediction)")
    ax.set_title("Per-check z-scores")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_sweep_figure(rows: list[dict], parameter: str, outdir: Path) -> Path | None:
    """Convergence view over a sweep: |mean(tau/n) - theta| per grid point."""
    pts = [(r[parameter], abs(r["mean_tau_over_n"] - r["theta"])) for r in rows
           if r.get("mean_tau_over_n") is not None]
    if not pts:
        return None
    outdir = Path(outdir) / "figures"
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "sweep_convergence.png"
    xs, ys = zip(*pts)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, "o-", color="#4878a8")
    if parameter == "n" and min(ys) > 0:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(parameter)
    ax.set_ylabel("|mean(tau/n) - theta|")
    ax.set_title("LLN convergence over the sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path

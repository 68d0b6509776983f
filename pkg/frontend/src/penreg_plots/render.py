"""Two-panel experiment figures from results.csv / summary.json."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EXPECTED_HEADER = [
    "sim", "rep", "k", "sel_val_loss", "oracle_loss", "excess",
    "lambda_json", "wall_seconds", "converged",
]

FIGSIZE = (9.0, 3.6)


@dataclass
class PlotConfig:
    """Inputs of one rendering run."""

    results_path: str
    out_dir: str
    image_format: str = "png"
    loglog: bool = False
    summary_path: str | None = None

    def __post_init__(self) -> None:
        if self.image_format not in ("png", "svg"):
            raise ValueError(f"unsupported image format {self.image_format!r}")


@dataclass
class ResultRow:
    sim: int
    rep: int
    k: int
    sel_val_loss: float
    excess: float


def load_results(path: str | Path) -> list[ResultRow]:
    """Parse results.csv, insisting on the exact expected header."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"results file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty")
        if header != EXPECTED_HEADER:
            raise ValueError(
                f"{path} header {header} does not match the expected schema"
            )
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(EXPECTED_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(EXPECTED_HEADER)} fields")
            try:
                rows.append(ResultRow(
                    sim=int(rec[0]),
                    rep=int(rec[1]),
                    k=int(rec[2]),
                    sel_val_loss=float(rec[3]),
                    excess=float(rec[5]),
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}")
    if not rows:
        raise ValueError(f"{path} contains no data rows")
    return rows


def load_summary(path: str | Path | None) -> dict | None:
    if path is None:
        return None
    path = Path(path)
    if not path.exists():
        raise ValueError(f"summary file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})")


def _mean_sd(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return mean, sd


def _per_k_stats(rows: list[ResultRow], summary: dict | None):
    """Per-k (mean, sd) of both panels, taken from summary.json when it
    covers these rows (single source of truth), else from the rows."""
    ks = sorted({r.k for r in rows})
    if summary is not None and "per_k" in summary:
        per_k = summary["per_k"]
        if all(str(k) in per_k for k in ks):
            return ks, {
                k: {
                    "sel": (per_k[str(k)]["mean_sel_val_loss"],
                            per_k[str(k)]["sd_sel_val_loss"]),
                    "excess": (per_k[str(k)]["mean_excess"],
                               per_k[str(k)]["sd_excess"]),
                }
                for k in ks
            }
    stats = {}
    for k in ks:
        sel = [r.sel_val_loss for r in rows if r.k == k]
        exc = [r.excess for r in rows if r.k == k]
        stats[k] = {"sel": _mean_sd(sel), "excess": _mean_sd(exc)}
    return ks, stats


def _slope_annotation(summary: dict | None) -> str | None:
    """Displayed slope, read from summary.json only (never recomputed)."""
    if summary is None:
        return None
    slope = summary.get("slope_excl_k1")
    stderr = summary.get("stderr_excl_k1")
    if slope is None:
        return None
    if stderr is None:
        return f"slope = {slope:.2f}"
    return f"slope = {slope:.2f} (se {stderr:.2f})"


def build_figure(sim: int, rows: list[ResultRow], summary: dict | None,
                 loglog: bool) -> plt.Figure:
    """One two-panel figure: selected loss and excess versus k."""
    ks, stats = _per_k_stats(rows, summary)
    fig, (ax_sel, ax_exc) = plt.subplots(1, 2, figsize=FIGSIZE)
    fig.suptitle(f"Simulation {sim}: tuning cost vs free penalty parameters")

    sel_mean = [stats[k]["sel"][0] for k in ks]
    sel_sd = [stats[k]["sel"][1] for k in ks]
    ax_sel.errorbar(ks, sel_mean, yerr=sel_sd, fmt="o-", capsize=3)
    ax_sel.set_xlabel("free penalty parameters k")
    ax_sel.set_ylabel("selected model loss")
    ax_sel.set_xscale("log", base=2)
    ax_sel.set_xticks(ks)
    ax_sel.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())

    exc_mean = [stats[k]["excess"][0] for k in ks]
    exc_sd = [stats[k]["excess"][1] for k in ks]
    ax_exc.errorbar(ks, exc_mean, yerr=exc_sd, fmt="o-", capsize=3)
    ax_exc.set_xlabel("free penalty parameters k")
    ax_exc.set_ylabel("excess loss")
    ax_exc.set_xscale("log", base=2)
    ax_exc.set_xticks(ks)
    ax_exc.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
    if loglog:
        ax_exc.set_yscale("log")

    annotation = _slope_annotation(summary) if len(ks) > 1 else None
    if annotation is not None:
        ax_exc.annotate(annotation, xy=(0.05, 0.92), xycoords="axes fraction")

    fig.tight_layout(rect=(0, 0, 1, 0.93))
    return fig


def render_figures(config: PlotConfig) -> list[Path]:
    """Write one figure per simulation present in the results file."""
    rows = load_results(config.results_path)
    summary = load_summary(config.summary_path)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sim in sorted({r.sim for r in rows}):
        sim_rows = [r for r in rows if r.sim == sim]
        sim_summary = summary
        if summary is not None:
            echoed = summary.get("config", {}).get("sim")
            if echoed is not None and int(echoed) != sim:
                sim_summary = None  # summary belongs to a different run
        fig = build_figure(sim, sim_rows, sim_summary, config.loglog)
        path = out_dir / f"sim{sim}.{config.image_format}"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written

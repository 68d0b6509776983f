"""Static figure rendering for penalty-tuning experiment outputs.

Consumes the experiment runner's ``results.csv`` (and optionally its
``summary.json``) and draws, per simulation, a two-panel summary: selected
model loss and excess loss versus the number of free penalty parameters,
with replicate spread.  Statistics already present in ``summary.json``
(per-k aggregates, fitted slope) are displayed as-is, never recomputed.
"""

from penreg_plots.render import PlotConfig, build_figure, load_results, load_summary, render_figures

__all__ = [
    "PlotConfig",
    "build_figure",
    "load_results",
    "load_summary",
    "render_figures",
]

__version__ = "0.1.0"

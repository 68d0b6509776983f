"""Command-line entry point for figure rendering."""

from __future__ import annotations

import click

from penreg_plots.render import PlotConfig, render_figures


@click.group()
def main() -> None:
    """Figures for penalty-tuning experiment results."""


@main.command()
@click.option("--in", "results_path", type=click.Path(), required=True,
              help="results.csv written by the experiment runner.")
@click.option("--summary", "summary_path", type=click.Path(), default=None,
              help="summary.json for slope annotation and per-k aggregates.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--format", "image_format", type=click.Choice(["png", "svg"]),
              default="png", show_default=True)
@click.option("--loglog", is_flag=True, default=False,
              help="Log-scale the excess panel's y-axis.")
def render(results_path, summary_path, out_dir, image_format, loglog) -> None:
    """Render one two-panel figure per simulation in the results file."""
    config = PlotConfig(
        results_path=results_path,
        out_dir=out_dir,
        image_format=image_format,
        loglog=loglog,
        summary_path=summary_path,
    )
    try:
        written = render_figures(config)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    for path in written:
        click.echo(str(path))


if __name__ == "__main__":
    main()

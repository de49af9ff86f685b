"""Command-line entry point: ``intersection-bench <subcommand> [options]``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import bench
from .config import BenchConfig, ConfigError, load_config
from .layout import Turn


THRESHOLD_GRID = (0.0, 1.0, 2.0, 3.0, 4.0, 4.5, 5.0)
TRADEOFF_SCALES = (0.5, 1.0, 4.0, 10.0, 20.0, 40.0)
DENSITY_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


def _floats(text: str | None, default: tuple[float, ...]) -> tuple[float, ...]:
    if not text:
        return default
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _spec(ctx: click.Context, **overrides) -> bench.ExperimentSpec:
    cfg: BenchConfig = ctx.obj["config"]
    try:
        return bench.ExperimentSpec.from_config(cfg, **overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _emit(rows, out: str | None) -> None:
    text = bench.write_csv(rows, out)
    if out is None:
        click.echo(text, nl=False)
    else:
        click.echo(f"wrote {out}", err=True)


def _detail_path(out: str | None, detail: bool) -> Path | None:
    if not detail:
        return None
    base = Path(out) if out else Path("episodes.csv")
    return base.with_suffix(".jsonl")


def common(f):
    f = click.option("--turn", type=click.Choice([t.value for t in Turn]), default=None)(f)
    f = click.option("--density", type=float, default=None, help="Vehicle arrivals per second per lane.")(f)
    f = click.option("--seed", type=int, default=None, help="Base seed.")(f)
    f = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default stdout).")(f)
    f = click.option("--workers", type=int, default=1, show_default=True, help="Parallel episode workers.")(f)
    return f


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML configuration file.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: bool) -> None:
    """Intersection-crossing benchmark: POMCP vs TTC vs random."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx.obj = {"config": load_config(config_path)}
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


@main.command()
@common
@click.option("--policy", type=click.Choice(bench.POLICIES), default="pomcp", show_default=True)
@click.option("--threshold", type=float, default=None, help="TTC threshold in seconds.")
@click.option("--detail", is_flag=True, help="Write the per-step log as JSON lines next to --out.")
@click.pass_context
def episode(ctx, turn, density, seed, out, workers, policy, threshold, detail) -> None:
    """Run one episode and print its metrics as JSON."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed, policy=policy, threshold=threshold, episodes=1)
    res = bench.run_episode(spec, spec.seed, detail=detail)
    text = json.dumps(bench._jsonable(res.metrics.to_dict()), sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)
    path = _detail_path(out, detail)
    if path is not None:
        bench.write_jsonl(res.log or [], path)


@main.command()
@common
@click.option("--policy", type=click.Choice(bench.POLICIES), default="pomcp", show_default=True)
@click.option("--threshold", type=float, default=None, help="TTC threshold in seconds.")
@click.option("--episodes", type=int, default=None)
@click.option("--detail", is_flag=True, help="Write per-episode JSON lines next to --out.")
@click.pass_context
def batch(ctx, turn, density, seed, out, workers, policy, threshold, episodes, detail) -> None:
    """Run a seeded batch and write one CSV row."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed, policy=policy, threshold=threshold, episodes=episodes)
    res = bench.run_batch(spec, detail=detail, workers=workers)
    _emit([res.aggregate], out)
    path = _detail_path(out, detail)
    if path is not None:
        bench.write_jsonl(bench.batch_records(spec, res), path)


@main.command("sweep-threshold")
@common
@click.option("--episodes", type=int, default=None)
@click.option("--grid", default=None, help="Comma-separated thresholds in seconds.")
@click.pass_context
def sweep_threshold(ctx, turn, density, seed, out, workers, episodes, grid) -> None:
    """TTC policy over a grid of thresholds."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed, policy="ttc", episodes=episodes)
    res = bench.sweep_threshold(_floats(grid, THRESHOLD_GRID), spec, workers=workers)
    _emit([r.aggregate for r in res], out)


@main.command("sweep-tradeoff")
@common
@click.option("--episodes", type=int, default=None)
@click.option("--scales", default=None, help="Comma-separated action-penalty scale factors for POMCP.")
@click.option("--grid", default=None, help="Comma-separated TTC thresholds for the baseline curve.")
@click.pass_context
def sweep_tradeoff(ctx, turn, density, seed, out, workers, episodes, scales, grid) -> None:
    """POMCP over action-penalty scales and TTC over thresholds."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed, episodes=episodes)
    res = bench.sweep_tradeoff(_floats(scales, TRADEOFF_SCALES), _floats(grid, THRESHOLD_GRID), spec, workers)
    _emit([r.aggregate for r in res], out)


@main.command("sweep-density")
@common
@click.option("--episodes", type=int, default=None)
@click.option("--grid", default=None, help="Comma-separated densities.")
@click.option("--threshold", type=float, default=None, help="TTC threshold in seconds.")
@click.pass_context
def sweep_density(ctx, turn, density, seed, out, workers, episodes, grid, threshold) -> None:
    """POMCP and TTC over a grid of traffic densities."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed, threshold=threshold, episodes=episodes)
    try:
        res = bench.sweep_density(_floats(grid, DENSITY_GRID), spec, workers=workers)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    _emit([r.aggregate for r in res], out)


@main.command("probe-prediction")
@common
@click.option("--horizon", type=int, default=10, show_default=True)
@click.option("--episodes", type=int, default=200, show_default=True, help="Number of probe trials.")
@click.pass_context
def probe_prediction(ctx, turn, density, seed, out, workers, horizon, episodes) -> None:
    """Mean position error of the planner's motion model per prediction horizon."""
    spec = _spec(ctx, turn=turn, density=density, seed=seed)
    try:
        errs = bench.prediction_error_probe(horizon, episodes, spec)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    lines = ["horizon,seconds,mean_error"]
    dt = spec.config.sim.dt
    lines += [f"{h},{h * dt:.2f},{e:.6f}" for h, e in enumerate(errs)]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    sys.exit(main())

"""``diag``: gradient checks, Lipschitz bounds, descent monitoring and sweeps."""

from __future__ import annotations

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, List, Optional, Tuple, TypeVar

import click
import numpy as np

from ..config import DEFAULT_LAMBDA, GRADIENT_MODES, MIN_IMAGES, TRACE_COLUMNS
from ..file_formats import write_csv, write_json
from ..services.bounds import caps_from_depth, empirical_lipschitz, global_constants
from ..services.core import SCENE_KINDS, Grid, ring_lights
from ..services.diagnostics import (
    COMPARISON_COLUMNS,
    ComparisonRow,
    classic_prior,
    gradient_check,
    image_sweep_points,
    noise_sweep_points,
    random_instance,
    run_sweep,
    synthesize,
)
from ..services.energy import build_context
from ..services.ipiano import ipiano_inner
from .common import (
    existing_file,
    handle_errors,
    load_config,
    parse_albedo,
    parse_float_list,
    parse_int_list,
    parse_size,
    threads_from,
)

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

out_option = click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path))


@click.group("diag")
def group() -> None:
    """Diagnostics for gradients, bounds and convergence."""


@group.command("gradcheck")
@click.option("--size", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--num-lights", type=click.IntRange(min=MIN_IMAGES), default=4, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--step", type=float, default=1e-6, show_default=True, help="Finite-difference step h.")
@out_option
@handle_errors
def gradcheck(size: int, num_lights: int, noise: float, seed: int, step: float, out_file: Optional[Path]) -> None:
    """Compare the exact gradient with finite differences and the dense oracle."""
    ctx, z = random_instance(size=size, m=num_lights, seed=seed, noise=noise)
    check = gradient_check(ctx, z, h=step)
    report = check.to_mapping()
    click.echo(f"fd_max_rel_error: {check.fd_error:.3e}")
    if check.oracle_error is None:
        click.echo("oracle_max_rel_error: skipped (grid too large)")
    else:
        click.echo(f"oracle_max_rel_error: {check.oracle_error:.3e}")
    click.echo(f"approx_gap_rel_error: {check.gap_error:.3e}")
    click.echo(f"q_dot_gradf: {check.descent:.6e}")
    if out_file is not None:
        write_json(out_file, report)


@group.command("bounds")
@click.option("--scene", "kind", type=click.Choice(SCENE_KINDS), default="gaussian-bump", show_default=True)
@click.option("--size", type=click.IntRange(min=2), default=16, show_default=True)
@click.option("--num-lights", type=click.IntRange(min=MIN_IMAGES), default=4, show_default=True)
@click.option("--albedo", "albedo_spec", default="0.8", show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.01, show_default=True)
@click.option("--samples", type=click.IntRange(min=2), default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
@click.pass_context
@handle_errors
def bounds(
    ctx: click.Context,
    kind: str,
    size: int,
    num_lights: int,
    albedo_spec: str,
    noise: float,
    samples: int,
    seed: int,
    out_file: Optional[Path],
) -> None:
    """Print the analytic Lipschitz constants next to sampled difference quotients."""
    grid = Grid(size, size)
    case = synthesize(kind, grid, ring_lights(num_lights), noise, seed, parse_albedo(albedo_spec))
    caps = caps_from_depth(case.depth, case.operator)
    report = global_constants(case.images, case.lights, case.operator, case.albedo, caps)
    energy = build_context(
        case.images, case.lights, case.albedo, case.depth, DEFAULT_LAMBDA, operator=case.operator
    )
    threads = threads_from(ctx)
    summary = report.summary()
    summary["empirical_grad_f"] = empirical_lipschitz(
        energy, samples, caps, seed, threads=threads, gradient_mode="exact"
    )
    summary["empirical_q"] = empirical_lipschitz(
        energy, samples, caps, seed, threads=threads, gradient_mode="approx"
    )
    summary["cap"] = float(np.max(caps.Lz))
    for key in ("cap", "L_A", "L_f", "L_p", "L_q", "L_grad_f", "empirical_q", "empirical_grad_f"):
        click.echo(f"{key}: {summary[key]:.6e}")
    if out_file is not None:
        write_json(out_file, summary)


@group.command("descent")
@click.option("--scene", "kind", type=click.Choice(SCENE_KINDS), default="sphere-cap", show_default=True)
@click.option("--size", type=click.IntRange(min=2), default=16, show_default=True)
@click.option("--num-lights", type=click.IntRange(min=MIN_IMAGES), default=8, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--start", type=click.Choice(("truth", "classic")), default="classic", show_default=True)
@click.option("--gradient", "gradient_mode", type=click.Choice(GRADIENT_MODES), default=None)
@click.option("--config", "config_file", type=existing_file)
@out_option
@handle_errors
def descent(
    kind: str,
    size: int,
    num_lights: int,
    noise: float,
    seed: int,
    start: str,
    gradient_mode: Optional[str],
    config_file: Optional[Path],
    out_file: Optional[Path],
) -> None:
    """Run one inner loop and print the <q, grad f> series."""
    config = load_config(config_file, gradient_mode=gradient_mode, monitor_descent=True)
    grid = Grid(size, size)
    case = synthesize(kind, grid, ring_lights(num_lights), noise, seed)
    if start == "truth":
        depth, albedo = case.depth, case.albedo
    else:
        prior = classic_prior(case.images, case.lights, case.operator)
        depth, albedo = prior.depth, prior.pointwise.albedo
    energy = build_context(
        case.images, case.lights, albedo, depth, config.lam, operator=case.operator
    )
    result = ipiano_inner(energy, depth, config)
    negative = 0
    for record in result.records:
        value = record.q_dot_gradf if record.q_dot_gradf is not None else float("nan")
        negative += int(value < 0)
        click.echo(f"{record.ell}\t{value:.6e}\t{record.f_plus_g:.12e}")
    if negative:
        logger.warning("%d iterations with <q, grad f> < 0", negative)
    if out_file is not None:
        write_csv(out_file, TRACE_COLUMNS, [asdict(record) for record in result.records])


def _sweep_options(func: F) -> F:
    options = (
        click.option("--scene", "kind", type=click.Choice(SCENE_KINDS), default="sphere-cap", show_default=True),
        click.option("--size", default="32", show_default=True),
        click.option("--seeds", default="0", show_default=True, help='"0,1,2" or "0-4".'),
        click.option("--config", "config_file", type=existing_file),
        click.option("--gradient", "gradient_mode", type=click.Choice(GRADIENT_MODES), default=None),
        click.option("--outer-max-iters", type=click.IntRange(min=1), default=None),
        click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), required=True),
    )
    for option in reversed(options):
        func = option(func)
    return func


def _write_sweep(out_file: Path, rows: List[ComparisonRow]) -> None:
    write_csv(out_file, COMPARISON_COLUMNS, [asdict(row) for row in rows])
    for row in rows:
        click.echo(
            f"{row.scene} m={row.m} noise={row.noise:g} seed={row.seed}: "
            f"MAE {row.mae_classic:.4f} -> {row.mae_refined:.4f}, "
            f"f {row.f_classic:.4e} -> {row.f_refined:.4e}"
        )
    logger.info("Wrote %d sweep rows to %s", len(rows), out_file)


@group.command("sweep-noise")
@_sweep_options
@click.option("--levels", default="0.005,0.01,0.02", show_default=True)
@click.option("--num-lights", type=click.IntRange(min=MIN_IMAGES), default=8, show_default=True)
@click.pass_context
@handle_errors
def sweep_noise(
    ctx: click.Context,
    kind: str,
    size: str,
    seeds: str,
    config_file: Optional[Path],
    gradient_mode: Optional[str],
    outer_max_iters: Optional[int],
    out_file: Path,
    levels: str,
    num_lights: int,
) -> None:
    """Classic versus refined reconstruction over increasing noise levels."""
    config = load_config(config_file, gradient_mode=gradient_mode, outer_max_iters=outer_max_iters)
    points = noise_sweep_points(
        kind, parse_size(size), num_lights, parse_float_list(levels), parse_int_list(seeds)
    )
    _write_sweep(out_file, run_sweep(points, config, threads=threads_from(ctx)))


@group.command("sweep-images")
@_sweep_options
@click.option("--counts", default="3,5,10,20", show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.1, show_default=True)
@click.pass_context
@handle_errors
def sweep_images(
    ctx: click.Context,
    kind: str,
    size: str,
    seeds: str,
    config_file: Optional[Path],
    gradient_mode: Optional[str],
    outer_max_iters: Optional[int],
    out_file: Path,
    counts: str,
    noise: float,
) -> None:
    """Classic versus refined reconstruction over the number of images."""
    config = load_config(config_file, gradient_mode=gradient_mode, outer_max_iters=outer_max_iters)
    point_counts: Tuple[int, ...] = tuple(parse_int_list(counts))
    if any(count < MIN_IMAGES for count in point_counts):
        raise click.BadParameter(f"every count must be at least {MIN_IMAGES}", param_hint="--counts")
    points = image_sweep_points(kind, parse_size(size), point_counts, noise, parse_int_list(seeds))
    _write_sweep(out_file, run_sweep(points, config, threads=threads_from(ctx)))

"""``refine``: alternating iPiano depth and albedo refinement."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click

from ..config import GRADIENT_MODES, OUTER_TRACE_COLUMNS, TRACE_COLUMNS
from ..file_formats import write_csv
from ..services.core import (
    build_gradient_operator,
    normals_from_depth,
    reprojection_error_map,
)
from ..services.ipiano import alternating_solve
from ..services.manifest import RunManifest
from .common import (
    existing_dir,
    existing_file,
    handle_errors,
    load_config,
    load_inputs,
    output_dir,
    prepare_out_dir,
    read_albedo,
    read_depth,
    read_mask,
    read_normals,
    write_map,
)

logger = logging.getLogger(__name__)


@click.command("refine")
@click.option("--images", "images_dir", type=existing_dir, required=True)
@click.option("--lights", "lights_file", type=existing_file, required=True)
@click.option("--init-depth", type=existing_file, required=True, help="Prior depth z0 (PFM).")
@click.option("--init-albedo", type=existing_file, required=True, help="Initial albedo (PFM).")
@click.option("--config", "config_file", type=existing_file, help="Solver configuration JSON.")
@click.option("--gradient", "gradient_mode", type=click.Choice(GRADIENT_MODES), default=None,
              help="Override the configured gradient mode.")
@click.option("--mask", "mask_file", type=existing_file, help="PGM mask; zero excludes a pixel.")
@click.option("--gt-normals", type=existing_file, help="Reference normals for a per-iteration MAE.")
@click.option("--seed", type=int, default=None, help="Recorded in the manifest; the solver is deterministic.")
@click.option("--out-dir", type=output_dir, required=True)
@handle_errors
def command(
    images_dir: Path,
    lights_file: Path,
    init_depth: Path,
    init_albedo: Path,
    config_file: Optional[Path],
    gradient_mode: Optional[str],
    mask_file: Optional[Path],
    gt_normals: Optional[Path],
    seed: Optional[int],
    out_dir: Path,
) -> None:
    """Refine a depth prior by minimising the reprojection energy."""
    config = load_config(config_file, gradient_mode=gradient_mode)
    manifest = RunManifest(command="refine", config=config.to_mapping(), seed=seed)
    for name, path in (
        ("images", images_dir),
        ("lights", lights_file),
        ("init_depth", init_depth),
        ("init_albedo", init_albedo),
        ("config", config_file),
        ("mask", mask_file),
        ("gt_normals", gt_normals),
    ):
        manifest.add_input(name, path)

    with manifest.phase("read"):
        images, lights = load_inputs(images_dir, lights_file)
        grid = images.grid
        z0 = read_depth(init_depth, grid)
        rho0 = read_albedo(init_albedo, grid)
        mask = read_mask(mask_file, grid)
        reference = read_normals(gt_normals, grid) if gt_normals else None

    logger.info(
        "refine %dx%d m=%d gradient=%s beta=%s",
        grid.width,
        grid.height,
        images.m,
        config.gradient_mode,
        config.beta_mode,
    )
    operator = build_gradient_operator(grid)
    with manifest.phase("solve"):
        solved = alternating_solve(
            images,
            lights,
            z0,
            rho0,
            config,
            mask=mask,
            reference_normals=reference,
            operator=operator,
        )

    prepare_out_dir(out_dir)
    with manifest.phase("write"):
        write_map(manifest, out_dir / "depth_refined.pfm", grid, solved.depth.z)
        write_map(manifest, out_dir / "albedo_refined.pfm", grid, solved.albedo.rho)
        normals = normals_from_depth(solved.depth, operator)
        write_map(manifest, out_dir / "normals_refined.pfm", grid, normals.normals)
        errors = reprojection_error_map(
            solved.depth, solved.albedo, images, lights, operator, mask=mask
        )
        write_map(manifest, out_dir / "reprojection_error.pfm", grid, errors)
        trace_path = out_dir / "trace.csv"
        write_csv(trace_path, TRACE_COLUMNS, solved.trace.inner_rows())
        manifest.add_output(trace_path)
        outer_path = out_dir / "outer.csv"
        write_csv(outer_path, OUTER_TRACE_COLUMNS, solved.trace.outer_rows())
        manifest.add_output(outer_path)

    manifest.write(out_dir / "manifest.json")
    click.echo(
        f"f+g {solved.trace.initial_objective:.6g} -> {solved.trace.final_objective:.6g} "
        f"after {len(solved.trace.outer)} outer iterations"
    )

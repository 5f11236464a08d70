"""``eval``: angular error against reference normals and optional reprojection error."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np

from ..file_formats import write_json
from ..services.core import (
    build_gradient_operator,
    mean_angular_error,
    normals_from_depth,
    reprojection_error_map,
)
from .common import (
    existing_dir,
    existing_file,
    handle_errors,
    load_inputs,
    read_albedo,
    read_depth,
    read_mask,
    read_normals,
)

logger = logging.getLogger(__name__)


@click.command("eval")
@click.option("--normals", "normals_file", type=existing_file, help="Estimated normals (PFM).")
@click.option("--depth", "depth_file", type=existing_file, help="Estimated depth (PFM).")
@click.option("--gt-normals", type=existing_file, required=True)
@click.option("--images", "images_dir", type=existing_dir, help="Images for the reprojection error.")
@click.option("--lights", "lights_file", type=existing_file)
@click.option("--albedo", "albedo_file", type=existing_file)
@click.option("--mask", "mask_file", type=existing_file)
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path))
@handle_errors
def command(
    normals_file: Optional[Path],
    depth_file: Optional[Path],
    gt_normals: Path,
    images_dir: Optional[Path],
    lights_file: Optional[Path],
    albedo_file: Optional[Path],
    mask_file: Optional[Path],
    out_file: Optional[Path],
) -> None:
    """Report the mean angular error (degrees) of a reconstruction."""
    if (normals_file is None) == (depth_file is None):
        raise click.UsageError("give exactly one of --normals or --depth")
    wants_reprojection = any(item is not None for item in (images_dir, lights_file, albedo_file))
    if wants_reprojection and (
        depth_file is None or images_dir is None or lights_file is None or albedo_file is None
    ):
        raise click.UsageError("the reprojection error needs --depth, --images, --lights and --albedo")

    truth = read_normals(gt_normals)
    grid = truth.grid
    mask = read_mask(mask_file, grid)
    operator = build_gradient_operator(grid)
    report: Dict[str, Any] = {"pixels": grid.n}

    if depth_file is not None:
        depth = read_depth(depth_file, grid)
        estimate = normals_from_depth(depth, operator)
    else:
        estimate = read_normals(normals_file, grid)  # type: ignore[arg-type]
    report["mae_degrees"] = mean_angular_error(estimate, truth, mask=mask)

    if wants_reprojection:
        images, lights = load_inputs(images_dir, lights_file)  # type: ignore[arg-type]
        grid.require_same(images.grid, "images and reference normals")
        albedo = read_albedo(albedo_file, grid)  # type: ignore[arg-type]
        errors = reprojection_error_map(depth, albedo, images, lights, operator, mask=mask)
        kept = grid.n if mask is None else int(np.count_nonzero(mask))
        report["reprojection_error_mean"] = float(np.sum(errors) / kept)
        report["reprojection_error_total"] = float(np.sum(errors))

    logger.info("eval MAE %.6f degrees over %d pixels", report["mae_degrees"], grid.n)
    for key in sorted(report):
        click.echo(f"{key}: {report[key]}")
    if out_file is not None:
        write_json(out_file, report)

"""``classic``: pointwise photometric stereo followed by least-squares integration."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from ..services.core import build_gradient_operator
from ..services.diagnostics import classic_prior
from ..services.manifest import RunManifest
from .common import (
    existing_dir,
    existing_file,
    handle_errors,
    load_inputs,
    output_dir,
    prepare_out_dir,
    write_map,
)

logger = logging.getLogger(__name__)


@click.command("classic")
@click.option("--images", "images_dir", type=existing_dir, required=True)
@click.option("--lights", "lights_file", type=existing_file, required=True)
@click.option("--out-dir", type=output_dir, required=True)
@handle_errors
def command(images_dir: Path, lights_file: Path, out_dir: Path) -> None:
    """Estimate normals and albedo per pixel and integrate them into a depth prior."""
    manifest = RunManifest(command="classic")
    manifest.add_input("images", images_dir)
    manifest.add_input("lights", lights_file)

    with manifest.phase("read"):
        images, lights = load_inputs(images_dir, lights_file)
    grid = images.grid
    logger.info("classic on %dx%d with %d images", grid.width, grid.height, images.m)

    with manifest.phase("solve"):
        operator = build_gradient_operator(grid)
        prior = classic_prior(images, lights, operator)

    prepare_out_dir(out_dir)
    with manifest.phase("write"):
        write_map(manifest, out_dir / "depth_classic.pfm", grid, prior.depth.z)
        write_map(manifest, out_dir / "albedo_classic.pfm", grid, prior.pointwise.albedo.rho)
        write_map(manifest, out_dir / "normals_classic.pfm", grid, prior.pointwise.normals.normals)
        write_map(manifest, out_dir / "residual_classic.pfm", grid, prior.pointwise.residual)

    manifest.write(out_dir / "manifest.json")
    click.echo(f"wrote classic reconstruction to {out_dir}")

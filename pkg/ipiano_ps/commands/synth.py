"""``synth``: render a synthetic scene with known geometry."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple

import click
import numpy as np

from ..config import DEFAULT_LIGHT_ELEVATION_DEG, MIN_IMAGES
from ..file_formats import read_lights_csv, write_lights_csv, write_pgm
from ..services.core import SCENE_KINDS, LightMatrix, ring_lights
from ..services.diagnostics import synthesize
from ..services.manifest import RunManifest
from .common import (
    existing_file,
    handle_errors,
    output_dir,
    parse_albedo,
    parse_scene_params,
    parse_size,
    prepare_out_dir,
    write_map,
)

logger = logging.getLogger(__name__)


@click.command("synth")
@click.option("--scene", "kind", type=click.Choice(SCENE_KINDS), default="sphere-cap", show_default=True)
@click.option("--size", default="32", show_default=True, help="N or WxH pixels.")
@click.option("--lights", "lights_file", type=existing_file, help="CSV of sx,sy,sz rows.")
@click.option("--num-lights", type=click.IntRange(min=MIN_IMAGES), default=8, show_default=True,
              help="Ring of lights used when no lights file is given.")
@click.option("--elevation", type=float, default=DEFAULT_LIGHT_ELEVATION_DEG, show_default=True)
@click.option("--albedo", "albedo_spec", default="0.8", show_default=True,
              help='Constant "0.8" or two-tone "0.4,0.9".')
@click.option("--param", "params", multiple=True, help="Scene parameter key=value (radius, amplitude, sigma, offset).")
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.0, show_default=True,
              help="Noise std as a fraction of the maximum intensity.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=output_dir, required=True)
@handle_errors
def command(
    kind: str,
    size: str,
    lights_file: Optional[Path],
    num_lights: int,
    elevation: float,
    albedo_spec: str,
    params: Tuple[str, ...],
    noise: float,
    seed: int,
    out_dir: Path,
) -> None:
    """Write images, lights and ground-truth maps for a synthetic scene."""
    grid = parse_size(size)
    scene_params = parse_scene_params(params)
    scene_params.update(parse_albedo(albedo_spec))
    if lights_file is not None:
        lights = LightMatrix(read_lights_csv(lights_file))
    else:
        lights = ring_lights(num_lights, elevation)
    logger.info(
        "synth scene=%s size=%dx%d m=%d noise=%g seed=%d",
        kind,
        grid.width,
        grid.height,
        lights.m,
        noise,
        seed,
    )

    manifest = RunManifest(
        command="synth",
        config={"scene": kind, "params": scene_params, "noise": noise, "size": [grid.width, grid.height]},
        seed=seed,
    )
    manifest.add_input("lights", lights_file)
    prepare_out_dir(out_dir)
    image_dir = prepare_out_dir(out_dir / "images")

    with manifest.phase("render"):
        case = synthesize(kind, grid, lights, noise, seed, scene_params)
    clipped = int(np.count_nonzero((case.images.intensities < 0) | (case.images.intensities > 1)))
    if clipped:
        logger.warning("%d samples fall outside [0, 1] and are clipped in the PGM files", clipped)

    with manifest.phase("write"):
        digits = max(3, len(str(lights.m - 1)))
        for index, row in enumerate(case.images.intensities):
            path = image_dir / f"img_{index:0{digits}d}.pgm"
            write_pgm(path, grid.to_image(row))
            manifest.add_output(path)
        lights_path = out_dir / "lights.csv"
        write_lights_csv(lights_path, lights.S)
        manifest.add_output(lights_path)
        write_map(manifest, out_dir / "depth_gt.pfm", grid, case.depth.z)
        write_map(manifest, out_dir / "normals_gt.pfm", grid, case.normals.normals)
        write_map(manifest, out_dir / "albedo_gt.pfm", grid, case.albedo.rho)

    manifest.write(out_dir / "manifest.json")
    click.echo(f"wrote {lights.m} images to {image_dir}")

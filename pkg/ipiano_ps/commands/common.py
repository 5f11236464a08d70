"""Helpers shared by the command modules: error mapping, inputs and outputs."""

from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import click
import numpy as np

from ..errors import FileFormatError, InputError, LightingError, SolverError
from ..file_formats import (
    read_image_directory,
    read_json_object,
    read_lights_csv,
    read_pfm,
    read_pgm,
    write_pfm,
)
from ..services.core import (
    AlbedoMap,
    DepthMap,
    Grid,
    ImageStack,
    LightMatrix,
    NormalField,
)
from ..services.ipiano import SolverConfig
from ..services.manifest import RunManifest

logger = logging.getLogger(__name__)

EXIT_INPUT_ERROR = 1
EXIT_SOLVER_ERROR = 2

F = TypeVar("F", bound=Callable[..., Any])

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
existing_dir = click.Path(exists=True, file_okay=False, path_type=Path)
output_dir = click.Path(file_okay=False, path_type=Path)


def handle_errors(func: F) -> F:
    """Map library errors to exit codes: input problems 1, solver failures 2."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except SolverError as error:
            logger.error("Solver error: %s", error)
            click.echo(f"error: {error}", err=True)
            raise click.exceptions.Exit(EXIT_SOLVER_ERROR) from error
        except (InputError, OSError) as error:
            logger.error("Input error: %s", error)
            click.echo(f"error: {error}", err=True)
            raise click.exceptions.Exit(EXIT_INPUT_ERROR) from error

    return wrapper  # type: ignore[return-value]


def threads_from(ctx: click.Context) -> int:
    obj = ctx.find_root().obj or {}
    return int(obj.get("threads", 1))


def prepare_out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_inputs(images_dir: Path, lights_file: Path) -> Tuple[ImageStack, LightMatrix]:
    """Read an image directory and its lights; the row count must match the image count."""
    stack = read_image_directory(images_dir)
    grid = Grid.from_shape(stack.shape[1:])
    lights = read_lights_csv(lights_file)
    if lights.shape[0] != stack.shape[0]:
        raise LightingError(
            f"{lights_file} lists {lights.shape[0]} directions for {stack.shape[0]} images"
        )
    images = ImageStack(grid, stack.reshape(stack.shape[0], grid.n))
    return images, LightMatrix(lights)


def _read_scalar_map(path: Path, grid: Grid) -> np.ndarray:
    image = read_pfm(path)
    if image.ndim != 2:
        raise FileFormatError(f"{path}: expected a single-channel PFM")
    return grid.flatten(image)


def read_depth(path: Path, grid: Grid) -> DepthMap:
    return DepthMap(grid, _read_scalar_map(path, grid))


def read_albedo(path: Path, grid: Grid) -> AlbedoMap:
    return AlbedoMap(grid, _read_scalar_map(path, grid))


def read_normals(path: Path, grid: Optional[Grid] = None) -> NormalField:
    """Read a 3-plane PFM; rows are renormalised since PFM stores single precision."""
    image = read_pfm(path)
    if image.ndim != 3:
        raise FileFormatError(f"{path}: expected a 3-channel PFM")
    if grid is None:
        grid = Grid.from_shape(image.shape)
    normals = grid.flatten(image)
    lengths = np.linalg.norm(normals, axis=1)
    if np.any(lengths == 0):
        raise FileFormatError(f"{path}: contains zero-length normals")
    return NormalField(grid, normals / lengths[:, None])


def read_mask(path: Optional[Path], grid: Grid) -> Optional[np.ndarray]:
    """PGM mask where a zero sample excludes the pixel from the data term."""
    if path is None:
        return None
    mask = grid.flatten(read_pgm(path)) > 0
    if not np.any(mask):
        raise InputError(f"{path}: mask excludes every pixel")
    logger.info("Mask keeps %d of %d pixels", int(mask.sum()), grid.n)
    return mask.astype(float)


def load_config(path: Optional[Path], **overrides: Any) -> SolverConfig:
    config = SolverConfig.from_mapping(read_json_object(path)) if path else SolverConfig()
    return config.with_overrides(**overrides)


def write_map(manifest: RunManifest, path: Path, grid: Grid, values: np.ndarray) -> None:
    write_pfm(path, grid.to_image(values))
    manifest.add_output(path)
    logger.info("Wrote %s", path)


def parse_size(value: str) -> Grid:
    """``"32"`` or ``"WxH"``."""
    text = value.lower().strip()
    try:
        if "x" in text:
            width, height = (int(part) for part in text.split("x", 1))
        else:
            width = height = int(text)
    except ValueError as error:
        raise click.BadParameter(f"invalid size {value!r}; use N or WxH") from error
    try:
        return Grid(width, height)
    except InputError as error:
        raise click.BadParameter(str(error)) from error


def parse_float_list(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as error:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from error


def parse_int_list(value: str) -> List[int]:
    """``"0,1,2"`` or a range ``"0-4"``."""
    text = value.strip()
    try:
        if "-" in text and "," not in text:
            start, stop = (int(part) for part in text.split("-", 1))
            return list(range(start, stop + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as error:
        raise click.BadParameter(f"expected integers, got {value!r}") from error


def parse_scene_params(pairs: Tuple[str, ...]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for pair in pairs:
        key, separator, raw = pair.partition("=")
        if not separator:
            raise click.BadParameter(f"expected key=value, got {pair!r}")
        try:
            params[key.strip()] = float(raw)
        except ValueError as error:
            raise click.BadParameter(f"{key}: not a number") from error
    return params


def parse_albedo(value: str) -> Dict[str, float]:
    """``"0.8"`` for a constant albedo, ``"0.4,0.9"`` for the two-tone pattern."""
    parts = parse_float_list(value)
    if len(parts) == 1:
        return {"albedo": parts[0]}
    if len(parts) == 2:
        return {"albedo": parts[0], "albedo_secondary": parts[1]}
    raise click.BadParameter(f"albedo takes one or two values, got {value!r}")


__all__ = [
    "EXIT_INPUT_ERROR",
    "EXIT_SOLVER_ERROR",
    "existing_dir",
    "existing_file",
    "handle_errors",
    "load_config",
    "load_inputs",
    "output_dir",
    "parse_albedo",
    "parse_float_list",
    "parse_int_list",
    "parse_scene_params",
    "parse_size",
    "prepare_out_dir",
    "read_albedo",
    "read_depth",
    "read_mask",
    "read_normals",
    "threads_from",
    "write_map",
]

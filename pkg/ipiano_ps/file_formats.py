"""Readers and writers for the PGM, PFM, CSV and JSON artifacts of the toolkit."""

from __future__ import annotations

import csv
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .config import CSV_SIGNIFICANT_DIGITS, IMAGE_GLOB, PFM_SCALE, PGM_MAXVAL
from .errors import FileFormatError, GridMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HEADER_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def format_float(value: Any) -> str:
    """Round-trip decimal representation used in CSV traces."""
    if value is None:
        return ""
    number = float(value)
    if np.isnan(number):
        return "nan"
    return f"{number:.{CSV_SIGNIFICANT_DIGITS}g}"


def _read_header_tokens(payload: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens: List[bytes] = []
    position = 0
    for _ in range(count):
        match = _HEADER_TOKEN.match(payload, position)
        if match is None:
            raise FileFormatError("truncated PGM header")
        tokens.append(match.group(2))
        position = match.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, position + 1


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary (P5) PGM and map samples linearly to [0, 1]."""
    payload = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(payload, 4)
    if tokens[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as error:
        raise FileFormatError(f"{path}: malformed PGM header") from error
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise FileFormatError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = payload[offset : offset + expected]
    if len(raster) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} raster bytes, found {len(raster)}"
        )
    samples = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return samples.astype(np.float64) / float(maxval)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write a 16-bit big-endian P5 PGM; values are clipped to [0, 1] first."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FileFormatError(f"PGM images must be 2-D, got shape {image.shape}")
    height, width = image.shape
    clipped = np.clip(image, 0.0, 1.0)
    samples = np.rint(clipped * PGM_MAXVAL).astype(">u2")
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + samples.tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM file; returns ``(H, W)`` for ``Pf`` and ``(H, W, 3)`` for ``PF``.

    Rows are stored bottom-to-top in the file and returned top-to-bottom.
    """
    with open(path, "rb") as handle:
        tag = handle.readline().rstrip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise FileFormatError(f"{path}: not a PFM file")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", handle.readline())
        if dims is None:
            raise FileFormatError(f"{path}: malformed PFM header")
        width, height = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(handle.readline().strip())
        except ValueError as error:
            raise FileFormatError(f"{path}: malformed PFM scale") from error
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(handle.read(), dtype=np.dtype(endian + "f4"))
    expected = width * height * channels
    if data.size != expected:
        raise FileFormatError(f"{path}: expected {expected} floats, found {data.size}")
    shape: Tuple[int, ...] = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    """Write a little-endian PFM (scale -1.0): ``Pf`` for 2-D, ``PF`` for 3 planes."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise FileFormatError(
            f"PFM images must be H x W or H x W x 3, got shape {image.shape}"
        )
    if not np.all(np.isfinite(image)):
        raise FileFormatError("refusing to write non-finite values to PFM")
    height, width = image.shape[:2]
    raster = np.ascontiguousarray(np.flipud(image)).astype("<f4")
    header = tag + b"\n" + f"{width} {height}\n{PFM_SCALE:.1f}\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def read_lights_csv(path: PathLike) -> np.ndarray:
    """Read one ``sx,sy,sz`` row per image; blank lines and ``#`` comments are skipped."""
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            cells = [cell.strip() for cell in row]
            if not cells or not any(cells) or cells[0].startswith("#"):
                continue
            if len(cells) != 3:
                raise FileFormatError(
                    f"{path}:{line_number}: expected 3 values, got {len(cells)}"
                )
            try:
                rows.append([float(cell) for cell in cells])
            except ValueError as error:
                raise FileFormatError(
                    f"{path}:{line_number}: non-numeric light direction"
                ) from error
    if not rows:
        raise FileFormatError(f"{path}: no light directions found")
    return np.asarray(rows, dtype=np.float64)


def write_lights_csv(path: PathLike, lights: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for row in np.asarray(lights, dtype=np.float64):
            writer.writerow([format_float(value) for value in row])


def list_images(directory: PathLike) -> List[Path]:
    """Image files of a directory in lexicographic order (matches the lights rows)."""
    folder = Path(directory)
    if not folder.is_dir():
        raise FileFormatError(f"{folder}: not a directory")
    files = sorted(folder.glob(IMAGE_GLOB), key=lambda item: item.name)
    if not files:
        raise FileFormatError(f"{folder}: no {IMAGE_GLOB} images found")
    return files


def read_image_directory(directory: PathLike) -> np.ndarray:
    """Stack every image of a directory into an ``m x H x W`` array."""
    files = list_images(directory)
    images = [read_pgm(path) for path in files]
    shape = images[0].shape
    for path, image in zip(files, images):
        if image.shape != shape:
            raise GridMismatchError(
                f"{path.name} has shape {image.shape}, expected {shape}"
            )
    logger.info("Read %d images of %dx%d from %s", len(images), shape[1], shape[0], directory)
    return np.stack(images)


def _csv_cell(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format_float(value)


def write_csv(
    path: PathLike, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> None:
    """Write rows with a header; integers stay integral, floats keep 17 digits."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row.get(column)) for column in columns])


def read_json_object(path: PathLike) -> Dict[str, Any]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise FileFormatError(f"{path}: invalid JSON ({error.msg})") from error
    if not isinstance(payload, dict):
        raise FileFormatError(f"{path}: expected a JSON object")
    return payload


def write_json(path: PathLike, payload: Mapping[str, Any]) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


__all__ = [
    "format_float",
    "list_images",
    "read_image_directory",
    "read_json_object",
    "read_lights_csv",
    "read_pfm",
    "read_pgm",
    "write_csv",
    "write_json",
    "write_lights_csv",
    "write_pfm",
    "write_pgm",
]

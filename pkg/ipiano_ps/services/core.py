"""Grids, the finite-difference operator, Lambertian rendering and metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from ..config import (
    DEFAULT_LIGHT_ELEVATION_DEG,
    DEFAULT_SCENE_ALBEDO,
    MIN_IMAGES,
    NORMAL_UNIT_TOLERANCE,
    POWER_ITERATION_MAX_ITERS,
    POWER_ITERATION_TOL,
    SCENE_MAX_TILT_DEG,
)
from ..errors import GridMismatchError, InputError, LightingError, SceneError

logger = logging.getLogger(__name__)

SCENE_KINDS: Tuple[str, ...] = ("sphere-cap", "gaussian-bump", "plane")


def _frozen(values: Any, dtype: Any = float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Grid:
    """Rectangular pixel grid, pixels labelled row-major by ``j = row * width + col``."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if int(self.width) < 1 or int(self.height) < 1:
            raise InputError(
                f"grid must be at least 1x1, got {self.width}x{self.height}"
            )

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def to_image(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-pixel array (n, ...) into image layout (height, width, ...)."""
        values = np.asarray(values)
        if values.shape[0] != self.n:
            raise GridMismatchError(
                f"expected {self.n} pixels, got {values.shape[0]}"
            )
        return values.reshape(self.shape + values.shape[1:])

    def flatten(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.shape[:2] != self.shape:
            raise GridMismatchError(
                f"expected image of shape {self.shape}, got {image.shape[:2]}"
            )
        return image.reshape((self.n,) + image.shape[2:])

    def require_same(self, other: "Grid", what: str = "arrays") -> None:
        if self != other:
            raise GridMismatchError(
                f"{what} live on different grids: "
                f"{self.width}x{self.height} vs {other.width}x{other.height}"
            )

    @classmethod
    def from_shape(cls, shape: Tuple[int, ...]) -> "Grid":
        return cls(width=int(shape[1]), height=int(shape[0]))


@dataclass(frozen=True, eq=False)
class ImageStack:
    """``m`` grey-level images over a grid, stored as an ``m x n`` array."""

    grid: Grid
    intensities: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.intensities)
        if values.ndim != 2 or values.shape[1] != self.grid.n:
            raise GridMismatchError(
                f"intensities must be m x {self.grid.n}, got {values.shape}"
            )
        if values.shape[0] < MIN_IMAGES:
            raise InputError(
                f"at least {MIN_IMAGES} images are required, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("intensities must be finite")
        object.__setattr__(self, "intensities", values)

    @property
    def m(self) -> int:
        return int(self.intensities.shape[0])

    def pixel_vectors(self) -> np.ndarray:
        return self.intensities.T


@dataclass(frozen=True, eq=False)
class LightMatrix:
    """Stacked lighting vectors ``S`` (m x 3), split as ``[S_l | S_r]``."""

    S: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.S)
        if values.ndim != 2 or values.shape[1] != 3:
            raise LightingError(f"light matrix must be m x 3, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise LightingError("light matrix must be finite")
        if values.shape[0] < MIN_IMAGES or np.linalg.matrix_rank(values) < 3:
            raise LightingError(
                "light directions must be non-coplanar (rank(S) = 3 required)"
            )
        object.__setattr__(self, "S", values)

    @property
    def m(self) -> int:
        return int(self.S.shape[0])

    @property
    def left(self) -> np.ndarray:
        """``S_l``: the m x 2 block acting on the depth gradient."""
        return self.S[:, :2]

    @property
    def right(self) -> np.ndarray:
        return self.S[:, 2]


@dataclass(frozen=True, eq=False)
class DepthMap:
    grid: Grid
    z: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.z).reshape(-1)
        if values.shape[0] != self.grid.n:
            raise GridMismatchError(
                f"depth must have {self.grid.n} entries, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("depth must be finite")
        object.__setattr__(self, "z", values)


@dataclass(frozen=True, eq=False)
class AlbedoMap:
    """Per-pixel albedo; values outside [0, 1] are allowed and only reported."""

    grid: Grid
    rho: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.rho).reshape(-1)
        if values.shape[0] != self.grid.n:
            raise GridMismatchError(
                f"albedo must have {self.grid.n} entries, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("albedo must be finite")
        object.__setattr__(self, "rho", values)

    def out_of_range(self) -> int:
        return int(np.count_nonzero((self.rho < 0.0) | (self.rho > 1.0)))


@dataclass(frozen=True, eq=False)
class NormalField:
    grid: Grid
    normals: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.normals)
        if values.shape != (self.grid.n, 3):
            raise GridMismatchError(
                f"normals must be {self.grid.n} x 3, got {values.shape}"
            )
        lengths = np.linalg.norm(values, axis=1)
        if not np.all(np.abs(lengths - 1.0) <= NORMAL_UNIT_TOLERANCE):
            raise InputError("normals must have unit length")
        object.__setattr__(self, "normals", values)

    def facing_viewer(self) -> bool:
        return bool(np.all(self.normals[:, 2] > 0.0))


@dataclass(frozen=True, eq=False)
class GradientOperator:
    """Forward differences with Neumann boundary rows on a grid.

    ``matrix`` is the interleaved ``2n x n`` operator ``M`` whose rows ``2j`` and
    ``2j + 1`` form the block ``M_j`` (horizontal then vertical derivative).
    """

    grid: Grid
    du: sp.csr_matrix = field(repr=False)
    dv: sp.csr_matrix = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Per-pixel gradients ``M_j z`` as an ``n x 2`` array."""
        z = np.asarray(z, dtype=float)
        return np.column_stack((self.du @ z, self.dv @ z))

    def adjoint(self, per_pixel: np.ndarray) -> np.ndarray:
        """``M^T`` applied to stacked per-pixel 2-vectors (``n x 2``)."""
        return self.du.T @ per_pixel[:, 0] + self.dv.T @ per_pixel[:, 1]

    @cached_property
    def stencil(self) -> Tuple[np.ndarray, np.ndarray]:
        """Column support and local values of every ``M_j``.

        Returns ``(columns, blocks)`` with ``columns`` of shape ``(n, 3)`` holding
        pixel ``j``, its right and its lower neighbour (clipped at the border), and
        ``blocks`` of shape ``(n, 2, 3)`` such that ``M_j z = blocks[j] @ z[columns[j]]``.
        """
        width, height = self.grid.width, self.grid.height
        index = np.arange(self.grid.n)
        col = index % width
        row = index // width
        has_right = col < width - 1
        has_down = row < height - 1
        columns = np.column_stack(
            (
                index,
                np.where(has_right, index + 1, index),
                np.where(has_down, index + width, index),
            )
        )
        blocks = np.zeros((self.grid.n, 2, 3))
        blocks[has_right, 0, 0] = -1.0
        blocks[has_right, 0, 1] = 1.0
        blocks[has_down, 1, 0] = -1.0
        blocks[has_down, 1, 2] = 1.0
        return columns, blocks

    @cached_property
    def block_norms(self) -> np.ndarray:
        _, blocks = self.stencil
        return np.linalg.norm(blocks, ord=2, axis=(1, 2))

    @cached_property
    def norm(self) -> float:
        """``||M||_2`` by power iteration on ``M^T M``."""
        return power_iteration_norm(self.matrix)


def power_iteration_norm(
    operator: sp.spmatrix,
    tol: float = POWER_ITERATION_TOL,
    max_iters: int = POWER_ITERATION_MAX_ITERS,
) -> float:
    columns = operator.shape[1]
    if operator.nnz == 0:
        return 0.0
    vector = np.random.default_rng(0).standard_normal(columns)
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(max_iters):
        image = operator.T @ (operator @ vector)
        magnitude = float(np.linalg.norm(image))
        if magnitude == 0.0:
            return 0.0
        vector = image / magnitude
        previous, estimate = estimate, np.sqrt(magnitude)
        if abs(estimate - previous) <= tol * estimate:
            break
    return float(estimate)


def _forward_difference(size: int) -> sp.csr_matrix:
    diagonals = np.vstack((-np.ones(size), np.ones(size)))
    matrix = sp.spdiags(diagonals, [0, 1], size, size, format="lil")
    matrix[size - 1, :] = 0.0
    return matrix.tocsr()


def build_gradient_operator(grid: Grid) -> GradientOperator:
    """Assemble forward differences with unit spacing and zero far-boundary rows."""
    du = sp.kron(sp.identity(grid.height), _forward_difference(grid.width), "csr")
    dv = sp.kron(_forward_difference(grid.height), sp.identity(grid.width), "csr")
    du.eliminate_zeros()
    dv.eliminate_zeros()
    order = np.empty(2 * grid.n, dtype=int)
    order[0::2] = np.arange(grid.n)
    order[1::2] = np.arange(grid.n) + grid.n
    matrix = sp.vstack((du, dv), format="csr")[order]
    return GradientOperator(grid=grid, du=du.tocsr(), dv=dv.tocsr(), matrix=matrix)


def _unit_normals(gradients: np.ndarray) -> np.ndarray:
    denominator = np.sqrt(1.0 + np.sum(gradients**2, axis=1))
    stacked = np.column_stack((-gradients, np.ones(gradients.shape[0])))
    return stacked / denominator[:, None]


def normals_from_depth(depth: DepthMap, operator: GradientOperator) -> NormalField:
    depth.grid.require_same(operator.grid, "depth and operator")
    return NormalField(depth.grid, _unit_normals(operator.apply(depth.z)))


def render_lambertian(
    depth: DepthMap,
    albedo: AlbedoMap,
    lights: LightMatrix,
    operator: GradientOperator,
    clamp: bool = False,
) -> ImageStack:
    """Render ``I^i_j = rho_j s^i . n_j(z)``; negatives are clipped only with ``clamp``."""
    depth.grid.require_same(albedo.grid, "depth and albedo")
    depth.grid.require_same(operator.grid, "depth and operator")
    normals = _unit_normals(operator.apply(depth.z))
    intensities = (lights.S @ normals.T) * albedo.rho[None, :]
    if clamp:
        intensities = np.maximum(intensities, 0.0)
    return ImageStack(depth.grid, intensities)


def add_gaussian_noise(images: ImageStack, sigma: float, seed: int) -> ImageStack:
    """Add zero-mean noise with std ``sigma * max(I)``; the result is not clipped."""
    if not np.isfinite(sigma) or sigma < 0:
        raise InputError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return ImageStack(images.grid, images.intensities)
    scale = float(sigma) * float(np.max(images.intensities))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, scale, size=images.intensities.shape)
    return ImageStack(images.grid, images.intensities + noise)


def mean_angular_error(
    estimate: NormalField, truth: NormalField, mask: Optional[np.ndarray] = None
) -> float:
    """Mean angle between two normal fields, in degrees.

    Uses ``atan2(|a x b|, a . b)``, which equals ``arccos(clamp(a . b))`` for unit
    vectors but keeps full precision for nearly parallel normals.
    """
    estimate.grid.require_same(truth.grid, "normal fields")
    cosines = np.clip(np.sum(estimate.normals * truth.normals, axis=1), -1.0, 1.0)
    sines = np.linalg.norm(np.cross(estimate.normals, truth.normals), axis=1)
    angles = np.degrees(np.arctan2(sines, cosines))
    if mask is not None:
        selected = np.asarray(mask, dtype=bool).reshape(-1)
        if selected.shape[0] != estimate.grid.n:
            raise GridMismatchError("mask does not match the normal field grid")
        if not np.any(selected):
            raise InputError("mask excludes every pixel")
        angles = angles[selected]
    return float(np.mean(angles))


def reprojection_error_map(
    depth: DepthMap,
    albedo: AlbedoMap,
    images: ImageStack,
    lights: LightMatrix,
    operator: GradientOperator,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-pixel ``(1/2m) ||I_j - R_j(z, rho)||^2``; sums to the data term ``f``."""
    images.grid.require_same(depth.grid, "images and depth")
    if lights.m != images.m:
        raise LightingError(
            f"{lights.m} light directions for {images.m} images"
        )
    rendered = render_lambertian(depth, albedo, lights, operator)
    residual = images.intensities - rendered.intensities
    errors = np.sum(residual**2, axis=0) / (2.0 * images.m)
    if mask is not None:
        errors = errors * np.asarray(mask, dtype=float).reshape(-1)
    return errors


def ring_lights(
    m: int, elevation_deg: float = DEFAULT_LIGHT_ELEVATION_DEG
) -> LightMatrix:
    if m < MIN_IMAGES:
        raise LightingError(f"at least {MIN_IMAGES} lights are required, got {m}")
    if not 0.0 < elevation_deg < 90.0:
        raise LightingError("light elevation must lie strictly between 0 and 90 degrees")
    azimuth = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    elevation = np.deg2rad(elevation_deg)
    directions = np.column_stack(
        (
            np.cos(azimuth) * np.cos(elevation),
            np.sin(azimuth) * np.cos(elevation),
            np.full(m, np.sin(elevation)),
        )
    )
    return LightMatrix(directions)


_SCENE_PARAMS = {"radius", "amplitude", "sigma", "offset", "albedo", "albedo_secondary"}


def _centered_coordinates(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.indices(grid.shape, dtype=float)
    u = (cols - (grid.width - 1) / 2.0).reshape(-1)
    v = (rows - (grid.height - 1) / 2.0).reshape(-1)
    return u, v


def _scene_param(params: Mapping[str, Any], key: str, default: float) -> float:
    raw = params.get(key)
    if raw is None:
        return float(default)
    try:
        value = float(raw)
    except (TypeError, ValueError) as error:
        raise SceneError(f"scene parameter {key!r} must be a number") from error
    if not np.isfinite(value):
        raise SceneError(f"scene parameter {key!r} must be finite")
    return value


def sphere_cap_radius_default(grid: Grid) -> float:
    """Radius whose rim, one pixel beyond the corners, tilts ``SCENE_MAX_TILT_DEG``."""
    reach = np.hypot((grid.width + 1) / 2.0, (grid.height + 1) / 2.0)
    return float(reach / np.sin(np.deg2rad(SCENE_MAX_TILT_DEG)))


def gaussian_amplitude_default(sigma: float) -> float:
    """Amplitude whose steepest slope, at distance ``sigma``, tilts ``SCENE_MAX_TILT_DEG``."""
    return float(sigma * np.tan(np.deg2rad(SCENE_MAX_TILT_DEG)) * np.exp(0.5))


def make_scene(
    kind: str, grid: Grid, params: Optional[Mapping[str, Any]] = None
) -> Tuple[DepthMap, AlbedoMap]:
    """Build a smooth synthetic depth map and its albedo.

    ``sphere-cap`` uses ``radius`` (must exceed the centre-to-corner distance so the
    slope stays bounded), ``gaussian-bump`` uses ``amplitude`` and ``sigma`` and
    ``plane`` uses ``offset``. ``albedo`` sets a constant albedo; adding
    ``albedo_secondary`` gives a two-tone pattern (left half / right half).
    """
    params = dict(params or {})
    unknown = sorted(set(params) - _SCENE_PARAMS)
    if unknown:
        raise SceneError(f"unknown scene parameters: {', '.join(unknown)}")
    u, v = _centered_coordinates(grid)
    squared = u**2 + v**2

    if kind == "sphere-cap":
        radius = _scene_param(params, "radius", sphere_cap_radius_default(grid))
        reach = float(np.max(np.sqrt((np.abs(u) + 1.0) ** 2 + (np.abs(v) + 1.0) ** 2)))
        if radius <= reach:
            raise SceneError(
                f"sphere radius {radius} must exceed {reach:.3f} for this grid"
            )
        z = np.sqrt(radius**2 - squared)
    elif kind == "gaussian-bump":
        sigma = _scene_param(params, "sigma", max(min(grid.width, grid.height) / 4.0, 1.0))
        if sigma <= 0:
            raise SceneError("gaussian sigma must be positive")
        amplitude = _scene_param(params, "amplitude", gaussian_amplitude_default(sigma))
        z = amplitude * np.exp(-squared / (2.0 * sigma**2))
    elif kind == "plane":
        z = np.full(grid.n, _scene_param(params, "offset", 0.0))
    else:
        raise SceneError(
            f"unknown scene kind {kind!r}; expected one of {', '.join(SCENE_KINDS)}"
        )

    primary = _scene_param(params, "albedo", DEFAULT_SCENE_ALBEDO)
    rho = np.full(grid.n, primary)
    if params.get("albedo_secondary") is not None:
        secondary = _scene_param(params, "albedo_secondary", primary)
        rho[u > 0] = secondary
    if np.any(rho < 0):
        raise SceneError("albedo values must be non-negative")
    logger.debug("Built %s scene on %dx%d grid", kind, grid.width, grid.height)
    return DepthMap(grid, z), AlbedoMap(grid, rho)


__all__ = [
    "AlbedoMap",
    "DepthMap",
    "GradientOperator",
    "Grid",
    "ImageStack",
    "LightMatrix",
    "NormalField",
    "SCENE_KINDS",
    "add_gaussian_noise",
    "build_gradient_operator",
    "gaussian_amplitude_default",
    "make_scene",
    "mean_angular_error",
    "normals_from_depth",
    "power_iteration_norm",
    "render_lambertian",
    "reprojection_error_map",
    "ring_lights",
    "sphere_cap_radius_default",
]

"""Synthetic cases, gradient checks and classic-versus-refined comparisons."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config import DEFAULT_LAMBDA, DENSE_ORACLE_MAX_PIXELS
from .classic import PointwisePSResult, estimate_normals_albedo, integrate_normals
from .core import (
    AlbedoMap,
    DepthMap,
    GradientOperator,
    Grid,
    ImageStack,
    LightMatrix,
    NormalField,
    add_gaussian_noise,
    build_gradient_operator,
    make_scene,
    mean_angular_error,
    normals_from_depth,
    render_lambertian,
    ring_lights,
)
from .energy import (
    EnergyContext,
    build_context,
    dense_oracle_grad,
    descent_diagnostic,
    eval_f,
    grad_f_approx,
    grad_f_exact,
    p_transpose_residual,
)
from .ipiano import SolverConfig, alternating_solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SyntheticCase:
    grid: Grid
    operator: GradientOperator
    lights: LightMatrix
    depth: DepthMap
    albedo: AlbedoMap
    clean: ImageStack
    images: ImageStack

    @property
    def normals(self) -> NormalField:
        return normals_from_depth(self.depth, self.operator)


def synthesize(
    kind: str,
    grid: Grid,
    lights: LightMatrix,
    noise: float = 0.0,
    seed: int = 0,
    params: Optional[Mapping[str, Any]] = None,
) -> SyntheticCase:
    operator = build_gradient_operator(grid)
    depth, albedo = make_scene(kind, grid, params)
    clean = render_lambertian(depth, albedo, lights, operator)
    images = add_gaussian_noise(clean, noise, seed)
    return SyntheticCase(grid, operator, lights, depth, albedo, clean, images)


def random_lights(m: int, rng: np.random.Generator) -> LightMatrix:
    """Random unit directions in the upper hemisphere, at least 0.5 rad above the horizon."""
    directions = rng.standard_normal((m, 3))
    directions[:, 2] = np.abs(directions[:, 2]) + 0.5 * np.linalg.norm(directions[:, :2], axis=1)
    return LightMatrix(directions / np.linalg.norm(directions, axis=1, keepdims=True))


def random_instance(
    size: int = 8,
    m: int = 4,
    seed: int = 0,
    noise: float = 0.01,
    kind: str = "gaussian-bump",
) -> Tuple[EnergyContext, np.ndarray]:
    """Noisy scene with a perturbed albedo in the context and a perturbed depth ``z``."""
    rng = np.random.default_rng(seed)
    grid = Grid(size, size)
    case = synthesize(kind, grid, random_lights(m, rng), noise, seed)
    rho = case.albedo.rho * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, grid.n))
    ctx = build_context(
        case.images,
        case.lights,
        AlbedoMap(grid, rho),
        case.depth,
        DEFAULT_LAMBDA,
        operator=case.operator,
    )
    z = case.depth.z + 0.05 * rng.standard_normal(grid.n)
    return ctx, z


def finite_difference_gradient(ctx: EnergyContext, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    z = np.array(z, dtype=float)
    result = np.empty_like(z)
    for index in range(z.shape[0]):
        saved = z[index]
        z[index] = saved + h
        forward = eval_f(ctx, z)
        z[index] = saved - h
        backward = eval_f(ctx, z)
        z[index] = saved
        result[index] = (forward - backward) / (2.0 * h)
    return result


def relative_inf_error(candidate: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    error = float(np.max(np.abs(candidate - reference))) if reference.size else 0.0
    if scale == 0.0:
        return error
    return error / scale


@dataclass(frozen=True)
class GradientCheck:
    fd_error: float
    oracle_error: Optional[float]
    gap_error: float
    descent: float

    def to_mapping(self) -> Dict[str, Any]:
        return {
            "fd_error": self.fd_error,
            "oracle_error": self.oracle_error,
            "gap_error": self.gap_error,
            "q_dot_gradf": self.descent,
        }


def gradient_check(ctx: EnergyContext, z: np.ndarray, h: float = 1e-6) -> GradientCheck:
    exact = grad_f_exact(ctx, z)
    fd_error = relative_inf_error(finite_difference_gradient(ctx, z, h), exact)
    oracle_error = None
    if ctx.n <= DENSE_ORACLE_MAX_PIXELS:
        oracle_error = relative_inf_error(dense_oracle_grad(ctx, z), exact)
    gap = grad_f_approx(ctx, z) + p_transpose_residual(ctx, z)
    return GradientCheck(
        fd_error=fd_error,
        oracle_error=oracle_error,
        gap_error=relative_inf_error(gap, exact),
        descent=descent_diagnostic(ctx, z),
    )


@dataclass(frozen=True, eq=False)
class ClassicPrior:
    pointwise: PointwisePSResult
    depth: DepthMap


def classic_prior(
    images: ImageStack, lights: LightMatrix, operator: GradientOperator
) -> ClassicPrior:
    pointwise = estimate_normals_albedo(images, lights)
    return ClassicPrior(pointwise, integrate_normals(pointwise.normals, operator))


@dataclass(frozen=True)
class ComparisonRow:
    scene: str
    m: int
    noise: float
    seed: int
    f_classic: float
    f_refined: float
    mae_classic: float
    mae_refined: float
    initial_objective: float
    final_objective: float
    outer_iterations: int


COMPARISON_COLUMNS = tuple(ComparisonRow.__dataclass_fields__)


def compare_methods(
    kind: str,
    grid: Grid,
    lights: LightMatrix,
    noise: float,
    seed: int,
    config: SolverConfig,
    params: Optional[Mapping[str, Any]] = None,
) -> ComparisonRow:
    """Classic PS plus integration versus the refined depth, both judged on surfaces."""
    case = synthesize(kind, grid, lights, noise, seed, params)
    prior = classic_prior(case.images, lights, case.operator)
    truth = case.normals
    ctx = build_context(
        case.images, lights, prior.pointwise.albedo, prior.depth, config.lam, operator=case.operator
    )
    solved = alternating_solve(
        case.images,
        lights,
        prior.depth,
        prior.pointwise.albedo,
        config,
        operator=case.operator,
    )
    refined_ctx = ctx.with_albedo(solved.albedo)
    row = ComparisonRow(
        scene=kind,
        m=lights.m,
        noise=float(noise),
        seed=int(seed),
        f_classic=eval_f(ctx, prior.depth.z),
        f_refined=eval_f(refined_ctx, solved.depth.z),
        mae_classic=mean_angular_error(normals_from_depth(prior.depth, case.operator), truth),
        mae_refined=mean_angular_error(normals_from_depth(solved.depth, case.operator), truth),
        initial_objective=solved.trace.initial_objective,
        final_objective=solved.trace.final_objective,
        outer_iterations=len(solved.trace.outer),
    )
    logger.info(
        "%s m=%d noise=%.4g seed=%d: MAE %.4f -> %.4f",
        kind,
        row.m,
        row.noise,
        row.seed,
        row.mae_classic,
        row.mae_refined,
    )
    return row


@dataclass(frozen=True)
class SweepPoint:
    kind: str
    grid: Grid
    lights: LightMatrix = field(repr=False)
    noise: float
    seed: int


def run_sweep(
    points: Sequence[SweepPoint],
    config: SolverConfig,
    threads: int = 1,
    params: Optional[Mapping[str, Any]] = None,
) -> List[ComparisonRow]:
    """Run every comparison; rows come back in input order."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = [
            executor.submit(
                compare_methods,
                point.kind,
                point.grid,
                point.lights,
                point.noise,
                point.seed,
                config,
                params,
            )
            for point in points
        ]
        return [future.result() for future in futures]


def noise_sweep_points(
    kind: str, grid: Grid, num_lights: int, levels: Sequence[float], seeds: Sequence[int]
) -> List[SweepPoint]:
    lights = ring_lights(num_lights)
    return [SweepPoint(kind, grid, lights, level, seed) for level in levels for seed in seeds]


def image_sweep_points(
    kind: str, grid: Grid, counts: Sequence[int], noise: float, seeds: Sequence[int]
) -> List[SweepPoint]:
    return [
        SweepPoint(kind, grid, ring_lights(count), noise, seed)
        for count in counts
        for seed in seeds
    ]


__all__ = [
    "COMPARISON_COLUMNS",
    "ClassicPrior",
    "ComparisonRow",
    "GradientCheck",
    "SweepPoint",
    "SyntheticCase",
    "classic_prior",
    "compare_methods",
    "finite_difference_gradient",
    "gradient_check",
    "image_sweep_points",
    "noise_sweep_points",
    "random_instance",
    "random_lights",
    "relative_inf_error",
    "run_sweep",
    "synthesize",
]

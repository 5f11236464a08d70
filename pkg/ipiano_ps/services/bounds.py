"""Analytic Lipschitz bounds for the gradients and their sampled tightness.

The bounds hold on the set of depths whose per-pixel gradients respect the caps
``||M_j z|| <= Lz_j``; nothing is claimed outside that set.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..config import CAP_FACTOR, DEFAULT_GRADIENT_MODE
from ..errors import GridMismatchError, InputError
from .core import AlbedoMap, DepthMap, GradientOperator, ImageStack, LightMatrix
from .energy import EnergyContext, gradient

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GradientCaps:
    Lz: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        caps = np.array(self.Lz, dtype=float).reshape(-1)
        if not np.all(np.isfinite(caps)) or np.any(caps < 0):
            raise InputError("gradient caps must be finite and >= 0")
        caps.setflags(write=False)
        object.__setattr__(self, "Lz", caps)

    @property
    def Lz_tilde(self) -> np.ndarray:
        return np.sqrt(1.0 + self.Lz**2)

    @classmethod
    def uniform(cls, n: int, cap: float) -> "GradientCaps":
        return cls(np.full(n, float(cap)))


def caps_from_depth(
    depth: DepthMap, operator: GradientOperator, factor: float = CAP_FACTOR
) -> GradientCaps:
    """Uniform cap of ``factor * max_j ||M_j z||`` taken from a reference depth."""
    depth.grid.require_same(operator.grid, "depth and operator")
    slopes = np.linalg.norm(operator.apply(depth.z), axis=1)
    return GradientCaps.uniform(depth.grid.n, factor * float(np.max(slopes)))


@dataclass(frozen=True, eq=False)
class LipschitzReport:
    L_A_j: np.ndarray = field(repr=False)
    L_f_j: np.ndarray = field(repr=False)
    L_p_j: np.ndarray = field(repr=False)
    L_A: float
    L_f: float
    L_grad_f: float = float("nan")
    L_q: float = float("nan")

    def summary(self) -> dict:
        return {
            "L_A": self.L_A,
            "L_f": self.L_f,
            "L_p": float(np.sqrt(np.sum(self.L_p_j**2))),
            "L_grad_f": self.L_grad_f,
            "L_q": self.L_q,
        }


def _check_shapes(
    lights: LightMatrix, operator: GradientOperator, rho: AlbedoMap, caps: GradientCaps
) -> None:
    operator.grid.require_same(rho.grid, "operator and albedo")
    if caps.Lz.shape[0] != operator.grid.n:
        raise GridMismatchError(
            f"caps must have {operator.grid.n} entries, got {caps.Lz.shape[0]}"
        )


def component_bounds(
    lights: LightMatrix, operator: GradientOperator, rho: AlbedoMap, caps: GradientCaps
) -> LipschitzReport:
    """Per-pixel bounds for ``A``, the residual and ``p``, with their global combinations."""
    _check_shapes(lights, operator, rho, caps)
    norm_s = float(np.linalg.norm(lights.S, ord=2))
    norm_left = float(np.linalg.norm(lights.left, ord=2))
    block = operator.block_norms
    lz, lz_tilde = caps.Lz, caps.Lz_tilde
    weight = rho.rho

    l_a = weight * norm_left * lz * block
    l_f = weight * norm_s * block * (lz_tilde * lz + 1.0)
    l_p = weight * norm_s * block**2 * (3.0 * lz_tilde * lz**2 + lz_tilde + lz)
    return LipschitzReport(
        L_A_j=l_a,
        L_f_j=l_f,
        L_p_j=l_p,
        L_A=float(np.max(l_a)) if l_a.size else 0.0,
        L_f=float(np.sqrt(np.sum(l_f**2))),
    )


def global_constants(
    images: ImageStack,
    lights: LightMatrix,
    operator: GradientOperator,
    rho: AlbedoMap,
    caps: GradientCaps,
) -> LipschitzReport:
    """Global constants ``L^grad_f`` and ``L^q`` on top of :func:`component_bounds`."""
    report = component_bounds(lights, operator, rho, caps)
    images.grid.require_same(operator.grid, "images and operator")
    m = images.m
    norm_s = float(np.linalg.norm(lights.S, ord=2))
    norm_left = float(np.linalg.norm(lights.left, ord=2))
    norm_m = operator.norm
    weight = rho.rho
    lz, lz_tilde = caps.Lz, caps.Lz_tilde
    block = operator.block_norms

    data_scale = float(
        np.sqrt(np.sum(np.sum(images.intensities**2, axis=0) + weight**2 * norm_s**2))
    )
    albedo_peak = float(np.max(weight)) * norm_left * norm_m if weight.size else 0.0
    p_total = float(np.sqrt(np.sum(report.L_p_j**2)))
    cross = float(np.sqrt(np.sum(weight**2 * norm_s**2 * (lz_tilde * lz) ** 2 * block**2)))

    l_q = (data_scale * report.L_A * norm_m + albedo_peak * report.L_f) / m
    l_grad_f = (
        data_scale * (p_total + report.L_A * norm_m)
        + report.L_f * (albedo_peak + cross)
    ) / m
    return LipschitzReport(
        L_A_j=report.L_A_j,
        L_f_j=report.L_f_j,
        L_p_j=report.L_p_j,
        L_A=report.L_A,
        L_f=report.L_f,
        L_grad_f=l_grad_f,
        L_q=l_q,
    )


def project_to_caps(
    z: np.ndarray, operator: GradientOperator, caps: GradientCaps
) -> np.ndarray:
    slopes = np.linalg.norm(operator.apply(z), axis=1)
    moving = slopes > 0
    if not np.any(moving):
        return z
    ratio = float(np.min(caps.Lz[moving] / slopes[moving]))
    return z * min(1.0, ratio)


def _sample_pair(
    ctx: EnergyContext, caps: GradientCaps, seed_sequence: np.random.SeedSequence
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_sequence)
    base = ctx.z0.z
    scale = float(np.max(caps.Lz)) if caps.Lz.size else 0.0
    x = project_to_caps(base + scale * rng.standard_normal(ctx.n), ctx.operator, caps)
    y = project_to_caps(
        x + 0.1 * max(scale, 1e-3) * rng.standard_normal(ctx.n), ctx.operator, caps
    )
    return x, y


def sampled_ratios(
    ctx: EnergyContext,
    samples: int,
    caps: GradientCaps,
    seed: int,
    threads: int = 1,
    gradient_mode: str = DEFAULT_GRADIENT_MODE,
) -> List[float]:
    """Difference quotients ``||grad(x) - grad(y)|| / ||x - y||`` over cap-respecting pairs."""
    if samples < 2:
        raise InputError(f"at least 2 samples are required, got {samples}")
    if caps.Lz.shape[0] != ctx.n:
        raise GridMismatchError(f"caps must have {ctx.n} entries, got {caps.Lz.shape[0]}")
    children = np.random.SeedSequence(seed).spawn(samples)

    def ratio(child: np.random.SeedSequence) -> Optional[float]:
        x, y = _sample_pair(ctx, caps, child)
        distance = float(np.linalg.norm(x - y))
        if distance == 0.0:
            return None
        change = gradient(ctx, x, gradient_mode) - gradient(ctx, y, gradient_mode)
        return float(np.linalg.norm(change)) / distance

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(ratio, children))
    return [value for value in results if value is not None]


def empirical_lipschitz(
    ctx: EnergyContext,
    samples: int,
    caps: GradientCaps,
    seed: int,
    threads: int = 1,
    gradient_mode: str = "exact",
) -> float:
    ratios = sampled_ratios(ctx, samples, caps, seed, threads, gradient_mode)
    estimate = max(ratios) if ratios else 0.0
    logger.debug(
        "Sampled %d pairs (%s gradient): max ratio %.6g", len(ratios), gradient_mode, estimate
    )
    return estimate


__all__ = [
    "GradientCaps",
    "LipschitzReport",
    "caps_from_depth",
    "component_bounds",
    "empirical_lipschitz",
    "global_constants",
    "project_to_caps",
    "sampled_ratios",
]

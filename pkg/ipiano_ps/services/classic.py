"""Pointwise photometric stereo and least-squares normal integration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import cg

from ..config import ALBEDO_EPSILON, CG_MAX_ITERS_PER_PIXEL, CG_RTOL
from ..errors import InputError, IntegrationError, LightingError
from .core import (
    AlbedoMap,
    DepthMap,
    GradientOperator,
    ImageStack,
    LightMatrix,
    NormalField,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PointwisePSResult:
    normals: NormalField
    albedo: AlbedoMap
    residual: np.ndarray = field(repr=False)


def estimate_normals_albedo(images: ImageStack, lights: LightMatrix) -> PointwisePSResult:
    """Solve ``(S^T S) m_j = S^T I_j`` for every pixel at once.

    ``rho_j = ||m_j||`` and ``n_j = m_j / rho_j``; pixels with ``rho_j <= 1e-12``
    get ``rho_j = 0`` and the frontal normal.
    """
    if lights.m != images.m:
        raise LightingError(f"{lights.m} light directions for {images.m} images")
    gram = lights.S.T @ lights.S
    if np.linalg.matrix_rank(gram) < 3:
        raise LightingError("S^T S is singular; light directions are coplanar")
    # 3 x n right-hand sides
    solution = np.linalg.solve(gram, lights.S.T @ images.intensities)
    scaled = solution.T
    rho = np.linalg.norm(scaled, axis=1)
    dark = rho <= ALBEDO_EPSILON
    normals = np.zeros_like(scaled)
    normals[~dark] = scaled[~dark] / rho[~dark, None]
    normals[dark] = (0.0, 0.0, 1.0)
    rho = np.where(dark, 0.0, rho)
    if np.any(dark):
        logger.warning("%d dark pixels fell back to the frontal normal", int(dark.sum()))

    residual = np.linalg.norm(images.intensities - lights.S @ scaled.T, axis=0)
    grid = images.grid
    return PointwisePSResult(
        normals=NormalField(grid, normals),
        albedo=AlbedoMap(grid, rho),
        residual=residual,
    )


def integrate_normals(normals: NormalField, operator: GradientOperator) -> DepthMap:
    """Least-squares surface from a normal field, anchored to zero mean.

    Solves ``M^T M z = M^T p`` with ``p_j = [-n1/n3, -n2/n3]`` by conjugate gradients.
    """
    normals.grid.require_same(operator.grid, "normals and gradient operator")
    third = normals.normals[:, 2]
    if not normals.facing_viewer():
        raise InputError(
            f"{int(np.count_nonzero(third <= 0.0))} normals do not face the viewer (n3 <= 0)"
        )
    slopes = -normals.normals[:, :2] / third[:, None]
    rhs = operator.adjoint(slopes)
    system = (operator.matrix.T @ operator.matrix).tocsr()
    n = normals.grid.n
    if system.nnz == 0:
        return DepthMap(normals.grid, np.zeros(n))

    max_iters = CG_MAX_ITERS_PER_PIXEL * n
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return DepthMap(normals.grid, np.zeros(n))
    depth, info = cg(system, rhs, x0=np.zeros(n), rtol=CG_RTOL, atol=0.0, maxiter=max_iters)
    residual = float(np.linalg.norm(system @ depth - rhs) / rhs_norm)
    if info != 0:
        raise IntegrationError(
            f"conjugate gradients did not converge in {max_iters} iterations "
            f"(relative residual {residual:.3e})",
            residual=residual,
        )
    depth = depth - depth.mean()
    logger.debug("Integrated %d normals (relative residual %.3e)", n, residual)
    return DepthMap(normals.grid, depth)


__all__ = ["PointwisePSResult", "estimate_normals_albedo", "integrate_normals"]

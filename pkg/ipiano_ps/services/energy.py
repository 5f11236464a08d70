"""Reprojection energy, its block matrices and gradients.

The data term is ``f(z) = (1/2m) sum_j ||r_j||^2`` with the per-pixel residual
``r_j = A_j M_j z - b_j = rho_j S [-M_j z; 1] / w_j - I_j`` and
``w_j = sqrt(1 + ||M_j z||^2)``. The regulariser is ``g(z) = lambda/2 ||z - z0||^2``.

Three gradient paths exist:

* :func:`grad_f_approx` drops the ``p(z)`` term and runs entirely on per-pixel
  2-vectors through ``M^T``; this is the production path.
* :func:`grad_f_exact` assembles the sparse residual Jacobian ``A(z) M + p(z)``
  from the per-pixel blocks and applies its transpose.
* :func:`dense_oracle_grad` differentiates the vectorised block-diagonal ``A``
  column by column and exists only to cross-check the exact gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..config import DENSE_ORACLE_MAX_PIXELS
from ..errors import GridMismatchError, InputError, LightingError, OracleSizeError
from .core import (
    AlbedoMap,
    DepthMap,
    GradientOperator,
    ImageStack,
    LightMatrix,
    build_gradient_operator,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EnergyContext:
    """Everything the energy needs besides the depth itself.

    ``mask`` holds per-pixel weights in {0, 1}; a zero removes the pixel from the
    data term while the Tikhonov term still covers it.
    """

    images: ImageStack
    lights: LightMatrix
    operator: GradientOperator
    albedo: AlbedoMap
    lam: float
    z0: DepthMap
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        grid = self.images.grid
        grid.require_same(self.operator.grid, "images and gradient operator")
        grid.require_same(self.albedo.grid, "images and albedo")
        grid.require_same(self.z0.grid, "images and prior depth")
        if self.lights.m != self.images.m:
            raise LightingError(
                f"{self.lights.m} light directions for {self.images.m} images"
            )
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InputError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.mask is not None:
            weights = np.asarray(self.mask, dtype=float).reshape(-1)
            if weights.shape[0] != grid.n:
                raise GridMismatchError(
                    f"mask must have {grid.n} entries, got {weights.shape[0]}"
                )
            weights = (weights != 0).astype(float)
            weights.setflags(write=False)
            object.__setattr__(self, "mask", weights)

    @property
    def m(self) -> int:
        return self.images.m

    @property
    def n(self) -> int:
        return self.images.grid.n

    @property
    def weights(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.n)
        return self.mask

    def with_albedo(self, albedo: AlbedoMap) -> "EnergyContext":
        return replace(self, albedo=albedo)


def build_context(
    images: ImageStack,
    lights: LightMatrix,
    albedo: AlbedoMap,
    z0: DepthMap,
    lam: float,
    mask: Optional[np.ndarray] = None,
    operator: Optional[GradientOperator] = None,
) -> EnergyContext:
    if operator is None:
        operator = build_gradient_operator(images.grid)
    return EnergyContext(
        images=images,
        lights=lights,
        operator=operator,
        albedo=albedo,
        lam=float(lam),
        z0=z0,
        mask=mask,
    )


class PixelTerms(NamedTuple):
    gradients: np.ndarray  # n x 2, M_j z
    norms: np.ndarray  # n, w_j
    shading: np.ndarray  # n x m, S [-M_j z; 1]
    residual: np.ndarray  # n x m, r_j


@dataclass(frozen=True)
class BlockA:
    """Per-pixel ``m x 2`` blocks ``A_j = -rho_j S_l / w_j`` stored as ``n x m x 2``."""

    blocks: np.ndarray


@dataclass(frozen=True)
class BlockB:
    vectors: np.ndarray


@dataclass(frozen=True)
class BlockP:
    """Per-pixel blocks of ``p(z)`` restricted to the stencil columns of ``M_j``.

    ``values[j] @ x[columns[j]]`` equals ``p_j x`` for any ``x``.
    """

    columns: np.ndarray
    values: np.ndarray


def _depth_vector(ctx: EnergyContext, z: np.ndarray) -> np.ndarray:
    values = np.asarray(z, dtype=float).reshape(-1)
    if values.shape[0] != ctx.n:
        raise GridMismatchError(f"depth must have {ctx.n} entries, got {values.shape[0]}")
    return values


def pixel_terms(ctx: EnergyContext, z: np.ndarray) -> PixelTerms:
    z = _depth_vector(ctx, z)
    gradients = ctx.operator.apply(z)
    norms = np.sqrt(1.0 + np.sum(gradients**2, axis=1))
    shading = ctx.lights.right[None, :] - gradients @ ctx.lights.left.T
    rendered = shading * (ctx.albedo.rho / norms)[:, None]
    residual = rendered - ctx.images.pixel_vectors()
    return PixelTerms(gradients, norms, shading, residual)


def eval_f(ctx: EnergyContext, z: np.ndarray) -> float:
    residual = pixel_terms(ctx, z).residual
    return float(np.dot(ctx.weights, np.sum(residual**2, axis=1)) / (2.0 * ctx.m))


def eval_g(ctx: EnergyContext, z: np.ndarray) -> float:
    difference = _depth_vector(ctx, z) - ctx.z0.z
    return float(0.5 * ctx.lam * np.dot(difference, difference))


def eval_objective(ctx: EnergyContext, z: np.ndarray) -> float:
    return eval_f(ctx, z) + eval_g(ctx, z)


def block_a(ctx: EnergyContext, z: np.ndarray) -> BlockA:
    terms = pixel_terms(ctx, z)
    scale = -(ctx.albedo.rho / terms.norms)
    return BlockA(scale[:, None, None] * ctx.lights.left[None, :, :])


def block_b(ctx: EnergyContext, z: np.ndarray) -> BlockB:
    terms = pixel_terms(ctx, z)
    shading_right = ctx.lights.right[None, :] * (ctx.albedo.rho / terms.norms)[:, None]
    return BlockB(ctx.images.pixel_vectors() - shading_right)


def block_p(ctx: EnergyContext, z: np.ndarray) -> BlockP:
    """``p_j = -rho_j / w_j^3 * S [-M_j z; 1] (M_j^T M_j z)^T`` on the stencil columns."""
    terms = pixel_terms(ctx, z)
    columns, stencil = ctx.operator.stencil
    # local rows of M_j^T M_j z, one per stencil column
    local = np.einsum("jtc,jt->jc", stencil, terms.gradients)
    scale = -(ctx.albedo.rho / terms.norms**3)
    values = scale[:, None, None] * terms.shading[:, :, None] * local[:, None, :]
    return BlockP(columns, values)


def residual_jacobian(ctx: EnergyContext, z: np.ndarray) -> sp.csr_matrix:
    """Sparse ``mn x n`` Jacobian ``A(z) M + p(z)`` of the stacked residual.

    Row ``j * m + i`` belongs to image ``i`` at pixel ``j``; masked pixels keep
    their rows (the mask is applied to the residual instead).
    """
    z = _depth_vector(ctx, z)
    a_blocks = block_a(ctx, z).blocks
    p_blocks = block_p(ctx, z)
    _, stencil = ctx.operator.stencil
    values = np.einsum("jit,jtc->jic", a_blocks, stencil) + p_blocks.values
    m, n = ctx.m, ctx.n
    rows = np.broadcast_to(
        (np.arange(n)[:, None] * m + np.arange(m)[None, :])[:, :, None], values.shape
    )
    cols = np.broadcast_to(p_blocks.columns[:, None, :], values.shape)
    jacobian = sp.coo_matrix(
        (values.reshape(-1), (rows.reshape(-1), cols.reshape(-1))), shape=(m * n, n)
    )
    return jacobian.tocsr()


def grad_f_exact(ctx: EnergyContext, z: np.ndarray) -> np.ndarray:
    z = _depth_vector(ctx, z)
    residual = pixel_terms(ctx, z).residual * ctx.weights[:, None]
    jacobian = residual_jacobian(ctx, z)
    return np.asarray(jacobian.T @ residual.reshape(-1)) / ctx.m


def grad_f_approx(ctx: EnergyContext, z: np.ndarray) -> np.ndarray:
    terms = pixel_terms(ctx, z)
    residual = terms.residual * ctx.weights[:, None]
    scale = -(ctx.albedo.rho / terms.norms)
    # A_j^T r_j as n x 2
    local = scale[:, None] * (residual @ ctx.lights.left)
    return ctx.operator.adjoint(local) / ctx.m


def p_transpose_residual(ctx: EnergyContext, z: np.ndarray) -> np.ndarray:
    terms = pixel_terms(ctx, z)
    residual = terms.residual * ctx.weights[:, None]
    coupling = np.sum(terms.shading * residual, axis=1)
    scale = -(ctx.albedo.rho / terms.norms**3) * coupling
    return ctx.operator.adjoint(scale[:, None] * terms.gradients) / ctx.m


def gradient(ctx: EnergyContext, z: np.ndarray, mode: str) -> np.ndarray:
    if mode == "exact":
        return grad_f_exact(ctx, z)
    if mode == "approx":
        return grad_f_approx(ctx, z)
    raise InputError(f"unknown gradient mode {mode!r}")


def descent_diagnostic(ctx: EnergyContext, z: np.ndarray) -> float:
    """``<q(z), grad f(z)>``; a nonnegative value means ``-q`` descends at ``z``."""
    return float(np.dot(grad_f_approx(ctx, z), grad_f_exact(ctx, z)))


def vec_jacobian(partials: Sequence[np.ndarray]) -> sp.csc_matrix:
    """Stack ``vec(dX/dx_k)`` (column-major) as the columns of a sparse Jacobian."""
    columns: List[sp.csc_matrix] = [
        sp.csc_matrix(np.asarray(partial, dtype=float).reshape(-1, 1, order="F"))
        for partial in partials
    ]
    return sp.hstack(columns, format="csc")


def dense_oracle_grad(ctx: EnergyContext, z: np.ndarray) -> np.ndarray:
    """Literal gradient from the vectorised Jacobians ``D[A]`` and ``D[b]``.

    Builds ``D[A] in R^{2mn^2 x n}`` and ``D[b] in R^{mn x n}`` one column at a time,
    forms ``D[r] = A M + ((M z)^T kron I_mn) D[A] - D[b]`` and returns
    ``(1/m) D[r]^T r``. Limited to small grids.
    """
    n, m = ctx.n, ctx.m
    if n > DENSE_ORACLE_MAX_PIXELS:
        raise OracleSizeError(
            f"dense oracle supports at most {DENSE_ORACLE_MAX_PIXELS} pixels, got {n}"
        )
    z = _depth_vector(ctx, z)
    matrix = ctx.operator.matrix.toarray()
    slope = matrix @ z
    gradients = slope.reshape(n, 2)
    norms = np.sqrt(1.0 + np.sum(gradients**2, axis=1))
    rho = ctx.albedo.rho
    left, right = ctx.lights.left, ctx.lights.right

    big_a = scipy.linalg.block_diag(*[-rho[j] * left / norms[j] for j in range(n)])
    big_b = np.concatenate(
        [ctx.images.intensities[:, j] - rho[j] * right / norms[j] for j in range(n)]
    )

    partials_a: List[np.ndarray] = []
    partials_b: List[np.ndarray] = []
    for k in range(n):
        # d(1/w_j)/dz_k = -(M_j z . M_j[:, k]) / w_j^3
        rate = np.array(
            [gradients[j] @ matrix[2 * j : 2 * j + 2, k] for j in range(n)]
        ) / norms**3
        partials_a.append(
            scipy.linalg.block_diag(*[rho[j] * rate[j] * left for j in range(n)])
        )
        partials_b.append(np.concatenate([rho[j] * rate[j] * right for j in range(n)]))

    d_a = vec_jacobian(partials_a)
    d_b = np.column_stack(partials_b)
    kron = sp.kron(sp.csr_matrix(slope.reshape(1, -1)), sp.identity(m * n), format="csr")
    jacobian = big_a @ matrix + np.asarray((kron @ d_a).todense()) - d_b

    residual = (big_a @ slope - big_b) * np.repeat(ctx.weights, m)
    return jacobian.T @ residual / m


__all__ = [
    "BlockA",
    "BlockB",
    "BlockP",
    "EnergyContext",
    "PixelTerms",
    "block_a",
    "block_b",
    "block_p",
    "build_context",
    "dense_oracle_grad",
    "descent_diagnostic",
    "eval_f",
    "eval_g",
    "eval_objective",
    "grad_f_approx",
    "grad_f_exact",
    "gradient",
    "p_transpose_residual",
    "pixel_terms",
    "residual_jacobian",
    "vec_jacobian",
]

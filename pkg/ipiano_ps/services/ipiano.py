"""Inertial proximal depth updates, closed-form albedo updates and the outer loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional

import numpy as np

from ..config import (
    ALBEDO_DENOMINATOR_GUARD,
    BACKTRACKING_SLACK,
    BETA_MODES,
    DEFAULT_BETA_CONSTANT,
    DEFAULT_BETA_MODE,
    DEFAULT_C,
    DEFAULT_D,
    DEFAULT_ETA,
    DEFAULT_GRADIENT_MODE,
    DEFAULT_INNER_MAX_ITERS,
    DEFAULT_L_INIT,
    DEFAULT_LAMBDA,
    DEFAULT_MU,
    DEFAULT_OUTER_MAX_ITERS,
    DEFAULT_REL_TOL,
    DESCENT_TOLERANCE,
    GRADIENT_MODES,
    LIPSCHITZ_DIVERGENCE_CAP,
    OBJECTIVE_FLOOR,
)
from ..errors import ConfigError, DivergenceError, InputError, LightingError
from .core import (
    AlbedoMap,
    DepthMap,
    GradientOperator,
    ImageStack,
    LightMatrix,
    NormalField,
    build_gradient_operator,
    mean_angular_error,
    normals_from_depth,
)
from .energy import (
    EnergyContext,
    build_context,
    descent_diagnostic,
    eval_f,
    eval_g,
    eval_objective,
    gradient,
)

logger = logging.getLogger(__name__)

# JSON key -> attribute name
_CONFIG_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class SolverConfig:
    lam: float = DEFAULT_LAMBDA
    c: float = DEFAULT_C
    d: float = DEFAULT_D
    eta: float = DEFAULT_ETA
    mu: float = DEFAULT_MU
    beta_mode: str = DEFAULT_BETA_MODE
    beta_constant: float = DEFAULT_BETA_CONSTANT
    gradient_mode: str = DEFAULT_GRADIENT_MODE
    inner_max_iters: int = DEFAULT_INNER_MAX_ITERS
    outer_max_iters: int = DEFAULT_OUTER_MAX_ITERS
    rel_tol: float = DEFAULT_REL_TOL
    L_init: float = DEFAULT_L_INIT
    monitor_descent: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        problems: List[str] = []
        for name in ("lam", "c", "d", "eta", "mu", "beta_constant", "rel_tol", "L_init"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if problems:
            raise ConfigError("; ".join(problems))
        if self.lam < 0:
            problems.append("lambda must be >= 0")
        if not self.d > self.c > 0:
            problems.append("d > c > 0 is required")
        if not self.eta > 1:
            problems.append("eta must exceed 1")
        if not self.mu >= 1:
            problems.append("mu must be >= 1")
        if not 0 <= self.beta_constant < 1:
            problems.append("beta_constant must lie in [0, 1)")
        if self.rel_tol <= 0:
            problems.append("rel_tol must be > 0")
        if self.L_init <= 0:
            problems.append("L_init must be > 0")
        if self.inner_max_iters < 1 or self.outer_max_iters < 1:
            problems.append("iteration limits must be >= 1")
        if self.beta_mode not in BETA_MODES:
            problems.append(f"beta_mode must be one of {', '.join(BETA_MODES)}")
        if self.gradient_mode not in GRADIENT_MODES:
            problems.append(f"gradient_mode must be one of {', '.join(GRADIENT_MODES)}")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "SolverConfig":
        """Build a config from JSON-style keys; missing keys keep their defaults."""
        known = {item.name: item for item in fields(cls)}
        values: Dict[str, Any] = {}
        for key, raw in payload.items():
            name = _CONFIG_ALIASES.get(key, key)
            if name not in known or key == "lam":
                raise ConfigError(f"unknown solver configuration key {key!r}")
            values[name] = _coerce_config_value(key, known[name].type, raw)
        return cls(**values)

    def to_mapping(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["lambda"] = payload.pop("lam")
        return payload

    def with_overrides(self, **overrides: Any) -> "SolverConfig":
        merged = self.to_mapping()
        merged.update({key: value for key, value in overrides.items() if value is not None})
        return SolverConfig.from_mapping(merged)


def _coerce_config_value(key: str, annotation: Any, raw: Any) -> Any:
    kind = str(annotation)
    if kind == "bool":
        if not isinstance(raw, bool):
            raise ConfigError(f"{key} must be true or false")
        return raw
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{key} must be an integer")
        if isinstance(raw, float) and not (math.isfinite(raw) and raw.is_integer()):
            raise ConfigError(f"{key} must be an integer")
        return int(raw)
    if kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(raw)
    if not isinstance(raw, str):
        raise ConfigError(f"{key} must be a string")
    return raw


@dataclass(frozen=True)
class IterationRecord:
    k: int
    ell: int
    f_plus_g: float
    L: float
    alpha: float
    beta: float
    delta: float
    gamma: float
    Delta: float
    H_delta: float
    q_dot_gradf: Optional[float] = None


@dataclass(frozen=True)
class OuterRecord:
    k: int
    objective: float
    inner_iterations: int
    start_objective: float
    mae: Optional[float] = None


@dataclass
class IterTrace:
    initial_objective: float
    inner: List[IterationRecord] = field(default_factory=list)
    outer: List[OuterRecord] = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.outer[-1].objective if self.outer else self.initial_objective

    def inner_rows(self) -> List[Dict[str, Any]]:
        return [asdict(record) for record in self.inner]

    def outer_rows(self) -> List[Dict[str, Any]]:
        return [asdict(record) for record in self.outer]

    def records_for(self, k: int) -> List[IterationRecord]:
        return [record for record in self.inner if record.k == k]


def prox_g(v: np.ndarray, alpha: float, lam: float, z0: np.ndarray) -> np.ndarray:
    """Closed-form prox of ``alpha * lam/2 ||x - z0||^2``: ``(v + alpha lam z0) / (1 + alpha lam)``."""
    if not alpha > 0:
        raise InputError(f"prox step size must be positive, got {alpha}")
    weight = alpha * lam
    return (np.asarray(v, dtype=float) + weight * np.asarray(z0, dtype=float)) / (1.0 + weight)


class StepCandidate(NamedTuple):
    z: np.ndarray
    alpha: float = math.nan
    beta: float = math.nan
    delta: float = math.nan
    gamma: float = math.nan


class BacktrackResult(NamedTuple):
    lipschitz: float
    candidate: StepCandidate
    f_next: float
    trials: int


def lazy_backtracking(
    ctx: EnergyContext,
    z_current: np.ndarray,
    build_candidate: Callable[[float], StepCandidate],
    L_start: float,
    eta: float,
    gradient_mode: str = DEFAULT_GRADIENT_MODE,
    f_current: Optional[float] = None,
    grad_current: Optional[np.ndarray] = None,
) -> BacktrackResult:
    """Grow ``L`` by ``eta`` until the candidate satisfies the descent-lemma bound.

    Accepts when ``f(z+) <= f(z) + <grad, z+ - z> + L/2 ||z+ - z||^2`` up to a
    round-off slack of ``1e-13 * max(1, |f(z)|)``.
    """
    if not L_start > 0:
        raise InputError(f"L_start must be positive, got {L_start}")
    if not eta > 1:
        raise InputError(f"eta must exceed 1, got {eta}")
    z_current = np.asarray(z_current, dtype=float)
    if f_current is None:
        f_current = eval_f(ctx, z_current)
    if grad_current is None:
        grad_current = gradient(ctx, z_current, gradient_mode)
    slack = BACKTRACKING_SLACK * max(1.0, abs(f_current))

    lipschitz = float(L_start)
    trials = 0
    while True:
        trials += 1
        candidate = build_candidate(lipschitz)
        step = candidate.z - z_current
        f_next = eval_f(ctx, candidate.z)
        bound = (
            f_current
            + float(np.dot(grad_current, step))
            + 0.5 * lipschitz * float(np.dot(step, step))
        )
        if f_next <= bound + slack:
            logger.debug("Accepted L=%.6g after %d trial(s)", lipschitz, trials)
            return BacktrackResult(lipschitz, candidate, f_next, trials)
        lipschitz *= eta
        if lipschitz > LIPSCHITZ_DIVERGENCE_CAP:
            raise DivergenceError(
                f"lazy backtracking exceeded L={LIPSCHITZ_DIVERGENCE_CAP:g}; "
                "the gradient is inconsistent with the energy",
                lipschitz=lipschitz,
            )


def step_parameters(
    config: SolverConfig, lipschitz: float, delta_prev: float
) -> StepCandidate:
    """``alpha``, ``beta`` and the Lyapunov weights for one accepted ``L``.

    ``delta = 1/alpha - L/2 - beta/(2 alpha)`` weights the majorising sequence and
    ``gamma = 1/alpha - L/2 - beta/alpha`` is its guaranteed decrease rate.
    """
    c = config.c
    half = 0.5 * lipschitz
    if config.beta_mode == "adaptive":
        nu = (delta_prev + half) / (c + half)
        beta = (nu - 1.0) / (nu + c - 0.5)
    else:
        beta = config.beta_constant
    alpha = (1.0 - beta) / (c + half)
    delta = 1.0 / alpha - half - beta / (2.0 * alpha)
    gamma = 1.0 / alpha - half - beta / alpha
    return StepCandidate(np.empty(0), alpha, beta, delta, gamma)


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), OBJECTIVE_FLOOR)


@dataclass(frozen=True)
class InnerResult:
    depth: DepthMap
    records: List[IterationRecord]
    start_objective: float
    last_lipschitz: float


def descent_violations(
    records: List[IterationRecord],
    start_objective: float,
    tolerance: float = DESCENT_TOLERANCE,
) -> List[int]:
    """Inner iterations whose ``H_delta`` fails ``H_l <= H_(l-1) - gamma_l Delta_l + tol``."""
    violations: List[int] = []
    previous = start_objective
    for record in records:
        if record.H_delta > previous - record.gamma * record.Delta + tolerance:
            violations.append(record.ell)
        previous = record.H_delta
    return violations


def ipiano_inner(
    ctx: EnergyContext,
    z_init: DepthMap,
    config: SolverConfig,
    L_start: Optional[float] = None,
    k: int = 0,
) -> InnerResult:
    """Run the inertial depth iteration for a fixed albedo.

    Backtracking starts at ``L_start`` (default ``L_init``) and each later
    iteration starts at the previous ``L / mu``. At least one iteration runs.
    """
    ctx.images.grid.require_same(z_init.grid, "images and initial depth")
    z_prev = np.array(z_init.z, dtype=float)
    z = z_prev.copy()
    delta_prev = config.d
    lipschitz = float(L_start if L_start is not None else config.L_init)
    objective = eval_objective(ctx, z)
    start_objective = objective
    previous_h = objective
    records: List[IterationRecord] = []

    for ell in range(config.inner_max_iters):
        f_value = eval_f(ctx, z)
        grad = gradient(ctx, z, config.gradient_mode)
        inertia = z - z_prev

        def build(trial: float) -> StepCandidate:
            params = step_parameters(config, trial, delta_prev)
            point = z - params.alpha * grad + params.beta * inertia
            return params._replace(z=prox_g(point, params.alpha, ctx.lam, ctx.z0.z))

        step = lazy_backtracking(
            ctx,
            z,
            build,
            lipschitz,
            config.eta,
            config.gradient_mode,
            f_current=f_value,
            grad_current=grad,
        )
        candidate = step.candidate
        new_objective = step.f_next + eval_g(ctx, candidate.z)
        movement = candidate.z - z
        h_delta = new_objective + candidate.delta * float(np.dot(movement, movement))
        record = IterationRecord(
            k=k,
            ell=ell,
            f_plus_g=new_objective,
            L=step.lipschitz,
            alpha=candidate.alpha,
            beta=candidate.beta,
            delta=candidate.delta,
            gamma=candidate.gamma,
            Delta=float(np.dot(inertia, inertia)),
            H_delta=h_delta,
            q_dot_gradf=descent_diagnostic(ctx, z) if config.monitor_descent else None,
        )
        records.append(record)
        logger.debug(
            "k=%d ell=%d f+g=%.12g L=%.6g beta=%.4f",
            k,
            ell,
            new_objective,
            step.lipschitz,
            candidate.beta,
        )
        if (
            config.gradient_mode == "exact"
            and config.beta_mode == "adaptive"
            and h_delta > previous_h - record.gamma * record.Delta + DESCENT_TOLERANCE
        ):
            logger.warning(
                "Majorising sequence increased at k=%d ell=%d (%.12g > %.12g)",
                k,
                ell,
                h_delta,
                previous_h,
            )

        previous_h = h_delta
        delta_prev = candidate.delta
        lipschitz = step.lipschitz / config.mu
        z_prev, z = z, candidate.z
        change = _relative_change(new_objective, objective)
        objective = new_objective
        if change < config.rel_tol:
            break

    return InnerResult(
        depth=DepthMap(z_init.grid, z),
        records=records,
        start_objective=start_objective,
        last_lipschitz=records[-1].L,
    )


def albedo_update(
    z: DepthMap,
    images: ImageStack,
    lights: LightMatrix,
    operator: GradientOperator,
    rho_prev: AlbedoMap,
    mask: Optional[np.ndarray] = None,
) -> AlbedoMap:
    """Per-pixel least-squares albedo ``w_j <I_j, t_j> / ||t_j||^2`` with ``t_j = S [-M_j z; 1]``.

    Pixels with a vanishing denominator, or excluded by ``mask``, keep ``rho_prev``.
    """
    images.grid.require_same(z.grid, "images and depth")
    images.grid.require_same(rho_prev.grid, "images and albedo")
    if lights.m != images.m:
        raise LightingError(f"{lights.m} light directions for {images.m} images")
    gradients = operator.apply(z.z)
    norms = np.sqrt(1.0 + np.sum(gradients**2, axis=1))
    shading = lights.right[None, :] - gradients @ lights.left.T
    numerator = np.sum(images.pixel_vectors() * shading, axis=1)
    denominator = np.sum(shading**2, axis=1)
    usable = denominator >= ALBEDO_DENOMINATOR_GUARD
    if mask is not None:
        usable &= np.asarray(mask, dtype=float).reshape(-1) != 0
    rho = np.array(rho_prev.rho, dtype=float)
    rho[usable] = norms[usable] * numerator[usable] / denominator[usable]
    updated = AlbedoMap(z.grid, rho)
    outside = updated.out_of_range()
    if outside:
        logger.warning("%d albedo values fall outside [0, 1]", outside)
    return updated


@dataclass(frozen=True)
class SolveResult:
    depth: DepthMap
    albedo: AlbedoMap
    trace: IterTrace


def alternating_solve(
    images: ImageStack,
    lights: LightMatrix,
    z0: DepthMap,
    rho0: AlbedoMap,
    config: SolverConfig,
    mask: Optional[np.ndarray] = None,
    reference_normals: Optional[NormalField] = None,
    z_start: Optional[DepthMap] = None,
    operator: Optional[GradientOperator] = None,
) -> SolveResult:
    """Alternate depth (inner loop) and albedo updates.

    The prior ``z0`` is also the starting depth unless ``z_start`` is given. Every
    inner loop starts backtracking from ``L_init``.
    """
    if operator is None:
        operator = build_gradient_operator(images.grid)
    ctx = build_context(images, lights, rho0, z0, config.lam, mask=mask, operator=operator)
    depth = z_start if z_start is not None else z0
    objective = eval_objective(ctx, depth.z)
    trace = IterTrace(initial_objective=objective)
    logger.info(
        "Starting alternating solve on %dx%d (m=%d, gradient=%s, f+g=%.12g)",
        images.grid.width,
        images.grid.height,
        images.m,
        config.gradient_mode,
        objective,
    )

    for k in range(config.outer_max_iters):
        inner = ipiano_inner(ctx, depth, config, k=k)
        trace.inner.extend(inner.records)
        depth = inner.depth
        albedo = albedo_update(depth, images, lights, operator, ctx.albedo, mask=ctx.mask)
        ctx = ctx.with_albedo(albedo)
        new_objective = eval_objective(ctx, depth.z)
        mae = None
        if reference_normals is not None:
            mae = mean_angular_error(
                normals_from_depth(depth, operator), reference_normals, mask=ctx.mask
            )
        trace.outer.append(
            OuterRecord(
                k=k,
                objective=new_objective,
                inner_iterations=len(inner.records),
                start_objective=inner.start_objective,
                mae=mae,
            )
        )
        logger.info(
            "Outer iteration %d: f+g=%.12g after %d inner iterations (last L=%.6g)",
            k,
            new_objective,
            len(inner.records),
            inner.last_lipschitz,
        )
        change = _relative_change(new_objective, objective)
        objective = new_objective
        if change < config.rel_tol:
            break

    return SolveResult(depth=depth, albedo=ctx.albedo, trace=trace)


__all__ = [
    "BacktrackResult",
    "InnerResult",
    "IterTrace",
    "IterationRecord",
    "OuterRecord",
    "SolveResult",
    "SolverConfig",
    "StepCandidate",
    "albedo_update",
    "alternating_solve",
    "descent_violations",
    "ipiano_inner",
    "lazy_backtracking",
    "prox_g",
    "step_parameters",
]

"""Configuration constants and environment bootstrap utilities."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Tuple

from dotenv import load_dotenv  # type: ignore[import-not-found]

PACKAGE_ROOT = Path(__file__).resolve().parent
PROJECT_ROOT = PACKAGE_ROOT.parent
ENV_PATH = PROJECT_ROOT / ".env"

# Solver defaults
DEFAULT_LAMBDA = 1e-6
DEFAULT_C = 0.01
DEFAULT_D = 1.0
DEFAULT_ETA = 1.2
DEFAULT_MU = 1.05
DEFAULT_BETA_CONSTANT = 0.5
DEFAULT_INNER_MAX_ITERS = 100
DEFAULT_OUTER_MAX_ITERS = 500
DEFAULT_REL_TOL = 1e-8
DEFAULT_L_INIT = 1.0

BETA_MODES: Tuple[str, ...] = ("adaptive", "constant")
GRADIENT_MODES: Tuple[str, ...] = ("approx", "exact")
DEFAULT_BETA_MODE = "adaptive"
DEFAULT_GRADIENT_MODE = "approx"

# Numerical guards
ALBEDO_EPSILON = 1e-12
ALBEDO_DENOMINATOR_GUARD = 1e-12
LIPSCHITZ_DIVERGENCE_CAP = 1e30
OBJECTIVE_FLOOR = 1e-20  # denominator floor of the relative-change test
DESCENT_TOLERANCE = 1e-10
BACKTRACKING_SLACK = 1e-13  # scaled by max(1, |f|)
CG_RTOL = 1e-10
CG_MAX_ITERS_PER_PIXEL = 10
POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_MAX_ITERS = 10000
NORMAL_UNIT_TOLERANCE = 1e-12
DENSE_ORACLE_MAX_PIXELS = 64
CAP_FACTOR = 1.5
MIN_IMAGES = 3
DEFAULT_LIGHT_ELEVATION_DEG = 45.0
DEFAULT_SCENE_ALBEDO = 0.8
SCENE_MAX_TILT_DEG = 42.0  # steepest default normal; below the light elevation

# File formats
PGM_MAXVAL = 65535
PFM_SCALE = -1.0
CSV_SIGNIFICANT_DIGITS = 17
IMAGE_GLOB = "*.pgm"

TRACE_COLUMNS: Tuple[str, ...] = (
    "k",
    "ell",
    "f_plus_g",
    "L",
    "alpha",
    "beta",
    "delta",
    "Delta",
    "H_delta",
    "q_dot_gradf",
)
OUTER_TRACE_COLUMNS: Tuple[str, ...] = ("k", "objective", "inner_iterations", "mae")

THREADS_ENV = "IPIANO_PS_THREADS"


def load_environment() -> None:
    """Load variables from an optional ``.env`` file (working directory first)."""
    for candidate in (Path.cwd() / ".env", ENV_PATH):
        if candidate.exists():
            load_dotenv(dotenv_path=candidate)
            return
    logging.getLogger(__name__).debug("No .env file found (checked %s)", ENV_PATH)


def default_threads() -> int:
    raw = str(os.getenv(THREADS_ENV) or "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logging.getLogger(__name__).warning(
            "Ignoring invalid %s=%r", THREADS_ENV, raw
        )
        return 1
    return max(1, value)

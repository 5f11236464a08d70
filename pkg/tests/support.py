import csv
import os
import sys
import types

import numpy as np

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

if "dotenv" not in sys.modules:
    try:
        import dotenv  # noqa: F401
    except ImportError:  # pragma: no cover - simple shim
        mock_dotenv = types.ModuleType("dotenv")

        def _load_dotenv(*args, **kwargs):
            return None

        setattr(mock_dotenv, "load_dotenv", _load_dotenv)  # type: ignore[attr-defined]
        sys.modules["dotenv"] = mock_dotenv

SLOW_TESTS = os.getenv("IPIANO_PS_SLOW_TESTS") == "1"

from ipiano_ps.services.core import Grid, LightMatrix, ring_lights  # noqa: E402
from ipiano_ps.services.diagnostics import SyntheticCase, synthesize  # noqa: E402
from ipiano_ps.services.energy import EnergyContext, build_context  # noqa: E402


def scene_case(kind="gaussian-bump", size=8, m=4, noise=0.0, seed=0, params=None) -> SyntheticCase:
    return synthesize(kind, Grid(size, size), ring_lights(m), noise, seed, params)


def context_for(case: SyntheticCase, lam=1e-6, albedo=None, z0=None, mask=None) -> EnergyContext:
    return build_context(
        case.images,
        case.lights,
        albedo if albedo is not None else case.albedo,
        z0 if z0 is not None else case.depth,
        lam,
        mask=mask,
        operator=case.operator,
    )


IDENTITY_LIGHTS = LightMatrix(np.eye(3))


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def sphere_cap_slope(radius, distance):
    """Analytic |grad z| of a sphere cap at a distance from its centre."""
    return float(distance / np.sqrt(radius**2 - distance**2))

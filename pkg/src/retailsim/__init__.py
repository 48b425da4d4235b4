"""Agent-based store simulation with proximity-collision analytics.

Modules: ``layout`` (store graph and routing), ``engine`` (the simulation),
``collisions`` (contact detection and the Poisson collision model),
``torus`` (flows and circle maps on the torus), ``baskets`` (basket
clustering into shopping journeys), ``stats`` (replicate sample sizes),
``experiment`` (parameter sweeps) and ``cli``.
"""

from __future__ import annotations

from ._accel import backend_name
from .engine import SimConfig, SimResult, run
from .features import FeatureFlags
from .layout import StoreLayout, bundled_layout_path, load_layout

__version__ = "0.1.0"

__all__ = [
    "FeatureFlags",
    "SimConfig",
    "SimResult",
    "StoreLayout",
    "backend_name",
    "bundled_layout_path",
    "load_layout",
    "run",
]

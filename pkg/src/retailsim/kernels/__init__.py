"""Hot inner loops, each with a numba and a pure-numpy implementation.

The active backend follows ``RETAILSIM_DISABLE_NUMBA`` (see ``retailsim._accel``).
Both backends are importable explicitly for equivalence tests and benchmarks.
"""

from __future__ import annotations

from types import ModuleType

from .._accel import HAVE_NUMBA, USE_NUMBA
from . import _numpy as numpy_backend

if HAVE_NUMBA:
    from . import _numba as numba_backend
else:  # pragma: no cover
    numba_backend = None

KERNEL_NAMES = (
    "pairs_within",
    "advance",
    "torus_gap",
    "hit_runs",
    "track_step",
    "countdown",
    "accumulate_timers",
    "proximity_step",
)


def get_backend(name: str | None = None) -> ModuleType:
    """Kernel module for ``name`` ("numba" or "numpy"); None means active."""
    if name is None:
        name = "numba" if USE_NUMBA else "numpy"
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba is not installed")
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


_active = get_backend()
pairs_within = _active.pairs_within
advance = _active.advance
torus_gap = _active.torus_gap
hit_runs = _active.hit_runs
track_step = _active.track_step
countdown = _active.countdown
accumulate_timers = _active.accumulate_timers
proximity_step = _active.proximity_step

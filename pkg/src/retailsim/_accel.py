"""Numba availability and the env switch that disables it.

Set ``RETAILSIM_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_disabled() -> bool:
    return os.environ.get("RETAILSIM_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

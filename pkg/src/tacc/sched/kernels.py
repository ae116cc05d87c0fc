"""Select the placement kernels: compiled extension if built, else pure Python.

Set ``TACC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

IMPLEMENTATION = "python"

if os.environ.get("TACC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    first_fit = _compiled.first_fit
    earliest_fit = _compiled.earliest_fit
    IMPLEMENTATION = "compiled"
else:
    first_fit = _kernels_py.first_fit
    earliest_fit = _kernels_py.earliest_fit

WIDTH = _kernels_py.WIDTH

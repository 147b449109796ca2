"""Kernel selection: compiled extension if importable, numpy fallback otherwise.

Set ``BGGPROLONG_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
propagate = _kernels_py.propagate

if os.environ.get("BGGPROLONG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        propagate = _compiled.propagate
        BACKEND = "cython"

__all__ = ["propagate", "BACKEND"]

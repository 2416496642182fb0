"""Select the compiled kernels when available, else the numpy fallback.

Set ``WICKAPPROX_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

NAME = "python"
kernels = _pykernels

if os.environ.get("WICKAPPROX_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        kernels = _ckernels
        NAME = "cython"

__all__ = ["kernels", "NAME"]

"""Kernel backend selection.

The hot forward/backward kernels exist twice: a compiled Cython core
(``modref._kernels._core``) and a pure-numpy twin with identical
signatures. Selection happens once at import:

  MODREF_KERNELS=auto      compiled if built, else numpy (default)
  MODREF_KERNELS=compiled  require the extension, fail loudly if missing
  MODREF_KERNELS=numpy     force the fallback

Determinism is guaranteed per backend, not across backends (reduction
order differs in the last ulp).
"""

import os

from . import numpy_backend

_requested = os.environ.get("MODREF_KERNELS", "auto").lower()
if _requested not in ("auto", "compiled", "numpy"):
    raise ImportError(f"MODREF_KERNELS must be auto, compiled or numpy, got {_requested!r}")

compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as compiled
    except ImportError:
        compiled = None
    if _requested == "compiled" and compiled is None:
        raise ImportError("MODREF_KERNELS=compiled but the extension is not built")

active = compiled if compiled is not None else numpy_backend


def backend_name():
    return active.name

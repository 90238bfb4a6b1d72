"""Backend selection: compiled extension when available, numpy otherwise.

Set ``CERFGP_PURE=1`` in the environment to force the pure-Python kernels
(useful for debugging and for the backend benchmark).
"""

import os

if os.environ.get("CERFGP_PURE", "").lower() in ("1", "true", "yes"):
    from . import _purecore as ops

    BACKEND = "python"
else:
    try:
        from . import _fastcore as ops  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _purecore as ops

        BACKEND = "python"

__all__ = ["ops", "BACKEND"]

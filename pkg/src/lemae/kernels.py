"""Backend selection for the hot loops.

The compiled extension is used when it was built and imports cleanly;
otherwise the numpy twin in ``_kernels_py`` takes over.  Setting
``LEMAE_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LEMAE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError as exc:  # extension not built
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
    else:
        _impl = _compiled
        BACKEND = "cython"

segment_shaping = _impl.segment_shaping
td_sweep = _impl.td_sweep
walk_advance = _impl.walk_advance


def backends() -> dict:
    """Both implementations keyed by name; ``cython`` only when it is built."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        out["cython"] = compiled
    return out

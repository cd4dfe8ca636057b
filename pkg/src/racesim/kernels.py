"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy
implementation is used. Setting ``RACESIM_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import logging
import os

from racesim import _pykernels

log = logging.getLogger(__name__)

if os.environ.get("RACESIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from racesim import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build environment
        log.debug("compiled kernels unavailable, using NumPy fallback")
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
rk4_step = _impl.rk4_step
raycast = _impl.raycast
count_neighbors = _impl.count_neighbors
knn = _impl.knn
poisson_mask = _impl.poisson_mask
scan_scores = _impl.scan_scores


def compiled_available() -> bool:
    try:
        from racesim import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True

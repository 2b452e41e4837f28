"""Numeric hot-loop kernels with a compiled core and a pure-Python fallback.

The Cython extension (ffrsim._kernels._core) is optional: if it was not
built, or FFRSIM_PURE_KERNELS is set, the pure implementations are used.
Both backends produce identical float64 results.
"""

import os

from ffrsim._kernels import _pure

BACKEND = "pure"

if not os.environ.get("FFRSIM_PURE_KERNELS"):
    try:
        from ffrsim._kernels import _core  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _core = None
else:
    _core = None

if BACKEND == "compiled":
    rainflow_halves = _core.rainflow_halves
    css_residuals = _core.css_residuals
    reflect_walk = _core.reflect_walk
else:
    rainflow_halves = _pure.rainflow_halves
    css_residuals = _pure.css_residuals
    reflect_walk = _pure.reflect_walk


def backends() -> dict:
    """Map of backend name to kernel namespace, for parity tests and benchmarks."""
    out = {"pure": _pure}
    if _core is not None:
        out["compiled"] = _core
    return out

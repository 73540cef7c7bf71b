"""Selects the ray-tracing backend at import time.

The compiled ``_raytrace`` extension is used when it was built; otherwise the
numpy implementation is used. Set ``ECHOFORGE_NO_EXT=1`` to force the
fallback.
"""
from __future__ import annotations

import os

from . import _raytrace_py

try:
    if os.environ.get("ECHOFORGE_NO_EXT", "") == "1":
        raise ImportError("compiled backend disabled by ECHOFORGE_NO_EXT")
    from . import _raytrace as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def trace(*args, backend: str | None = None, **kwargs):
    """Dispatch to the selected backend (``"compiled"`` or ``"python"``)."""
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled ray tracer not available")
        return _compiled.trace(*args, **kwargs)
    if backend == "python":
        return _raytrace_py.trace(*args, **kwargs)
    raise ValueError(f"unknown backend {backend!r}")


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]

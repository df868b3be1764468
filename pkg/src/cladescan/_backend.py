"""Select the numeric kernel backend at import time.

The compiled Cython extension is preferred when it imports cleanly; the
numpy implementation is a drop-in fallback.  Set CLADESCAN_BACKEND to
"python" or "compiled" to force a choice (forcing "compiled" raises if
the extension is unavailable).
"""

from __future__ import annotations

import os

_forced = os.environ.get("CLADESCAN_BACKEND", "").strip().lower()

if _forced == "python":
    from . import _kernels_py as kernels
elif _forced == "compiled":
    from . import _kernels as kernels  # type: ignore[no-redef]
elif _forced:
    raise ImportError(f"unknown CLADESCAN_BACKEND value: {_forced!r}")
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

BACKEND = kernels.BACKEND


def get_backend(name: str | None = None):
    """Return a kernels module by name ("python", "compiled", or None=active)."""
    if name is None:
        return kernels
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")

"""Grid kernel backend selection.

The compiled extension (_gridcore) is used when available; otherwise the
pure-Python reference implementation. Both produce bit-identical results.
Set BIMODAL_EXPLORER_BACKEND=python or =fast to force a choice (forcing
"fast" raises if the extension is missing).
"""

from __future__ import annotations

import os

from bimodal_explorer.kernels import reference as _reference

_FORCED = os.environ.get("BIMODAL_EXPLORER_BACKEND", "").strip().lower()

_impl = None
_name = "python"

if _FORCED in ("", "fast"):
    try:
        from bimodal_explorer.kernels import _gridcore as _impl  # type: ignore

        _name = "fast"
    except ImportError:
        if _FORCED == "fast":
            raise ImportError(
                "BIMODAL_EXPLORER_BACKEND=fast but the compiled extension is "
                "not built; run `pip install -e . --no-build-isolation`"
            )
        _impl = _reference
elif _FORCED == "python":
    _impl = _reference
else:
    raise ValueError(
        f"unknown BIMODAL_EXPLORER_BACKEND={_FORCED!r}; use 'fast' or 'python'"
    )

if _impl is None:
    _impl = _reference

raycast_sense = _impl.raycast_sense
segment_all_free = _impl.segment_all_free
segment_clear = _impl.segment_clear
count_visible = _impl.count_visible
astar_grid = _impl.astar_grid


def backend_name() -> str:
    return _name


def get_backend(name: str):
    """Return the named backend module (for benchmarks and equivalence tests)."""
    if name == "python":
        return _reference
    if name == "fast":
        from bimodal_explorer.kernels import _gridcore

        return _gridcore
    raise ValueError(f"unknown backend {name!r}")

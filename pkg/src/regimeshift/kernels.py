"""Kernel backend selection.

The compiled extension is preferred; set ``REGIMESHIFT_BACKEND=python`` to
force the numpy implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("REGIMESHIFT_BACKEND", "").lower()

if _forced == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py

PinnKernel = _impl.PinnKernel
adam_update = _impl.adam_update
param_offsets = _kernels_py.param_offsets
BACKEND: str = _impl.BACKEND


def available_backends() -> dict[str, object]:
    out: dict[str, object] = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
        out["cython"] = _kernels
    except ImportError:
        pass
    return out

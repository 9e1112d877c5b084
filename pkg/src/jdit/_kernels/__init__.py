"""Hot-kernel backend selection.

The compiled extension is preferred when importable; the numpy reference
implementation is the fallback. ``JDIT_KERNELS=native`` forces the compiled
backend (raising if missing), ``JDIT_KERNELS=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import reference

_requested = os.environ.get("JDIT_KERNELS", "auto").strip().lower()

if _requested in ("auto", "", "native", "c"):
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        if _requested in ("native", "c"):
            raise
        _impl = reference
        BACKEND = "python"
elif _requested in ("python", "py"):
    _impl = reference
    BACKEND = "python"
else:
    raise ValueError(f"JDIT_KERNELS={_requested!r}: expected auto, native, or python")

forward_attention_forward = _impl.forward_attention_forward
forward_attention_backward = _impl.forward_attention_backward
ctc_forward = _impl.ctc_forward
ctc_backward = _impl.ctc_backward


def backend_name() -> str:
    """Which implementation is active: ``native`` or ``python``."""
    return BACKEND

"""Kernel backend selection.

The compiled extension is preferred; ``EPCMIG_PURE_PYTHON=1`` forces the
pure-Python fallback (also used automatically when the extension is absent).
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("EPCMIG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

EventHeap = _impl.EventHeap
scan_probes = _impl.scan_probes


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found

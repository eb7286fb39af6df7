"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``RANDBASIS_BACKEND=python`` to force the fallback.
"""

import importlib
import os

from randbasis import _fallback

_compiled = None
if os.environ.get("RANDBASIS_BACKEND", "").lower() != "python":
    try:
        _compiled = importlib.import_module("randbasis._kernels")
    except ImportError:
        _compiled = None

kernels = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"


def get_kernels(name=None):
    """Return the kernel module for ``name`` ('compiled' or 'python'), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; build the extension")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None

"""Rasterizer kernel selection.

The compiled Cython kernel is preferred; the numpy fallback keeps the
package functional in pure-Python installs. STROKEOPT_KERNEL=numpy|cython
forces a backend (cython raises if the extension is missing).
"""

import os

from . import numpy_kernel

try:
    from . import cykernel
except ImportError:
    cykernel = None


def _select():
    choice = os.environ.get("STROKEOPT_KERNEL", "auto").lower()
    if choice == "numpy":
        return numpy_kernel, "numpy"
    if choice == "cython":
        if cykernel is None:
            raise ImportError("STROKEOPT_KERNEL=cython but the compiled kernel is not built")
        return cykernel, "cython"
    if choice != "auto":
        raise ValueError(f"STROKEOPT_KERNEL must be auto, numpy or cython, got {choice!r}")
    if cykernel is not None:
        return cykernel, "cython"
    return numpy_kernel, "numpy"


active, active_name = _select()

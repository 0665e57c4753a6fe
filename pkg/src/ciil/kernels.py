"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy/scipy
fallback is used. Set ``CIIL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("CIIL_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend

BACKEND = _active.BACKEND
sosfilt_inplace = _active.sosfilt_inplace
tdpsd_batch = _active.tdpsd_batch


def available_backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out

"""Kernel backend selection.

The compiled extension (``_ckernels``) is used when it imported cleanly;
otherwise the pure-numpy fallback (``_pykernels``) takes over. Set
``TDET_BACKEND=python`` to force the fallback or ``TDET_BACKEND=c`` to
require the extension (ImportError if it is missing).
"""

from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("TDET_BACKEND", "").strip().lower()

if _requested in ("python", "py"):
    _impl = _pykernels
elif _requested in ("c", "cython"):
    from . import _ckernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.NAME
HAVE_EXTENSION = BACKEND == "c"


def get_backend(name: str):
    """Return a backend module by name ('python' or 'c'), for benchmarks."""
    if name in ("python", "py"):
        return _pykernels
    if name in ("c", "cython"):
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
deform_conv2d_forward = _impl.deform_conv2d_forward
deform_conv2d_backward = _impl.deform_conv2d_backward

# float64 inputs always run on the numpy path; the extension is float32-only.
py_conv2d_forward = _pykernels.conv2d_forward
py_conv2d_backward = _pykernels.conv2d_backward
py_conv2d_backward_sparse = _pykernels.conv2d_backward_sparse
py_deform_conv2d_forward = _pykernels.deform_conv2d_forward
py_deform_conv2d_backward = _pykernels.deform_conv2d_backward

"""Backend selection for the component reduction.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``CAUSALVD_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation is used. Both expose
``reduce_components(m, pA, pZ, v, w)`` and ``reduce_standard``, which
builds the cells from structured linear predictors on the fly.
"""

import os

from . import _pykernels

_force_py = os.environ.get("CAUSALVD_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError
    from . import _ckernels as _backend

    BACKEND = "cython"
except ImportError:
    _backend = _pykernels
    BACKEND = "python"

reduce_components = _backend.reduce_components
reduce_standard = _backend.reduce_standard
python_reduce_components = _pykernels.reduce_components
python_reduce_standard = _pykernels.reduce_standard


def compiled_reduce_components():
    """The compiled kernel, or ``None`` if the extension is not built."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels.reduce_components


def compiled_reduce_standard():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels.reduce_standard

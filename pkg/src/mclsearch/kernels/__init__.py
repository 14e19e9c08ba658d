"""Convolution kernels for the task head.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``MCLSEARCH_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _conv_py

if os.environ.get("MCLSEARCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _conv_py
    BACKEND = "python"
else:
    try:
        from . import _conv as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _conv_py
        BACKEND = "python"

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward

__all__ = ["BACKEND", "conv3x3_forward", "conv3x3_backward"]

"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``SIGNFUSION_NUMBA`` is not set to a false value (``0``, ``false``,
``no``, ``off``). The choice is made once, at import time.
"""
import os

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_impl = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SIGNFUSION_NUMBA", "1").strip().lower() not in (
    "0", "false", "no", "off")

_impl = numba_impl if USE_NUMBA else numpy_impl

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
bilinear_resize = _impl.bilinear_resize
rotate_zoom = _impl.rotate_zoom
rmsprop_update = _impl.rmsprop_update

BACKEND = "numba" if USE_NUMBA else "numpy"

__all__ = [
    "BACKEND", "HAVE_NUMBA", "USE_NUMBA", "numpy_impl", "numba_impl",
    "conv2d_forward", "conv2d_backward", "maxpool2_forward", "maxpool2_backward",
    "bilinear_resize", "rotate_zoom", "rmsprop_update",
]

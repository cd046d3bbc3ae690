"""Pick the compiled core when it is importable, else the pure-Python twin.

Set ``EBF_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from ebf import _purepy

if os.environ.get("EBF_PURE_PYTHON"):
    _impl = _purepy
else:
    try:
        from ebf import _speedups as _impl
    except ImportError:
        _impl = _purepy

BACKEND = "compiled" if _impl is not _purepy else "python"

fifo_schedule = _impl.fifo_schedule
conv2d_valid = _impl.conv2d_valid
pool2d = _impl.pool2d

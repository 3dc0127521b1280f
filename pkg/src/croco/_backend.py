"""Select the kernel implementation at import time.

The compiled ``_ckernel`` module is preferred. Setting the environment
variable ``CROCO_PURE_PYTHON`` to a non-empty value other than ``0`` forces
the numpy fallback, which is also used when the extension is not built.
"""

import os

from . import _pykernel

kernel = _pykernel
if os.environ.get("CROCO_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernel as kernel  # type: ignore[no-redef]
    except ImportError:
        kernel = _pykernel

BACKEND = kernel.NAME


def compiled_available():
    try:
        from . import _ckernel  # noqa: F401
    except ImportError:
        return False
    return True

"""Kernel backend selection.

Prefers the compiled extension; falls back to the NumPy implementation when
the extension is missing or DSFC_PURE_PYTHON=1 is set. Import the selected
module as ``from dsfc._backend import kernels``.
"""

import os

if os.environ.get("DSFC_PURE_PYTHON"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND

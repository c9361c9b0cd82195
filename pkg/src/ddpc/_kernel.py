"""Select the ADMM inner-loop kernel at import time.

The compiled Cython kernel is preferred; the pure NumPy twin is used when the
extension is unavailable or when DDPC_PURE_PYTHON is set in the environment.
Both expose the same admm_chunk signature and semantics.
"""

import os

if os.environ.get("DDPC_PURE_PYTHON"):
    from . import _admm_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _admm_cy as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import _admm_py as _impl

        BACKEND = "python"

admm_chunk = _impl.admm_chunk

"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``RHOBH_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("RHOBH_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

mixture_rows = _impl.mixture_rows
mixture_points = _impl.mixture_points
ecdf_weighted_sum = _impl.ecdf_weighted_sum

__all__ = ["BACKEND", "mixture_rows", "mixture_points", "ecdf_weighted_sum"]

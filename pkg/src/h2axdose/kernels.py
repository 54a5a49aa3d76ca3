"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``H2AXDOSE_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _pykernels

BACKEND = "python"
mixture_loglik = _pykernels.mixture_loglik

if not os.environ.get("H2AXDOSE_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        mixture_loglik = _ckernels.mixture_loglik
        BACKEND = "cython"

row_loglik = _pykernels.row_loglik

__all__ = ["BACKEND", "mixture_loglik", "row_loglik"]

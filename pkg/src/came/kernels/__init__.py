"""Corpus scoring kernels with backend selection at import time.

The compiled extension (built from _ck.pyx) is preferred; the numpy fallback
in _py is used when the extension is missing or CAME_PURE_PYTHON is set.
Both backends implement the same contracts and agree to float64 rounding.
"""

from __future__ import annotations

import os

from . import _py

BACKEND = "numpy"
_impl = _py

if not os.environ.get("CAME_PURE_PYTHON"):
    try:
        from . import _ck

        _impl = _ck
        BACKEND = "compiled"
    except ImportError:
        pass

sparse_dot_scores = _impl.sparse_dot_scores
maxsim_scores = _impl.maxsim_scores


def available_backends() -> dict:
    """Every importable backend module, for equivalence tests and benchmarks."""
    backends = {"numpy": _py}
    try:
        from . import _ck as ck

        backends["compiled"] = ck
    except ImportError:
        pass
    return backends

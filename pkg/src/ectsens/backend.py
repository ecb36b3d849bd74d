"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the numpy
reference implementation. ECTSENS_BACKEND=python|compiled forces a choice
(forcing "compiled" raises if the extension is missing).
"""
from __future__ import annotations

import os

from .exceptions import ConfigError

_requested = os.environ.get("ECTSENS_BACKEND", "auto").strip().lower()

if _requested in ("auto", ""):
    try:
        from . import _fastpath as _impl
        BACKEND = "compiled"
    except ImportError:
        from . import _reference as _impl
        BACKEND = "python"
elif _requested in ("compiled", "c", "cython"):
    from . import _fastpath as _impl
    BACKEND = "compiled"
elif _requested in ("python", "numpy", "reference"):
    from . import _reference as _impl
    BACKEND = "python"
else:
    raise ConfigError(
        f"ECTSENS_BACKEND={_requested!r} not recognized; use 'auto', "
        "'compiled', or 'python'")

logistic_irls = _impl.logistic_irls
weighted_linreg = _impl.weighted_linreg
em_mixture = _impl.em_mixture

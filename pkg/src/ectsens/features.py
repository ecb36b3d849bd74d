"""Named covariate feature maps.

Nuisance models are fit on phi(x) for a named map phi. "identity" uses the
covariates as recorded. "sqsin" applies the bent basis
(x^2 + 2*sin(x) - 1.5)/sqrt(2) coordinate-wise to non-binary columns and
passes binary columns through; swapping the two maps is how a correctly
specified fit is degraded to a misspecified one (and vice versa) in studies
where the data were generated on the bent scale.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigError

_SQRT2 = np.sqrt(2.0)

FEATURE_MAP_NAMES = ("identity", "sqsin")


def binary_column_mask(x: np.ndarray) -> np.ndarray:
    """True for columns whose values all lie in {0, 1}.

    Detected once on the fit data and stored, so the same columns stay exempt
    from bending for every later prediction.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.array([np.isin(x[:, j], (0.0, 1.0)).all()
                     for j in range(x.shape[1])])


def sqsin_bend(x: np.ndarray, binary_mask: np.ndarray | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = (x * x + 2.0 * np.sin(x) - 1.5) / _SQRT2
    if binary_mask is not None:
        mask = np.asarray(binary_mask, dtype=bool)
        out[..., mask] = x[..., mask]
    return out


def apply_feature_map(name: str, x: np.ndarray,
                      binary_mask: np.ndarray | None = None) -> np.ndarray:
    if name == "identity":
        return np.asarray(x, dtype=np.float64)
    if name == "sqsin":
        return sqsin_bend(x, binary_mask)
    raise ConfigError(
        f"unknown feature map {name!r}; available: {FEATURE_MAP_NAMES}")

"""Tsallis entropy family.

The regularizer used throughout the package is

    l_p(z) = (1 - z**(p-1)) / (p-1)   for p > 1,
    l_1(z) = -log(z)                  (Shannon limit),

applied pointwise to policy densities. Entropy index p and temperature
gamma travel together because every downstream formula needs both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this distance from 1 the exponent 1/(p-1) is numerically useless;
# such p are snapped to the Shannon branch.
SHANNON_SNAP = 1e-8


@dataclass(frozen=True)
class EntropyParams:
    """Entropy index and temperature shared by policies and learners.

    Parameters
    ----------
    p : float
        Tsallis order, >= 1. Values in (1, 1 + 1e-8) are stored as 1.0.
    gamma : float
        Temperature weighting the entropy term in the objective, > 0.
    """

    p: float
    gamma: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.p) or self.p < 1.0:
            raise ValueError(f"entropy index p must be >= 1, got {self.p}")
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise ValueError(f"temperature gamma must be > 0, got {self.gamma}")
        if 1.0 < self.p < 1.0 + SHANNON_SNAP:
            object.__setattr__(self, "p", 1.0)

    @property
    def shannon(self) -> bool:
        return self.p == 1.0


def _check_positive(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0) or not np.all(np.isfinite(z)):
        raise ValueError("tsallis entropy requires strictly positive arguments")
    return z


def tsallis(params: EntropyParams, z):
    """Evaluate l_p(z) elementwise; z must be strictly positive."""
    z = _check_positive(z)
    if params.shannon:
        out = -np.log(z)
    else:
        out = (1.0 - z ** (params.p - 1.0)) / (params.p - 1.0)
    return out if out.shape else float(out)


def tsallis_deriv(params: EntropyParams, z):
    """Evaluate l_p'(z) = -z**(p-2) (or -1/z for p = 1) elementwise."""
    z = _check_positive(z)
    if params.shannon:
        out = -1.0 / z
    else:
        out = -(z ** (params.p - 2.0))
    return out if out.shape else float(out)

"""Named parameter vectors shared by the oracles and the learners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OutOfDomainError(ValueError):
    """Parameter values outside the domain of the parameterization.

    Raised when e.g. an induced curvature has the wrong sign; learners
    treat this as a rejected update step.
    """


class UnsupportedEntropyError(ValueError):
    """The requested entropy index has no closed form for this problem."""


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Ordered, named parameter values with positivity flags.

    Flagged entries are constrained to stay positive; ``project`` clamps
    them to a floor after gradient updates.
    """

    names: tuple
    values: np.ndarray
    positive: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", np.array(self.values, dtype=float))
        object.__setattr__(self, "positive", tuple(bool(f) for f in self.positive))
        if not (len(self.names) == len(self.values) == len(self.positive)):
            raise ValueError("names, values and positivity flags must align")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, key):
        if isinstance(key, str):
            key = self.names.index(key)
        return float(self.values[key])

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def with_values(self, values) -> "ParamVector":
        return ParamVector(self.names, values, self.positive)

    def project(self, floor: float = 1e-8) -> "ParamVector":
        """Clamp flagged entries to at least ``floor``."""
        vals = self.values.copy()
        mask = np.array(self.positive)
        vals[mask] = np.maximum(vals[mask], floor)
        return self.with_values(vals)

"""The straight-line interpolation path and its guidance coefficient.

The package works on the path z_t = (1 - t) z0 + t z1: coefficient
alpha(t) = 1 - t on the data side, sigma(t) = t on the noise side, constant
derivatives. Time is clamped to [t_min, t_max] wherever a formula divides by
t or 1 - t; the clamp window defaults to [1e-3, 1 - 1e-3].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

T_MIN_DEFAULT = 1e-3
T_MAX_DEFAULT = 1.0 - 1e-3


def _check_unit_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True)
class PathSchedule:
    """Straight-line path coefficients with a clamped working window.

    Only the straight-line (conditional optimal transport) path is
    implemented; the four coefficient methods exist so code written against
    them stays correct if another path is ever added.
    """

    t_min: float = T_MIN_DEFAULT
    t_max: float = T_MAX_DEFAULT

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(
                f"need 0 < t_min < t_max < 1, got [{self.t_min}, {self.t_max}]"
            )

    def alpha(self, t: float) -> float:
        return 1.0 - _check_unit_time(t)

    def sigma(self, t: float) -> float:
        return _check_unit_time(t)

    def alpha_dot(self, t: float) -> float:
        _check_unit_time(t)
        return -1.0

    def sigma_dot(self, t: float) -> float:
        _check_unit_time(t)
        return 1.0

    def clamp(self, t: float) -> float:
        """Clamp t into [t_min, t_max]. Callers count clamp events."""
        return min(max(float(t), self.t_min), self.t_max)

    def guidance_coefficient(self, t: float) -> float:
        """Strength t/(1-t) of the measurement correction, at clamped t.

        Strictly increasing on the clamped window; finite at both ends
        because the clamp keeps 1 - t away from zero.
        """
        tc = self.clamp(t)
        return tc / (1.0 - tc)

    def interpolate(self, z0, z1, t: float):
        """(1-t) z0 + t z1. Exact at both endpoints, no clamping."""
        t = _check_unit_time(t)
        z0 = np.asarray(z0, dtype=np.float64)
        z1 = np.asarray(z1, dtype=np.float64)
        if z0.shape != z1.shape:
            raise ShapeMismatchError(
                f"endpoint shapes differ: {z0.shape} vs {z1.shape}"
            )
        if t == 0.0:
            return z0.copy()
        if t == 1.0:
            return z1.copy()
        return (1.0 - t) * z0 + t * z1

"""Meeting probability between idle vehicles and passengers within a zone."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

# Guards q / y against floating underflow only; y == 0 is handled separately.
MIN_SUPPLY = 1e-12


@dataclass(frozen=True)
class MatchingParams:
    theta1: float = 2.0  # coefficient on the oversupplied (phi > threshold) branch
    theta2: float = 2.0
    phi_threshold: float = 1.0

    def __post_init__(self) -> None:
        if not (self.theta1 > 0 and self.theta2 > 0 and self.phi_threshold > 0):
            raise ValueError(f"matching parameters must be positive: {self}")

    @property
    def continuous(self) -> bool:
        return math.isclose(self.theta2, self.theta1 * self.phi_threshold, rel_tol=1e-12)

    def check_continuity(self) -> bool:
        if not self.continuous:
            warnings.warn(f"discontinuous matching function: theta2={self.theta2} != "
                          f"theta1*phi_threshold={self.theta1 * self.phi_threshold}", stacklevel=2)
        return self.continuous


def meeting_probability(q: float, y: float, params: MatchingParams) -> float:
    """Probability that an idle vehicle picks up a passenger after one step of search.

    ``q`` is the passenger arrival count and ``y`` the idle vehicle mass in the
    zone. With ``phi = q / y`` the result is ``1 - exp(-theta1 phi^2)`` above
    the threshold and ``1 - exp(-theta2 phi)`` at or below it. No idle supply
    means no meetings, so ``y == 0`` returns 0.
    """
    if q < 0 or y < 0:
        raise ValueError(f"negative demand or supply: q={q}, y={y}")
    if y == 0:
        return 0.0
    phi = q / max(y, MIN_SUPPLY)
    if phi > params.phi_threshold:
        return -math.expm1(-params.theta1 * phi * phi)
    return -math.expm1(-params.theta2 * phi)

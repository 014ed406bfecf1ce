"""Penalty norm enumeration."""

from enum import Enum


class PenaltyNorm(str, Enum):
    """Coefficient penalties ||theta||_a^a / a."""

    L1 = "l1"
    L2 = "l2"

    @property
    def exponent(self) -> int:
        """The exponent a of the penalty."""
        return 1 if self is PenaltyNorm.L1 else 2

"""Estimand enumeration."""

from enum import Enum


class Estimand(str, Enum):
    """Weighted average treatment effects indexed by the Beta family."""

    ATE = "ATE"
    ATC = "ATC"
    ATT = "ATT"
    OWATE = "OWATE"
    CUSTOM = "CUSTOM"

    @property
    def alpha_beta(self) -> tuple[float, float]:
        """The (alpha, beta) pair of a named estimand.

        Returns:
            The Beta family exponents

        Raises:
            ValueError: For the custom estimand, which has no fixed pair
        """
        pairs = {
            Estimand.ATE: (-1.0, -1.0),
            Estimand.ATC: (-1.0, 0.0),
            Estimand.ATT: (0.0, -1.0),
            Estimand.OWATE: (0.0, 0.0),
        }
        if self not in pairs:
            raise ValueError("Custom estimand has no fixed (alpha, beta)")
        return pairs[self]

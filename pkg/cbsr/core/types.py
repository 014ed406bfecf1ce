"""Shared array type aliases."""

from collections.abc import Callable

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# Outcome regression evaluated on a covariate matrix
OutcomeFunction = Callable[[FloatArray], FloatArray]

"""Observational dataset container and CSV ingestion."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cbsr.core.errors import DataError
from cbsr.core.types import FloatArray, IntArray


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, binary treatment and optional outcomes for n units."""

    x: FloatArray
    t: IntArray
    y: FloatArray | None = None
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        """Validate shapes and values and freeze the arrays."""
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, np.newaxis]
        if x.ndim != 2:
            raise DataError("covariates must be a matrix")
        n = x.shape[0]
        if n < 2:
            raise DataError("a dataset needs at least 2 units")
        if not np.all(np.isfinite(x)):
            row = int(np.argwhere(~np.isfinite(x))[0][0]) + 1
            raise DataError("covariates contain non-finite values", row=row)

        t_raw = np.asarray(self.t)
        if t_raw.shape != (n,):
            raise DataError(f"treatment vector has shape {t_raw.shape}, expected ({n},)")
        bad = ~np.isin(t_raw, (0, 1))
        if np.any(bad):
            raise DataError("treatment values must be 0 or 1", row=int(np.argmax(bad)) + 1)
        t = t_raw.astype(np.int64)

        y = None
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64)
            if y.shape != (n,):
                raise DataError(f"outcome vector has shape {y.shape}, expected ({n},)")
            if not np.all(np.isfinite(y)):
                raise DataError(
                    "outcomes contain non-finite values", row=int(np.argmax(~np.isfinite(y))) + 1
                )

        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(columns) != x.shape[1]:
            raise DataError(f"{len(columns)} column names for {x.shape[1]} covariates")

        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "y", None if y is None else _frozen(y))
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        """Number of units."""
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        """Number of covariates."""
        return int(self.x.shape[1])

    @property
    def n_treated(self) -> int:
        """Number of treated units."""
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        """Number of control units."""
        return self.n - self.n_treated

    def require_both_groups(self) -> None:
        """Ensure both treatment groups are non-empty.

        Raises:
            DataError: If either group is empty
        """
        if self.n_treated == 0 or self.n_control == 0:
            raise DataError("both treatment groups must be non-empty to fit a propensity model")

    def require_outcome(self) -> FloatArray:
        """Return the outcome vector.

        Returns:
            Outcomes

        Raises:
            DataError: If the dataset has no outcomes
        """
        if self.y is None:
            raise DataError("this operation needs an outcome column")
        return self.y

    def subset(self, index: np.ndarray) -> "Dataset":
        """Rows selected by an index or boolean mask.

        Args:
            index: Integer positions or boolean mask

        Returns:
            A new dataset with the selected rows
        """
        return Dataset(
            x=self.x[index],
            t=self.t[index],
            y=None if self.y is None else self.y[index],
            columns=self.columns,
        )


def _parse_column(frame: pd.DataFrame, name: str) -> FloatArray:
    cells = frame[name].to_numpy(dtype=str)
    try:
        values = np.asarray(cells, dtype=np.float64)
    except ValueError:
        values = np.empty(len(cells), dtype=np.float64)
        for i, cell in enumerate(cells):
            try:
                values[i] = float(cell)
            except ValueError:
                label = "missing value" if not cell.strip() else f"non-numeric value '{cell}'"
                raise DataError(label, row=i + 1, column=name) from None
    if not np.all(np.isfinite(values)):
        row = int(np.argmax(~np.isfinite(values))) + 1
        raise DataError("non-finite value", row=row, column=name)
    return values


def load_csv(
    path: str | Path, treatment_col: str = "t", outcome_col: str | None = None
) -> Dataset:
    """Read a comma separated file with a header row.

    Every column other than the treatment and outcome columns becomes a covariate,
    in file order.

    Args:
        path: CSV file, UTF-8, ``.`` decimal point
        treatment_col: Name of the 0/1 treatment column
        outcome_col: Name of the outcome column, if any

    Returns:
        The parsed dataset

    Raises:
        DataError: On a missing column or an invalid cell
    """
    frame = pd.read_csv(
        Path(path), dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True
    )
    for name in (treatment_col, outcome_col):
        if name is not None and name not in frame.columns:
            raise DataError(f"missing column '{name}'", column=name)

    t_float = _parse_column(frame, treatment_col)
    bad = ~np.isin(t_float, (0.0, 1.0))
    if np.any(bad):
        row = int(np.argmax(bad)) + 1
        raise DataError(
            f"treatment value {t_float[row - 1]:g} is not 0 or 1", row=row, column=treatment_col
        )

    y = _parse_column(frame, outcome_col) if outcome_col is not None else None
    covariates = [c for c in frame.columns if c not in {treatment_col, outcome_col}]
    if not covariates:
        raise DataError("no covariate columns")
    x = np.column_stack([_parse_column(frame, c) for c in covariates])

    return Dataset(x=x, t=t_float.astype(np.int64), y=y, columns=tuple(covariates))


def write_csv(
    ds: Dataset, path: str | Path, treatment_col: str = "t", outcome_col: str = "y"
) -> None:
    """Write a dataset so that ``load_csv`` reproduces it bit-exactly.

    Args:
        ds: Dataset to write
        path: Destination file
        treatment_col: Header for the treatment column
        outcome_col: Header for the outcome column (written only when outcomes exist)
    """
    frame = pd.DataFrame(ds.x, columns=list(ds.columns))
    frame.insert(0, treatment_col, ds.t)
    if ds.y is not None:
        frame.insert(1, outcome_col, ds.y)
    frame.to_csv(Path(path), index=False, float_format="%.17g", encoding="utf-8")

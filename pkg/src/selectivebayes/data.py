"""Core data containers: standardized design matrices and selectively
labeled observations (outcome observed only where the decision was 1)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DesignMatrix", "ObservedData", "add_interactions"]


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    """n x d feature matrix with an explicit intercept column.

    Non-intercept columns must be standardized (mean 0, sd 1); the matrix
    must be full column rank.  Validation happens at construction.
    """

    values: np.ndarray
    column_names: tuple[str, ...]
    intercept_index: int = 0
    # held-out splits are standardized with training statistics, so their
    # columns are not exactly mean-0/sd-1; they set this flag to False
    standardized: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if v.ndim != 2:
            raise DataError("design matrix must be 2-D")
        n, d = v.shape
        if len(self.column_names) != d:
            raise DataError("column_names length does not match matrix width")
        if not (0 <= self.intercept_index < d):
            raise DataError("intercept_index out of range")
        if not np.all(np.isfinite(v)):
            raise DataError("design matrix contains non-finite entries")
        if not np.all(v[:, self.intercept_index] == 1.0):
            raise DataError("intercept column must be identically 1")
        for j in range(d):
            if j == self.intercept_index or not self.standardized:
                continue
            col = v[:, j]
            if abs(col.mean()) >= 1e-8:
                raise DataError(f"column {self.column_names[j]!r} is not mean-centered")
            if abs(col.std() - 1.0) >= 1e-6:
                raise DataError(f"column {self.column_names[j]!r} does not have unit sd")
        sv = np.linalg.svd(v, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise DataError("design matrix is rank deficient")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ObservedData:
    """Design matrix plus testing decisions t and outcomes y.

    y[i] is meaningful only where t[i] is True; untested entries are NaN.
    y may be binary (Bernoulli-sigmoid models) or real-valued (Heckman).
    """

    x: DesignMatrix
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=bool)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        n = self.x.n
        if t.shape != (n,) or y.shape != (n,):
            raise DataError("t and y must be n-vectors")
        if n < self.x.d + 2:
            raise DataError("need at least d + 2 rows")
        if np.any(np.isnan(y[t])):
            raise DataError("y missing on tested rows")
        if np.any(~np.isnan(y[~t])):
            raise DataError("y present on untested rows")

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def n_tested(self) -> int:
        return int(self.t.sum())

    def y_tested(self) -> np.ndarray:
        return self.y[self.t]


def add_interactions(x: DesignMatrix) -> DesignMatrix:
    """Append standardized pairwise products of all non-intercept columns."""
    v = x.values
    keep = [j for j in range(x.d) if j != x.intercept_index]
    cols, names = [v], list(x.column_names)
    for a in range(len(keep)):
        for b in range(a + 1, len(keep)):
            ja, jb = keep[a], keep[b]
            prod = v[:, ja] * v[:, jb]
            sd = prod.std()
            if sd == 0:
                raise DataError("constant interaction column")
            cols.append(((prod - prod.mean()) / sd)[:, None])
            names.append(f"{x.column_names[ja]}*{x.column_names[jb]}")
    return DesignMatrix(np.hstack(cols), tuple(names), x.intercept_index)

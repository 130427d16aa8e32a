"""CSV ingestion: header row with columns ``t`` (0/1), ``y`` (0/1, empty
where untested), and feature columns.  The intercept is never stored in the
file; it is prepended here after standardization."""

from __future__ import annotations

import csv
import warnings

import numpy as np

from .data import DataError, DesignMatrix, ObservedData

__all__ = ["IngestWarning", "ingest_csv", "write_csv", "train_test_split"]


class IngestWarning(UserWarning):
    pass


def _read_table(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file: header row required") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    if "t" not in header or "y" not in header:
        raise DataError("header must contain 't' and 'y' columns")
    return header, rows


def ingest_csv(path, split=None, split_seed: int = 0):
    """Load a dataset, standardize features, and prepend the intercept.

    Rows recorded as untested but carrying a positive outcome are regrouped
    as untested (outcome discarded) with a counted warning.  Missing values
    anywhere else raise an error listing the offending row indices.

    With ``split`` set to a fraction in (0, 1), returns ``(train, test)``
    split at that fraction by a seeded shuffle; feature standardization
    uses the training statistics for both pieces.  Otherwise returns a
    single ObservedData.
    """
    header, rows = _read_table(path)
    t_col = header.index("t")
    y_col = header.index("y")
    feature_cols = [j for j in range(len(header)) if j not in (t_col, y_col)]

    n = len(rows)
    if n == 0:
        raise DataError("no data rows")
    t = np.zeros(n, dtype=bool)
    y = np.full(n, np.nan)
    feats = np.empty((n, len(feature_cols)))
    missing: list[int] = []
    regrouped = 0
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        t_raw = row[t_col].strip()
        if t_raw not in ("0", "1"):
            raise DataError(f"row {i}: t must be 0 or 1, got {t_raw!r}")
        t[i] = t_raw == "1"
        y_raw = row[y_col].strip()
        if t[i]:
            if y_raw == "":
                missing.append(i)
            elif y_raw not in ("0", "1"):
                raise DataError(f"row {i}: y must be 0, 1, or empty, got {y_raw!r}")
            else:
                y[i] = float(y_raw)
        elif y_raw == "1":
            # recorded as untested yet positive: grouped with the untested
            regrouped += 1
        elif y_raw not in ("", "0"):
            raise DataError(f"row {i}: y must be 0, 1, or empty, got {y_raw!r}")
        for k, j in enumerate(feature_cols):
            cell = row[j].strip()
            if cell == "":
                missing.append(i)
                feats[i, k] = 0.0
            else:
                feats[i, k] = float(cell)
    if missing:
        raise DataError(f"missing values in rows {sorted(set(missing))}")
    if regrouped:
        warnings.warn(
            f"regrouped {regrouped} rows with t=0, y=1 as untested",
            IngestWarning,
            stacklevel=2,
        )

    names = tuple(["const"] + [header[j] for j in feature_cols])
    if split is None:
        values = _standardize(feats, feats, header, feature_cols)
        x = DesignMatrix(np.column_stack([np.ones(n), values]), names, 0)
        return ObservedData(x, t, y)

    if not (0.0 < split < 1.0):
        raise DataError("split fraction must be in (0, 1)")
    train_idx, test_idx = train_test_split(n, split, split_seed)
    train_raw = feats[train_idx]
    out = []
    for idx, raw in ((train_idx, train_raw), (test_idx, feats[test_idx])):
        values = _standardize(raw, train_raw, header, feature_cols)
        x = DesignMatrix(
            np.column_stack([np.ones(idx.size), values]),
            names,
            0,
            standardized=bool(idx is train_idx),
        )
        out.append(ObservedData(x, t[idx], y[idx]))
    return tuple(out)


def _standardize(feats, reference, header, feature_cols):
    mean = reference.mean(axis=0)
    sd = reference.std(axis=0)
    for k, j in enumerate(feature_cols):
        if sd[k] == 0:
            raise DataError(f"constant feature {header[j]!r}")
    values = (feats - mean) / sd
    # exact re-centering absorbs float roundoff when feats is the reference
    if feats is reference:
        values -= values.mean(axis=0)
        values /= values.std(axis=0)
    return values


def train_test_split(n: int, train_frac: float, seed: int):
    """Deterministic shuffled index split; same seed, same split."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def write_csv(path, data: ObservedData):
    """Inverse of ingest_csv for already-standardized data; the intercept
    column is dropped."""
    keep = [j for j in range(data.x.d) if j != data.x.intercept_index]
    header = ["t", "y"] + [data.x.column_names[j] for j in keep]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            y_cell = "" if np.isnan(data.y[i]) else str(int(data.y[i]))
            writer.writerow(
                [int(data.t[i]), y_cell]
                + [repr(float(v)) for v in data.x.values[i, keep]]
            )

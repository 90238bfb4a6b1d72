"""Observational-data containers, CSV ingestion and coordinate standardization.

A dataset holds N observations of (outcome y, exposure w, covariate vector c).
Columns are stored as numpy arrays; the row-wise ``Observation`` view exists
for convenience and tests. All containers are immutable after construction so
they can be shared freely across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatasetTooSmallError,
    ParseError,
    SchemaError,
    ZeroVarianceError,
)


@dataclass(frozen=True)
class Observation:
    """One unit: outcome ``y``, exposure ``w`` and covariates ``c``."""

    y: float
    w: float
    c: tuple[float, ...]


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """N observations stored columnwise.

    ``covariates`` has shape (N, p). ``code_books`` records, for each
    originally-text covariate column, the text -> integer-code mapping used
    during ingestion (first-appearance order).
    """

    y: np.ndarray
    w: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    code_books: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "y", _readonly(self.y))
        object.__setattr__(self, "w", _readonly(self.w))
        object.__setattr__(self, "covariates", _readonly(self.covariates))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.y.ndim != 1 or self.w.ndim != 1 or self.covariates.ndim != 2:
            raise SchemaError("y and w must be 1-D, covariates 2-D")
        n = self.y.shape[0]
        if self.w.shape[0] != n or self.covariates.shape[0] != n:
            raise SchemaError("column lengths disagree")
        if n < 2:
            raise DatasetTooSmallError(f"need at least 2 observations, got {n}")
        if self.covariates.shape[1] < 1:
            raise SchemaError("need at least one covariate column")
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise SchemaError("covariate_names length does not match p")
        if len(set(self.covariate_names)) != len(self.covariate_names):
            raise SchemaError("duplicate covariate names")
        for arr, what in ((self.y, "outcome"), (self.w, "exposure"), (self.covariates, "covariate")):
            if not np.all(np.isfinite(arr)):
                raise ParseError(f"non-finite {what} value")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(float(self.y[i]), float(self.w[i]), tuple(self.covariates[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_observations(cls, obs, covariate_names):
        y = np.array([o.y for o in obs])
        w = np.array([o.w for o in obs])
        c = np.array([o.c for o in obs])
        return cls(y, w, c, tuple(covariate_names))


@dataclass(frozen=True)
class StandardizedCoords:
    """Standardized (exposure, GPS) coordinates plus the affine transform.

    ``w_std`` and ``s_std`` have sample mean 0 and sample sd 1 (divisor N-1).
    The transform parameters let new points be mapped identically.
    """

    w_std: np.ndarray
    s_std: np.ndarray
    w_mean: float
    w_sd: float
    s_mean: float
    s_sd: float

    def __post_init__(self):
        object.__setattr__(self, "w_std", _readonly(self.w_std))
        object.__setattr__(self, "s_std", _readonly(self.s_std))
        if self.w_sd <= 0 or self.s_sd <= 0:
            raise ZeroVarianceError("standardization requires positive sd")

    def map_w(self, w):
        return (np.asarray(w, dtype=float) - self.w_mean) / self.w_sd

    def map_s(self, s):
        return (np.asarray(s, dtype=float) - self.s_mean) / self.s_sd


def standardize(values):
    """Center and scale a vector to mean 0, sd 1 (sample sd, divisor N-1).

    Returns ``(standardized, mean, sd)``. Raises ZeroVarianceError for a
    constant vector.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise DatasetTooSmallError("standardize needs a vector of length >= 2")
    if not np.all(np.isfinite(v)):
        raise ParseError("non-finite value in standardize input")
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1))
    if sd <= 0.0:
        raise ZeroVarianceError("cannot standardize a constant vector")
    return (v - mean) / sd, mean, sd


def standardized_coords(w, s) -> StandardizedCoords:
    w_std, w_mean, w_sd = standardize(w)
    s_std, s_mean, s_sd = standardize(s)
    return StandardizedCoords(w_std, s_std, w_mean, w_sd, s_mean, s_sd)


def _parse_cell(text, column, row_index):
    try:
        return float(text)
    except ValueError:
        raise ParseError(
            f"non-numeric value {text!r} in column {column!r} at data row {row_index}"
        ) from None


def load_dataset(path, schema) -> Dataset:
    """Load a Dataset from a headered CSV.

    ``schema`` maps roles to column names: ``{"outcome": ..., "exposure": ...,
    "covariates": [...]}``. Text-valued covariate columns are mapped to integer
    level codes in first-appearance order; the code book is kept on the
    returned Dataset.
    """
    outcome = schema.get("outcome")
    exposure = schema.get("exposure")
    covariates = list(schema.get("covariates") or [])
    if not outcome or not exposure or not covariates:
        raise SchemaError("schema must name an outcome, an exposure and >=1 covariates")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in [outcome, exposure, *covariates]:
            if col not in header:
                raise SchemaError(f"column {col!r} not found in header of {path}")
        idx = {col: header.index(col) for col in [outcome, exposure, *covariates]}

        y_rows, w_rows, c_rows = [], [], []
        for r, row in enumerate(reader):
            if not row or all(not cell.strip() for cell in row):
                continue
            y_rows.append(_parse_cell(row[idx[outcome]], outcome, r))
            w_rows.append(_parse_cell(row[idx[exposure]], exposure, r))
            c_rows.append([row[idx[c]].strip() for c in covariates])

    if len(y_rows) < 2:
        raise DatasetTooSmallError(f"{path}: need at least 2 data rows, got {len(y_rows)}")

    code_books: dict[str, dict[str, int]] = {}
    p = len(covariates)
    cmat = np.empty((len(c_rows), p), dtype=float)
    for j, name in enumerate(covariates):
        column = [row[j] for row in c_rows]
        numeric = True
        for cell in column:
            try:
                float(cell)
            except ValueError:
                numeric = False
                break
        if numeric:
            for i, cell in enumerate(column):
                cmat[i, j] = _parse_cell(cell, name, i)
        else:
            book: dict[str, int] = {}
            for i, cell in enumerate(column):
                if cell not in book:
                    book[cell] = len(book)
                cmat[i, j] = book[cell]
            code_books[name] = book

    return Dataset(np.array(y_rows), np.array(w_rows), cmat, tuple(covariates), code_books)


def save_dataset(dataset: Dataset, path, outcome="y", exposure="w"):
    """Write a Dataset back to CSV at full float precision (round-trip safe)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([outcome, exposure, *dataset.covariate_names])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(dataset.y[i])), repr(float(dataset.w[i]))]
                + [repr(float(v)) for v in dataset.covariates[i]]
            )


def exposure_grid(w, m, lower_pct=0.5, upper_pct=99.5):
    """Equally spaced analysis grid between two exposure percentiles."""
    if m < 1:
        raise ValueError("grid size must be >= 1")
    lo, hi = np.percentile(np.asarray(w, dtype=float), [lower_pct, upper_pct])
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        raise ZeroVarianceError("degenerate exposure range for grid construction")
    return np.linspace(lo, hi, m)

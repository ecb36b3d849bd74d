"""Dataset container and CSV I/O.

A dataset holds one row per unit: covariates x, arm indicator s (1 = trial
arm, 0 = external control), completion indicator r (1 = outcome observed,
0 = intercurrent event before the outcome), and outcome y (present iff r=1).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError

DEFAULT_MISSING_TOKENS = ("", "NA", "NaN", "nan")


@dataclass(frozen=True)
class Unit:
    """One subject: covariates, arm, completion indicator, outcome."""

    x: np.ndarray
    s: int
    r: int
    y: float | None

    def __post_init__(self):
        if self.s not in (0, 1):
            raise DataError(f"unit s must be 0 or 1, got {self.s!r}")
        if self.r not in (0, 1):
            raise DataError(f"unit r must be 0 or 1, got {self.r!r}")
        if self.r == 1 and self.y is None:
            raise DataError("unit with r=1 must have an observed y")
        if self.r == 0 and self.y is not None:
            raise DataError("unit with r=0 must not carry a y value")


@dataclass(frozen=True)
class Schema:
    """Column mapping for CSV files: covariate columns plus s, r, y."""

    x_cols: tuple[str, ...]
    s_col: str = "s"
    r_col: str = "r"
    y_col: str = "y"

    def __post_init__(self):
        names = list(self.x_cols) + [self.s_col, self.r_col, self.y_col]
        if len(set(names)) != len(names):
            raise DataError(f"schema columns must be distinct, got {names}")
        if not self.x_cols:
            raise DataError("schema needs at least one covariate column")

    @classmethod
    def from_spec(cls, spec: str) -> "Schema":
        """Parse "x1,x2,...,s_col,r_col,y_col" (last three are s, r, y)."""
        parts = [p.strip() for p in spec.split(",") if p.strip()]
        if len(parts) < 4:
            raise DataError(
                "schema spec needs at least one covariate column plus the "
                f"s, r, y columns; got {spec!r}"
            )
        return cls(x_cols=tuple(parts[:-3]), s_col=parts[-3],
                   r_col=parts[-2], y_col=parts[-1])

    def header(self) -> list[str]:
        return list(self.x_cols) + [self.s_col, self.r_col, self.y_col]

    @classmethod
    def default(cls, p: int) -> "Schema":
        return cls(x_cols=tuple(f"x{j + 1}" for j in range(p)))


class Dataset:
    """Immutable column store of units.

    x : (n, p) float64, all finite
    s : (n,) int8 in {0, 1}
    r : (n,) int8 in {0, 1}
    y : (n,) float64, NaN exactly where r == 0
    """

    __slots__ = ("x", "s", "r", "y")

    def __init__(self, x, s, r, y):
        x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
        s = np.asarray(s)
        r = np.asarray(r)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"x must be 2-d (n, p), got shape {x.shape}")
        n = x.shape[0]
        for name, arr in (("s", s), ("r", r), ("y", y)):
            if arr.shape != (n,):
                raise DataError(
                    f"{name} must have shape ({n},), got {arr.shape}")
        if not np.isfinite(x).all():
            bad = int(np.argwhere(~np.isfinite(x).all(axis=1))[0, 0])
            raise DataError(f"non-finite covariate in row {bad + 1}")
        for name, arr in (("s", s), ("r", r)):
            vals = np.unique(arr)
            if not np.isin(vals, (0, 1)).all():
                raise DataError(
                    f"{name} must be binary 0/1, found values {vals.tolist()}")
        s = s.astype(np.int8)
        r = r.astype(np.int8)
        y_missing = np.isnan(y)
        if np.any(y_missing != (r == 0)):
            bad = int(np.argwhere(y_missing != (r == 0))[0, 0])
            if y_missing[bad]:
                raise DataError(f"row {bad + 1}: r=1 but y is missing")
            raise DataError(f"row {bad + 1}: r=0 but y is present")
        if not np.isfinite(y[~y_missing]).all():
            raise DataError("observed y values must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "y", y)
        for arr in (self.x, self.s, self.r, self.y):
            arr.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_sat(self) -> int:
        """Number of trial-arm units (s=1)."""
        return int(np.sum(self.s == 1))

    @property
    def n_ec(self) -> int:
        """Number of external controls (s=0)."""
        return int(np.sum(self.s == 0))

    def unit(self, i: int) -> Unit:
        y = None if self.r[i] == 0 else float(self.y[i])
        return Unit(x=self.x[i].copy(), s=int(self.s[i]), r=int(self.r[i]), y=y)

    @property
    def units(self) -> list[Unit]:
        return [self.unit(i) for i in range(self.n)]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.s[idx], self.r[idx], self.y[idx])

    def counts(self) -> dict:
        s, r = self.s, self.r
        return {
            "n": self.n,
            "n_sat": self.n_sat,
            "n_ec": self.n_ec,
            "sat_observed": int(np.sum((s == 1) & (r == 1))),
            "sat_intercurrent": int(np.sum((s == 1) & (r == 0))),
            "ec_observed": int(np.sum((s == 0) & (r == 1))),
            "ec_intercurrent": int(np.sum((s == 0) & (r == 0))),
        }

    def require_estimable(self) -> None:
        """Estimation needs observed outcomes in both arms."""
        c = self.counts()
        if c["n_sat"] == 0:
            raise DataError("dataset has no trial-arm units (s=1)")
        if c["n_ec"] == 0:
            raise DataError("dataset has no external controls (s=0)")
        if c["sat_observed"] == 0:
            raise DataError("dataset has no observed outcomes in the trial arm "
                            "(s=1, r=1 stratum is empty)")
        if c["ec_observed"] == 0:
            raise DataError("dataset has no observed outcomes among external "
                            "controls (s=0, r=1 stratum is empty)")


def from_units(units: Iterable[Unit]) -> Dataset:
    units = list(units)
    if not units:
        raise DataError("cannot build a dataset from zero units")
    x = np.array([u.x for u in units], dtype=np.float64)
    s = np.array([u.s for u in units])
    r = np.array([u.r for u in units])
    y = np.array([np.nan if u.y is None else u.y for u in units])
    return Dataset(x, s, r, y)


def stratify(ds: Dataset, s: int | None = None, r: int | None = None) -> Dataset:
    """View of the units matching the requested stratum (may be empty)."""
    mask = np.ones(ds.n, dtype=bool)
    if s is not None:
        mask &= ds.s == s
    if r is not None:
        mask &= ds.r == r
    return Dataset(ds.x[mask], ds.s[mask], ds.r[mask], ds.y[mask])


def _parse_float(token: str, row: int, col: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataError(
            f"data row {row}, column {col!r}: expected a number, got {token!r}"
        ) from None
    if math.isnan(v):
        raise DataError(f"data row {row}, column {col!r}: value is NaN; use an "
                        "empty cell or NA for missing outcomes")
    return v


def _parse_binary(token: str, row: int, col: str) -> int:
    if token in ("0", "1"):
        return int(token)
    v = _parse_float(token, row, col)
    if v in (0.0, 1.0):
        return int(v)
    raise DataError(f"data row {row}, column {col!r}: expected 0 or 1, got {token!r}")


def load_dataset(path, schema: Schema | None = None,
                 missing_tokens: Sequence[str] = DEFAULT_MISSING_TOKENS) -> Dataset:
    """Load a CSV with a header row into a Dataset.

    Without an explicit schema, columns named s, r, y play those roles and all
    remaining columns are covariates in header order. Outcome cells must be
    empty/NA exactly on rows with r=0. Errors name the offending data row
    (1-based, header excluded).
    """
    missing = set(missing_tokens)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        if schema is None:
            for col in ("s", "r", "y"):
                if col not in header:
                    raise DataError(
                        f"{path}: no column named {col!r} in header {header}; "
                        "pass an explicit schema")
            x_cols = tuple(h for h in header if h not in ("s", "r", "y"))
            if not x_cols:
                raise DataError(f"{path}: header has no covariate columns")
            schema = Schema(x_cols=x_cols)
        try:
            pos = {c: header.index(c) for c in schema.header()}
        except ValueError as exc:
            missing_col = str(exc).split("'")[1] if "'" in str(exc) else "?"
            raise DataError(
                f"{path}: schema column {missing_col!r} not found in header "
                f"{header}") from None

        xs, ss, rs, ys = [], [], [], []
        for i, rec in enumerate(reader, start=1):
            if not rec or all(tok.strip() == "" for tok in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}: data row {i} has {len(rec)} fields, header has "
                    f"{len(header)}")
            rec = [tok.strip() for tok in rec]
            row_x = []
            for col in schema.x_cols:
                tok = rec[pos[col]]
                if tok in missing:
                    raise DataError(
                        f"{path}: data row {i}, column {col!r}: covariates "
                        "cannot be missing")
                row_x.append(_parse_float(tok, i, col))
            s = _parse_binary(rec[pos[schema.s_col]], i, schema.s_col)
            r = _parse_binary(rec[pos[schema.r_col]], i, schema.r_col)
            tok_y = rec[pos[schema.y_col]]
            if tok_y in missing:
                if r == 1:
                    raise DataError(
                        f"{path}: data row {i}: r=1 but y is missing")
                y = math.nan
            else:
                if r == 0:
                    raise DataError(
                        f"{path}: data row {i}: r=0 but y={tok_y!r} is present "
                        "(outcomes after an intercurrent event are undefined)")
                y = _parse_float(tok_y, i, schema.y_col)
            xs.append(row_x)
            ss.append(s)
            rs.append(r)
            ys.append(y)
    if not xs:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ss), np.array(rs), np.array(ys))


def write_dataset(ds: Dataset, path, schema: Schema | None = None) -> None:
    """Write a Dataset to CSV; floats use repr so a reload round-trips exactly.

    path may be a filesystem path or an open text file object.
    """
    if schema is None:
        schema = Schema.default(ds.p)
    if len(schema.x_cols) != ds.p:
        raise DataError(
            f"schema has {len(schema.x_cols)} covariate columns, dataset has "
            f"{ds.p}")

    def emit(fh):
        w = csv.writer(fh)
        w.writerow(schema.header())
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.x[i]]
            row.append(str(int(ds.s[i])))
            row.append(str(int(ds.r[i])))
            row.append("" if ds.r[i] == 0 else repr(float(ds.y[i])))
            w.writerow(row)

    if hasattr(path, "write"):
        emit(path)
    else:
        with open(path, "w", newline="") as fh:
            emit(fh)


def summarize(ds: Dataset) -> dict:
    """JSON-ready summary: stratum counts and covariate means."""
    out = dict(ds.counts())
    out["p"] = ds.p
    out["x_mean"] = [float(v) for v in ds.x.mean(axis=0)]
    for label, arm in (("sat", 1), ("ec", 0)):
        mask = ds.s == arm
        out[f"x_mean_{label}"] = (
            [float(v) for v in ds.x[mask].mean(axis=0)] if mask.any() else None)
    obs = ds.r == 1
    for label, arm in (("sat", 1), ("ec", 0)):
        mask = (ds.s == arm) & obs
        out[f"y_mean_{label}_observed"] = (
            float(ds.y[mask].mean()) if mask.any() else None)
    return out

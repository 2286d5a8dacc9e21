"""Dataset ingestion, validation, binarization and standardization.

Datasets are immutable after construction and safe to share across solver
workers.  Missing values are rejected rather than imputed so that every
coefficient that reaches a formulation is traceable to the input file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class DataError(Exception):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus labels and optional treatment/group columns.

    Binary classification labels are stored canonically in {-1, +1}; the
    original label values are recorded in ``label_map`` (index 0 -> -1,
    index 1 -> +1).
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    treatments: Optional[np.ndarray] = None
    group: Optional[np.ndarray] = None
    binarized: bool = False
    label_map: Optional[Tuple[object, object]] = None
    categories: Dict[str, Tuple[object, ...]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        n, d = X.shape
        if y.shape != (n,):
            raise DataError("label vector length does not match row count")
        if len(self.feature_names) != d:
            raise DataError("feature_names length does not match column count")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        if y.dtype.kind in "fiu" and not np.all(np.isfinite(y.astype(float))):
            raise DataError("labels contain missing or non-finite values")
        if self.treatments is not None:
            t = np.asarray(self.treatments)
            object.__setattr__(self, "treatments", t)
            if t.shape != (n,):
                raise DataError("treatment vector length mismatch")
        if self.group is not None:
            g = np.asarray(self.group, dtype=int)
            object.__setattr__(self, "group", g)
            if g.shape != (n,):
                raise DataError("group mask length mismatch")
            if not np.all(np.isin(g, (0, 1))):
                raise DataError("group mask must be binary (1 marks the protected subgroup)")
        X.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def treatment_levels(self) -> list:
        if self.treatments is None:
            raise DataError("dataset has no treatment column")
        return sorted(set(self.treatments.tolist()))

    def with_labels_signed(self) -> "Dataset":
        """Map a two-valued label column to canonical {-1, +1}."""
        vals = sorted(set(np.asarray(self.y).tolist()))
        if len(vals) != 2:
            raise DataError(f"binary task requires exactly two label values, got {vals}")
        if vals == [-1, 1] or vals == [-1.0, 1.0]:
            return replace(self, y=np.asarray(self.y, dtype=float), label_map=(-1, 1))
        y = np.where(np.asarray(self.y) == vals[1], 1.0, -1.0)
        return replace(self, y=y, label_map=(vals[0], vals[1]))


@dataclass(frozen=True)
class BinaryColumn:
    source: str
    kind: str  # "threshold" | "onehot" | "passthrough"
    threshold: Optional[float] = None
    level: Optional[object] = None

    def describe(self) -> str:
        if self.kind == "threshold":
            return f"{self.source} <= {self.threshold:g}"
        if self.kind == "onehot":
            return f"{self.source} == {self.level}"
        return f"{self.source} == 1"


@dataclass(frozen=True)
class BinarizationMap:
    """Per-feature recipe producing the binary columns, invertible to text."""

    columns: Tuple[BinaryColumn, ...]
    dropped: Tuple[str, ...] = ()

    def describe(self) -> List[str]:
        return [c.describe() for c in self.columns]

    def apply(self, X: np.ndarray, feature_names: Sequence[str]) -> np.ndarray:
        name_to_col = {nm: j for j, nm in enumerate(feature_names)}
        out = np.zeros((X.shape[0], len(self.columns)))
        for k, col in enumerate(self.columns):
            x = X[:, name_to_col[col.source]]
            if col.kind == "threshold":
                out[:, k] = (x <= col.threshold).astype(float)
            elif col.kind == "onehot":
                out[:, k] = (x == col.level).astype(float)
            else:
                out[:, k] = x
        return out


def default_thresholds(values: np.ndarray) -> List[float]:
    """Midpoints between consecutive distinct sorted values."""
    distinct = np.unique(values)
    return [float(0.5 * (a + b)) for a, b in zip(distinct[:-1], distinct[1:])]


def binarize(
    ds: Dataset,
    thresholds_per_feature: Optional[Dict[str, Sequence[float]]] = None,
    categorical: Sequence[str] = (),
) -> Tuple[Dataset, BinarizationMap]:
    """Threshold/one-hot encode features into a {0,1} matrix.

    Already-binary columns pass through unchanged.  Constant features with
    no usable threshold are dropped (reported on the map).  Default
    thresholds are midpoints between consecutive distinct values, which is
    what an exact tree search needs as its candidate-split set.
    """
    if ds.binarized:
        raise DataError("dataset is already binarized")
    thresholds_per_feature = thresholds_per_feature or {}
    categorical = set(categorical) | {nm for nm, _ in ds.categories.items()}
    cols: List[BinaryColumn] = []
    dropped: List[str] = []
    mats: List[np.ndarray] = []
    for j, name in enumerate(ds.feature_names):
        x = ds.X[:, j]
        vals = np.unique(x)
        if name in categorical:
            levels = ds.categories.get(name, tuple(vals.tolist()))
            for lv in levels:
                cols.append(BinaryColumn(name, "onehot", level=lv))
                mats.append((x == lv).astype(float))
            continue
        if vals.size == 1:
            dropped.append(name)
            continue
        if set(vals.tolist()) <= {0.0, 1.0}:
            cols.append(BinaryColumn(name, "passthrough"))
            mats.append(x.astype(float))
            continue
        ths = thresholds_per_feature.get(name)
        if ths is None:
            ths = default_thresholds(x)
        usable = [t for t in ths if vals.min() <= t < vals.max()]
        if not usable:
            dropped.append(name)
            continue
        for t in usable:
            cols.append(BinaryColumn(name, "threshold", threshold=float(t)))
            mats.append((x <= t).astype(float))
    if not mats:
        raise DataError("binarization produced no columns")
    Xb = np.column_stack(mats)
    bmap = BinarizationMap(tuple(cols), tuple(dropped))
    out = Dataset(
        X=Xb,
        y=ds.y,
        feature_names=tuple(c.describe() for c in cols),
        treatments=ds.treatments,
        group=ds.group,
        binarized=True,
        label_map=ds.label_map,
    )
    return out, bmap


def standardize(ds: Dataset) -> Dataset:
    """Center every column; scale nonconstant columns to unit variance."""
    if ds.n < 2:
        raise DataError("standardization needs at least two rows")
    mu = ds.X.mean(axis=0)
    sd = ds.X.std(axis=0, ddof=0)
    scale = np.where(sd > 1e-12, sd, 1.0)
    X = (ds.X - mu) / scale
    return replace(ds, X=X)


@dataclass(frozen=True)
class Schema:
    """Column layout of a CSV file: which header names play which role."""

    features: Tuple[str, ...]
    label: str
    treatment: Optional[str] = None
    group: Optional[str] = None
    categorical: Tuple[str, ...] = ()


def load_csv(path: str, schema: Schema) -> Dataset:
    """Read a headered CSV into a Dataset, rejecting missing values.

    Parse failures report the 1-based row and the column name.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        needed = list(schema.features) + [schema.label]
        if schema.treatment:
            needed.append(schema.treatment)
        if schema.group:
            needed.append(schema.group)
        for nm in needed:
            if nm not in header:
                raise DataError(f"{path}: schema mismatch, column {nm!r} not in header")
        col_of = {nm: header.index(nm) for nm in needed}
        cat_set = set(schema.categorical)
        rows: List[List[float]] = []
        ys: List[object] = []
        treats: List[object] = []
        groups: List[int] = []
        cat_levels: Dict[str, Dict[object, int]] = {nm: {} for nm in cat_set}
        for i, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} cells, expected {len(header)}")
            vals: List[float] = []
            for nm in schema.features:
                cell = rec[col_of[nm]].strip()
                if cell == "":
                    raise DataError(f"{path}: missing value at row {i}, column {nm!r}")
                if nm in cat_set:
                    codes = cat_levels[nm]
                    if cell not in codes:
                        codes[cell] = len(codes)
                    vals.append(float(codes[cell]))
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: parse error at row {i}, column {nm!r}: {cell!r}")
            cell = rec[col_of[schema.label]].strip()
            if cell == "":
                raise DataError(f"{path}: missing label at row {i}")
            try:
                ys.append(float(cell))
            except ValueError:
                ys.append(cell)
            if schema.treatment:
                treats.append(rec[col_of[schema.treatment]].strip())
            if schema.group:
                cell = rec[col_of[schema.group]].strip()
                try:
                    g = int(float(cell))
                except ValueError:
                    raise DataError(f"{path}: parse error at row {i}, group column: {cell!r}")
                groups.append(g)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    y_arr = np.array(ys) if all(isinstance(v, float) for v in ys) else np.array(ys, dtype=object)
    categories = {nm: tuple(sorted(cat_levels[nm], key=cat_levels[nm].get)) for nm in cat_set}
    # categorical levels were coded in first-seen order; store code values
    cat_codes = {nm: tuple(range(len(categories[nm]))) for nm in categories}
    ds = Dataset(
        X=np.array(rows, dtype=float),
        y=y_arr,
        feature_names=tuple(schema.features),
        treatments=np.array(treats, dtype=object) if treats else None,
        group=np.array(groups, dtype=int) if groups else None,
        categories={nm: cat_codes[nm] for nm in categories},
    )
    if ds.treatments is not None:
        levels = ds.treatment_levels()
        if len(levels) < 2:
            raise DataError("treatment column must contain at least two levels")
    return ds

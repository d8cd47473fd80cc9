"""Tabular input: CSV loading, validation, categorical encoding and design matrices."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    MissingColumn,
    MissingValue,
    NonBinaryOutcome,
    SingleLevelFactor,
)

OUTCOME_KINDS = ("binary", "continuous")


@dataclass(frozen=True)
class CategoryMap:
    """Bijection between original labels and integer codes 1..L (code 1 is the reference)."""

    column: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"duplicate levels for column {self.column!r}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def code(self, label: str) -> int:
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise DataError(f"unknown level {label!r} for column {self.column!r}") from None

    def label(self, code: int) -> str:
        return self.labels[code - 1]


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which role. ``levels`` optionally fixes category order."""

    outcome: str
    hospital: str
    group: str
    covariates: tuple[str, ...] = ()
    outcome_kind: str = "binary"
    levels: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"outcome_kind must be one of {OUTCOME_KINDS}, got {self.outcome_kind!r}")
        object.__setattr__(self, "covariates", tuple(self.covariates))


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    x: np.ndarray
    outcome_kind: str
    hospitals: CategoryMap
    groups: CategoryMap
    outcome_name: str = "y"
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        a = np.array(self.a, dtype=np.int64)
        z = np.array(self.z, dtype=np.int64)
        x = np.array(self.x, dtype=float).reshape(len(y), -1)
        for arr in (y, a, z, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        object.__setattr__(self, "covariate_names", names)
        self._validate()

    def _validate(self):
        n = len(self.y)
        if not (len(self.a) == len(self.z) == n):
            raise DimensionMismatch("y, a and z must have equal length")
        if len(self.covariate_names) != self.p:
            raise DimensionMismatch("covariate_names does not match x columns")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"unknown outcome_kind {self.outcome_kind!r}")
        for name, codes, cmap in (("hospital", self.a, self.hospitals), ("group", self.z, self.groups)):
            if cmap.size < 2:
                raise SingleLevelFactor(cmap.column, cmap.size)
            if n and (codes.min() < 1 or codes.max() > cmap.size):
                raise DataError(f"{name} codes must lie in 1..{cmap.size}")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.x)):
            raise DataError("non-finite values in outcome or covariates")
        if self.outcome_kind == "binary":
            bad = np.flatnonzero((self.y != 0.0) & (self.y != 1.0))
            if bad.size:
                raise NonBinaryOutcome(int(bad[0]), float(self.y[bad[0]]))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def J(self) -> int:
        return self.hospitals.size

    @property
    def K(self) -> int:
        return self.groups.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return (self.outcome_name, self.hospitals.column, self.groups.column) + self.covariate_names

    def take(self, rows) -> Dataset:
        """Row subset (used by the bootstrap); category maps are kept."""
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows], a=self.a[rows], z=self.z[rows], x=self.x[rows],
            outcome_kind=self.outcome_kind, hospitals=self.hospitals, groups=self.groups,
            outcome_name=self.outcome_name, covariate_names=self.covariate_names,
        )

    def cell_counts(self) -> np.ndarray:
        counts = np.zeros((self.J, self.K), dtype=np.int64)
        np.add.at(counts, (self.a - 1, self.z - 1), 1)
        return counts

    def empty_cells(self) -> list[tuple[str, str]]:
        counts = self.cell_counts()
        return [
            (self.hospitals.label(a + 1), self.groups.label(z + 1))
            for a, z in zip(*np.nonzero(counts == 0))
        ]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.y, self.a, self.z, self.x):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.hospitals, self.groups, self.covariate_names, self.outcome_kind)).encode())
        return h.hexdigest()

    def equals(self, other: Dataset) -> bool:
        return (
            self.digest() == other.digest()
            and self.outcome_name == other.outcome_name
        )


def _levels_in_order(values, column, explicit):
    if explicit is not None:
        labels = tuple(str(v) for v in explicit)
        unknown = sorted(set(values) - set(labels))
        if unknown:
            raise DataError(f"column {column!r} has levels not listed in config: {unknown}")
    else:
        labels = tuple(dict.fromkeys(values))
    missing = [lab for lab in labels if lab not in set(values)]
    if missing:
        raise DataError(f"level(s) {missing} of column {column!r} never appear in the data")
    if len(labels) < 2:
        raise SingleLevelFactor(column, len(labels))
    return CategoryMap(column, labels)


def load_csv(path, roles: ColumnRoles) -> Dataset:
    """Read a headered CSV file and encode it according to ``roles``.

    Category codes follow first appearance in the file unless ``roles.levels``
    gives an explicit order for the hospital or group column. Rows are
    reported 1-based, counting data rows after the header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]

    used = [roles.outcome, roles.hospital, roles.group, *roles.covariates]
    index = {}
    for col in used:
        if col not in header:
            raise MissingColumn(col)
        index[col] = header.index(col)

    columns: dict[str, list[str]] = {col: [] for col in used}
    for r, row in enumerate(rows, start=1):
        for col in used:
            j = index[col]
            value = row[j].strip() if j < len(row) else ""
            if value == "":
                raise MissingValue(r, col)
            columns[col].append(value)

    def numeric(col):
        out = np.empty(len(rows))
        for r, value in enumerate(columns[col]):
            try:
                out[r] = float(value)
            except ValueError:
                raise DataError(f"non-numeric value {value!r} at row {r + 1}, column {col!r}") from None
        return out

    y = numeric(roles.outcome)
    if roles.outcome_kind == "binary":
        bad = np.flatnonzero((y != 0.0) & (y != 1.0))
        if bad.size:
            raise NonBinaryOutcome(int(bad[0]) + 1, columns[roles.outcome][bad[0]])

    hosp = _levels_in_order(columns[roles.hospital], roles.hospital, roles.levels.get(roles.hospital))
    grp = _levels_in_order(columns[roles.group], roles.group, roles.levels.get(roles.group))
    a = np.array([hosp.code(v) for v in columns[roles.hospital]], dtype=np.int64)
    z = np.array([grp.code(v) for v in columns[roles.group]], dtype=np.int64)
    x = np.column_stack([numeric(c) for c in roles.covariates]) if roles.covariates else np.empty((len(rows), 0))

    return Dataset(
        y=y, a=a, z=z, x=x, outcome_kind=roles.outcome_kind, hospitals=hosp, groups=grp,
        outcome_name=roles.outcome, covariate_names=roles.covariates,
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` with original labels; floats use ``repr`` so a reload is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.column_names)
        for i in range(dataset.n):
            w.writerow(
                [repr(float(dataset.y[i])), dataset.hospitals.label(int(dataset.a[i])),
                 dataset.groups.label(int(dataset.z[i]))]
                + [repr(float(v)) for v in dataset.x[i]]
            )


def roles_for(dataset: Dataset) -> ColumnRoles:
    """Column roles (with explicit level order) that reload a file written by :func:`write_csv`."""
    return ColumnRoles(
        outcome=dataset.outcome_name, hospital=dataset.hospitals.column, group=dataset.groups.column,
        covariates=dataset.covariate_names, outcome_kind=dataset.outcome_kind,
        levels={dataset.hospitals.column: dataset.hospitals.labels, dataset.groups.column: dataset.groups.labels},
    )


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

def _one_hot(codes, size):
    out = np.zeros((len(codes), size))
    out[np.arange(len(codes)), codes] = 1.0
    return out


class Design:
    """Regressor layout for the three plug-in models.

    Subclasses provide ``outcome_matrix``, ``hospital_matrix`` and
    ``group_matrix``. The ``*_linear`` methods evaluate linear predictors for
    every counterfactual cell at once; the generic versions here loop over
    cells and may be overridden with structured shortcuts.
    """

    J: int
    K: int

    def outcome_linear(self, theta, x):
        n = len(x)
        out = np.empty((n, self.J, self.K))
        for a in range(1, self.J + 1):
            for z in range(1, self.K + 1):
                out[:, a - 1, z - 1] = self.outcome_matrix(x, np.full(n, a), np.full(n, z)) @ theta
        return out

    def hospital_linear(self, eta, x):
        n = len(x)
        out = np.empty((n, self.J - 1, self.K))
        for z in range(1, self.K + 1):
            out[:, :, z - 1] = self.hospital_matrix(x, np.full(n, z)) @ eta.T
        return out

    def group_linear(self, phi, x):
        return self.group_matrix(x) @ phi.T


class StandardDesign(Design):
    """Main-effects-plus-interaction layout of the fixed-effects outcome model.

    Outcome columns: intercept, covariates, hospital dummies for codes 2..J,
    group dummies for codes 2..K, then hospital-by-group interaction dummies
    in hospital-major order. The hospital model uses intercept, covariates and
    group dummies; the group model uses intercept and covariates.
    """

    def __init__(self, J: int, K: int, p: int):
        self.J, self.K, self.p = J, K, p

    @classmethod
    def for_dataset(cls, dataset: Dataset) -> StandardDesign:
        return cls(dataset.J, dataset.K, dataset.p)

    @property
    def outcome_size(self) -> int:
        J, K = self.J, self.K
        return 1 + self.p + (J - 1) + (K - 1) + (J - 1) * (K - 1)

    @property
    def hospital_size(self) -> int:
        return 1 + self.p + (self.K - 1)

    @property
    def group_size(self) -> int:
        return 1 + self.p

    def outcome_names(self, covariate_names=None):
        cov = list(covariate_names or [f"x{j + 1}" for j in range(self.p)])
        return (
            ["(Intercept)"] + cov
            + [f"A{a}" for a in range(2, self.J + 1)]
            + [f"Z{z}" for z in range(2, self.K + 1)]
            + [f"A{a}:Z{z}" for a in range(2, self.J + 1) for z in range(2, self.K + 1)]
        )

    def hospital_names(self, covariate_names=None):
        cov = list(covariate_names or [f"x{j + 1}" for j in range(self.p)])
        return ["(Intercept)"] + cov + [f"Z{z}" for z in range(2, self.K + 1)]

    def group_names(self, covariate_names=None):
        cov = list(covariate_names or [f"x{j + 1}" for j in range(self.p)])
        return ["(Intercept)"] + cov

    def _check(self, x, *codes):
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        if x.shape[1] != self.p:
            raise DimensionMismatch(f"expected {self.p} covariates, got {x.shape[1]}")
        return x

    def outcome_matrix(self, x, a, z):
        x = self._check(x)
        a = np.asarray(a, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        J, K = self.J, self.K
        da = _one_hot(a - 1, J)[:, 1:]
        dz = _one_hot(z - 1, K)[:, 1:]
        inter = (da[:, :, None] * dz[:, None, :]).reshape(len(x), -1)
        return np.hstack([np.ones((len(x), 1)), x, da, dz, inter])

    def hospital_matrix(self, x, z):
        x = self._check(x)
        dz = _one_hot(np.asarray(z, dtype=np.int64) - 1, self.K)[:, 1:]
        return np.hstack([np.ones((len(x), 1)), x, dz])

    def group_matrix(self, x):
        x = self._check(x)
        return np.hstack([np.ones((len(x), 1)), x])

    def outcome_parts(self, theta, x):
        """Row term ``base`` (n,) and cell offsets (J, K) of the outcome linear predictor."""
        x = self._check(x)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.outcome_size,):
            raise DimensionMismatch(f"theta must have length {self.outcome_size}")
        J, K, p = self.J, self.K, self.p
        base = theta[0] + x @ theta[1:1 + p]
        offset = np.zeros((J, K))
        i = 1 + p
        offset[1:, :] += theta[i:i + J - 1][:, None]
        i += J - 1
        offset[:, 1:] += theta[i:i + K - 1][None, :]
        i += K - 1
        offset[1:, 1:] += theta[i:].reshape(J - 1, K - 1)
        return base, offset

    def hospital_parts(self, eta, x):
        """Row terms (n, J-1) and group offsets (J-1, K) of the hospital linear predictors."""
        x = self._check(x)
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.J - 1, self.hospital_size):
            raise DimensionMismatch(f"eta must have shape {(self.J - 1, self.hospital_size)}")
        p = self.p
        base = eta[:, 0][None, :] + x @ eta[:, 1:1 + p].T
        zoff = np.hstack([np.zeros((self.J - 1, 1)), eta[:, 1 + p:]])
        return base, zoff

    def outcome_linear(self, theta, x):
        base, offset = self.outcome_parts(theta, x)
        return base[:, None, None] + offset[None, :, :]

    def hospital_linear(self, eta, x):
        base, zoff = self.hospital_parts(eta, x)
        return base[:, :, None] + zoff[None, :, :]


class SaturatedDesign(Design):
    """Cell-means layout for a single discrete covariate holding support codes 0..S-1.

    Every (x, z) stratum gets its own hospital distribution, every x its own
    group distribution and every (x, a, z) cell its own outcome mean, so the
    maximum-likelihood fits reproduce empirical cell frequencies.
    """

    def __init__(self, J: int, K: int, support_size: int):
        self.J, self.K, self.S = J, K, support_size
        self.p = 1

    @property
    def outcome_size(self):
        return self.S * self.J * self.K

    @property
    def hospital_size(self):
        return self.S * self.K

    @property
    def group_size(self):
        return self.S

    def _support(self, x):
        s = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0].astype(np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.S):
            raise DimensionMismatch("support code out of range")
        return s

    def outcome_matrix(self, x, a, z):
        s = self._support(x)
        cell = (s * self.J + (np.asarray(a) - 1)) * self.K + (np.asarray(z) - 1)
        return _one_hot(cell, self.outcome_size)

    def hospital_matrix(self, x, z):
        s = self._support(x)
        return _one_hot(s * self.K + (np.asarray(z) - 1), self.hospital_size)

    def group_matrix(self, x):
        return _one_hot(self._support(x), self.S)


def design_row(dataset: Dataset, i: int, a: int, z: int) -> np.ndarray:
    """Outcome regressors for row ``i`` evaluated at counterfactual hospital ``a`` and group ``z``."""
    if not 0 <= i < dataset.n:
        raise IndexError(f"row {i} out of range for n={dataset.n}")
    if not (1 <= a <= dataset.J and 1 <= z <= dataset.K):
        raise IndexError(f"(a, z) = {(a, z)} outside 1..{dataset.J} x 1..{dataset.K}")
    design = StandardDesign.for_dataset(dataset)
    return design.outcome_matrix(dataset.x[i:i + 1], [a], [z])[0]

"""Plug-in estimators of the eight-way variance decomposition.

Model predictions are evaluated for every counterfactual (hospital, group)
cell of every row and standardized over the empirical covariate distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from ._pykernels import _softmax_with_reference
from .data import Dataset, StandardDesign
from .errors import DimensionMismatch
from .models import FittedModels

NAMES = (
    "group_indirect",
    "group_direct",
    "group_covariance",
    "main_hospital",
    "effect_modification",
    "differential_selection",
    "case_mix",
    "residual",
)
LABELS = (
    "Group indirect effect",
    "Group direct effect",
    "Group covariance",
    "Main hospital effect",
    "Effect modification",
    "Differential selection",
    "Case-mix",
    "Residual",
)
COLUMNS = NAMES + ("total",)


@dataclass(frozen=True)
class Components:
    w1: float
    w2: float
    w3: float
    w4: float
    w5: float
    w6: float
    w7: float
    w8: float
    total: float
    n_used: int = 0
    sample_variance_y: float | None = None
    empty_cells: tuple = field(default=(), compare=False)

    def values(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7, self.w8])

    def vector(self) -> np.ndarray:
        """The eight components followed by the total."""
        return np.append(self.values(), self.total)

    @property
    def proportions(self) -> np.ndarray:
        return self.values() / self.total if self.total != 0 else np.full(8, np.nan)

    def as_dict(self):
        return dict(zip(COLUMNS, self.vector().tolist()))

    def sum_error(self) -> float:
        """Relative discrepancy between the component sum and the total."""
        s = math.fsum(self.values())
        return abs(s - self.total) / max(abs(self.total), np.finfo(float).tiny)

    @classmethod
    def from_vector(cls, vec, **kw):
        vec = [float(v) for v in vec]
        return cls(*vec[:9], **kw)


class CellTable:
    """Per-row predictions for all counterfactual cells.

    ``m[i, a, z]`` is E(Y | A=a, Z=z, X_i), ``pA[i, a, z]`` is
    P(A=a | Z=z, X_i), ``pZ[i, z]`` is P(Z=z | X_i) and ``v[i, a, z]`` the
    conditional outcome variance. Indices are 0-based codes. ``weights`` are
    the standardization weights (uniform 1/n unless given).
    """

    def __init__(self, m, pA, pZ, v, weights=None):
        self.m = np.ascontiguousarray(m, dtype=float)
        self.pA = np.ascontiguousarray(pA, dtype=float)
        self.pZ = np.ascontiguousarray(pZ, dtype=float)
        self.v = np.ascontiguousarray(v, dtype=float)
        n, J, K = self.m.shape
        if self.pA.shape != (n, J, K) or self.v.shape != (n, J, K) or self.pZ.shape != (n, K):
            raise DimensionMismatch("cell arrays have inconsistent shapes")
        if weights is None:
            self.weights = np.full(n, 1.0 / n) if n else np.empty(0)
            self.uniform = True
        else:
            self.weights = _normalized_weights(n, weights)
            self.uniform = False

    @property
    def n(self):
        return self.m.shape[0]

    @property
    def J(self):
        return self.m.shape[1]

    @property
    def K(self):
        return self.m.shape[2]

    # derived quantities -------------------------------------------------

    @property
    def mu_cross(self):
        """mu(z, z*, X_i): group z outcomes averaged over group z*'s hospital distribution."""
        return np.einsum("naz,nas->nzs", self.m, self.pA)

    @property
    def mu_z(self):
        """mu(z, X_i) = mu(z, z, X_i)."""
        return np.einsum("naz,naz->nz", self.m, self.pA)

    @property
    def mu_zdot(self):
        return np.einsum("nzs,ns->nz", self.mu_cross, self.pZ)

    @property
    def mu_x(self):
        """mu(X_i), the system-wide standardized mean for row i."""
        return np.einsum("nz,nz->n", self.mu_z, self.pZ)

    @property
    def tau(self):
        return self.m - self.mu_z[:, None, :]

    @property
    def delta_ind(self):
        return self.mu_z - self.mu_zdot

    @property
    def delta_dir(self):
        return self.mu_zdot - self.mu_x[:, None]

    @property
    def p_hospital(self):
        """P(A=a | X_i), the hospital distribution marginalised over groups."""
        return np.einsum("naz,nz->na", self.pA, self.pZ)

    def average(self, per_row) -> float:
        return math.fsum(self.weights * per_row)


def cells_from_params(design, x, theta, eta, phi, *, link, outcome_kind, residual_sd=None, weights=None):
    """Evaluate the three parametric models at arbitrary coefficient values."""
    lin = design.outcome_linear(np.asarray(theta, dtype=float), x)
    m = expit(lin) if link == "logit" else lin
    pA = _softmax_with_reference(design.hospital_linear(np.asarray(eta, dtype=float), x), 1)
    pZ = _softmax_with_reference(design.group_linear(np.asarray(phi, dtype=float), x), 1)
    if outcome_kind == "binary":
        v = m * (1.0 - m)
    else:
        if residual_sd is None:
            raise ValueError("continuous outcome requires residual_sd")
        v = np.full_like(m, residual_sd ** 2)
    return CellTable(m, pA, pZ, v, weights)


def build_cells(dataset: Dataset, models: FittedModels, weights=None) -> CellTable:
    J, K, p = models.dims
    if (dataset.J, dataset.K) != (J, K) or dataset.x.shape[1] != p:
        raise DimensionMismatch(f"models fitted for (J, K, p) = {(J, K, p)}, dataset has "
                                f"{(dataset.J, dataset.K, dataset.p)}")
    return cells_from_params(
        models.design, dataset.x, models.outcome.theta, models.hospital.coef, models.group.coef,
        link=models.outcome.link, outcome_kind=models.outcome_kind,
        residual_sd=models.outcome.residual_sd, weights=weights,
    )


# ---------------------------------------------------------------------------
# Individual components, written out term by term
# ---------------------------------------------------------------------------

def component_group_indirect(cells: CellTable) -> float:
    return cells.average(np.sum(cells.delta_ind ** 2 * cells.pZ, axis=1))


def component_group_direct(cells: CellTable) -> float:
    return cells.average(np.sum(cells.delta_dir ** 2 * cells.pZ, axis=1))


def component_group_covariance(cells: CellTable) -> float:
    return cells.average(np.sum(2.0 * cells.delta_ind * cells.delta_dir * cells.pZ, axis=1))


def _tau_bar(cells):
    return np.einsum("naz,nz->na", cells.tau, cells.pZ)


def component_main_hospital(cells: CellTable) -> float:
    return cells.average(np.sum(_tau_bar(cells) ** 2 * cells.p_hospital, axis=1))


def component_effect_modification(cells: CellTable) -> float:
    spread = cells.tau - _tau_bar(cells)[:, :, None]
    var_z = np.einsum("naz,nz->na", spread ** 2, cells.pZ)
    return cells.average(np.sum(var_z * cells.p_hospital, axis=1))


def component_differential_selection(cells: CellTable) -> float:
    tsq = cells.tau ** 2
    e_joint = np.einsum("naz,naz,nz->na", tsq, cells.pA, cells.pZ)
    e_prod = np.einsum("naz,nz->na", tsq, cells.pZ) * cells.p_hospital
    return cells.average(np.sum(e_joint - e_prod, axis=1))


def _weighted_variance(values, cells: CellTable, ddof: int) -> float:
    w = cells.weights
    mean = math.fsum(w * values)
    var = math.fsum(w * (values - mean) ** 2)
    n = cells.n
    if ddof:
        if n <= ddof:
            return 0.0
        var *= n / (n - ddof)
    return var


def component_case_mix(cells: CellTable, ddof: int = 1) -> float:
    """Variance of mu(X_i) over rows; ``ddof=1`` gives the sample variance."""
    return _weighted_variance(cells.mu_x, cells, ddof)


def component_residual(cells: CellTable, models=None) -> float:
    return cells.average(np.einsum("naz,naz,nz->n", cells.v, cells.pA, cells.pZ))


# ---------------------------------------------------------------------------
# Full decomposition
# ---------------------------------------------------------------------------

def decompose_cells(cells: CellTable, ddof: int = 1, reduce=None) -> Components:
    """All eight components and the plug-in total from one pass of the kernel.

    The total is assembled separately as the between-X variance of mu(X_i)
    plus the average within-X variance sum_{a,z} [(m - mu(X))^2 + v] pA pZ.
    """
    reduce = reduce or kernels.reduce_components
    sums, mux = reduce(cells.m, cells.pA, cells.pZ, cells.v, cells.weights)
    w7 = _weighted_variance(mux, cells, ddof)
    w1, w2, w3, w4, w5, w6, w8, within = (float(s) for s in sums)
    return Components(w1, w2, w3, w4, w5, w6, w7, w8, total=w7 + within, n_used=cells.n)


def _normalized_weights(n, weights):
    if weights is None:
        return np.full(n, 1.0 / n) if n else np.empty(0)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DimensionMismatch("weights must have one entry per row")
    return np.ascontiguousarray(w / math.fsum(w))


def decompose_params(design, x, theta, eta, phi, *, link, outcome_kind, residual_sd=None,
                     weights=None, ddof=1, reduce_standard=None) -> Components:
    """Components at arbitrary coefficient values, without materializing the cell arrays.

    Used for posterior draws. Structured designs go through the fused kernel;
    other designs fall back to building a ``CellTable``.
    """
    if not isinstance(design, StandardDesign):
        cells = cells_from_params(design, x, theta, eta, phi, link=link, outcome_kind=outcome_kind,
                                  residual_sd=residual_sd, weights=weights)
        return decompose_cells(cells, ddof)
    if outcome_kind != "binary" and residual_sd is None:
        raise ValueError("continuous outcome requires residual_sd")
    base, offset = design.outcome_parts(theta, x)
    hbase, zoff = design.hospital_parts(eta, x)
    glin = design.group_linear(np.asarray(phi, dtype=float), x)
    n = len(base)
    w = _normalized_weights(n, weights)
    sigma2 = 0.0 if outcome_kind == "binary" else float(residual_sd) ** 2
    reduce_standard = reduce_standard or kernels.reduce_standard
    sums, mux = reduce_standard(
        np.ascontiguousarray(base), np.ascontiguousarray(offset), np.ascontiguousarray(hbase),
        np.ascontiguousarray(zoff), np.ascontiguousarray(glin), link == "logit", sigma2, w,
    )
    mean = math.fsum(w * mux)
    w7 = math.fsum(w * (mux - mean) ** 2)
    if ddof:
        w7 = w7 * n / (n - ddof) if n > ddof else 0.0
    w1, w2, w3, w4, w5, w6, w8, within = (float(v) for v in sums)
    return Components(w1, w2, w3, w4, w5, w6, w7, w8, total=w7 + within, n_used=n)


def decompose(dataset: Dataset, models: FittedModels, ddof: int = 1) -> Components:
    cells = build_cells(dataset, models)
    comp = decompose_cells(cells, ddof)
    svar = float(np.var(dataset.y, ddof=1)) if dataset.n > 1 else 0.0
    return Components(
        *comp.vector(), n_used=dataset.n, sample_variance_y=svar, empty_cells=tuple(dataset.empty_cells()),
    )


def group_term(cells: CellTable) -> float:
    """Plug-in E_X V_{Z|X}[mu(Z, X)], the group part of the three-way split."""
    dev = cells.mu_z - cells.mu_x[:, None]
    return cells.average(np.sum(dev ** 2 * cells.pZ, axis=1))


def hospital_term(cells: CellTable) -> float:
    """Plug-in E_X E_{Z|X} V_{A|Z,X}[m], the hospital part of the three-way split."""
    return cells.average(np.einsum("naz,naz,nz->n", cells.tau ** 2, cells.pA, cells.pZ))

"""Interval estimation for the components: normal-approximation draws and the bootstrap.

Randomness comes from counter-based Philox streams keyed by ``(seed, stream,
index)``, so replicate ``r`` can be regenerated in isolation and results do
not depend on how work is split across processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .decompose import COLUMNS, decompose, decompose_params
from .errors import DataError, FitError, NonPsdCovariance, TooManyFailures
from .models import FittedModels, fit_models

PSD_TOL = 1e-10
MAX_FAILURE_RATE = 0.10
METHODS = ("normal_draws", "bootstrap")

# stream identifiers for the RNG keys
_THETA, _ETA, _PHI, _BOOT = 0, 1, 2, 3


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


# ---------------------------------------------------------------------------
# Multivariate normal sampling
# ---------------------------------------------------------------------------

def psd_factor(cov, tol=PSD_TOL):
    """Return F with F @ F.T == cov, repairing tiny negative eigenvalues.

    Cholesky is tried first. Otherwise the symmetric eigendecomposition is used,
    with eigenvalues down to ``-tol * max(1, max|eigenvalue|)`` floored at zero;
    anything more negative raises :class:`NonPsdCovariance`.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0:
        return cov.reshape(cov.shape[0], 0)
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -tol * scale:
        raise NonPsdCovariance(float(vals.min()))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def mvn_draws(mean, cov, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` draws from N(mean, cov) as rows."""
    mean = np.asarray(mean, dtype=float).ravel()
    F = psd_factor(cov)
    if F.shape[0] != mean.size:
        raise ValueError("covariance does not match mean length")
    std = rng.standard_normal((size, F.shape[1]))
    return mean + std @ F.T


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def to_percent(matrix) -> np.ndarray:
    """Rescale rows of (w1..w8, total) to percent of each row's total."""
    matrix = np.asarray(matrix, dtype=float)
    out = np.empty_like(matrix)
    tot = matrix[:, 8:9]
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, :8] = np.where(tot != 0, 100.0 * matrix[:, :8] / tot, 0.0)
    out[:, 8] = np.where(tot[:, 0] != 0, 100.0, 0.0)
    return out


@dataclass(frozen=True, eq=False)
class UncertaintySummary:
    """Per-column median, 2.5/97.5 percentiles and SD over replicates."""

    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sd: np.ndarray
    B: int
    method: str
    seed: int
    failures: int = 0
    scale: str = "raw"

    @classmethod
    def from_matrix(cls, matrix, method, seed, failures=0, scale="raw"):
        mat = np.asarray(matrix, dtype=float)
        if mat.shape[0] < 2:
            raise ValueError("need at least 2 replicates to summarize")
        if scale == "percent":
            mat = to_percent(mat)
        lo, point, hi = np.percentile(mat, [2.5, 50.0, 97.5], axis=0)
        return cls(point=point, lo=lo, hi=hi, sd=mat.std(axis=0, ddof=1), B=mat.shape[0],
                   method=method, seed=seed, failures=failures, scale=scale)

    def as_dict(self):
        return {
            "method": self.method, "B": self.B, "seed": self.seed, "failures": self.failures,
            "scale": self.scale,
            "components": {
                name: {"point": float(self.point[k]), "lo": float(self.lo[k]), "hi": float(self.hi[k]),
                       "sd": float(self.sd[k])}
                for k, name in enumerate(COLUMNS)
            },
        }


@dataclass(frozen=True, eq=False)
class UncertaintyResult:
    summary: UncertaintySummary
    matrix: np.ndarray  # (replicates, 9): w1..w8, total
    failed_replicates: tuple = field(default=())

    def write_matrix(self, path):
        write_replicates_csv(self.matrix, path)


def write_replicates_csv(matrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in np.asarray(matrix, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def _map(fn, tasks, threads):
    if threads and threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


# ---------------------------------------------------------------------------
# Normal-approximation draws
# ---------------------------------------------------------------------------

def draw_parameters(models: FittedModels, B: int, seed: int):
    """B independent draws of (theta, eta, phi), each model from its own stream."""
    theta = mvn_draws(models.outcome.theta, models.outcome.vcov, B, stream(seed, _THETA))
    eta_shape = models.hospital.coef.shape
    eta = mvn_draws(models.hospital.coef.ravel(), models.hospital.vcov, B, stream(seed, _ETA))
    phi_shape = models.group.coef.shape
    phi = mvn_draws(models.group.coef.ravel(), models.group.vcov, B, stream(seed, _PHI))
    return theta, eta.reshape((B,) + eta_shape), phi.reshape((B,) + phi_shape)


def _draw_chunk(task):
    models, x, theta, eta, phi, ddof = task
    out = np.empty((len(theta), 9))
    for b in range(len(theta)):
        out[b] = decompose_params(
            models.design, x, theta[b], eta[b], phi[b], link=models.outcome.link,
            outcome_kind=models.outcome_kind, residual_sd=models.outcome.residual_sd, ddof=ddof,
        ).vector()
    return out


def posterior_draws(models: FittedModels, dataset: Dataset, B: int, seed: int, *, ddof: int = 1,
                    threads: int = 1, scale: str = "raw") -> UncertaintyResult:
    """Recompute the components at B parameter draws from the normal approximations.

    The residual standard deviation of a continuous outcome is held at its
    estimate. Draws are never rejected.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    theta, eta, phi = draw_parameters(models, B, seed)
    tasks = [(models, dataset.x, theta[lo:hi], eta[lo:hi], phi[lo:hi], ddof)
             for lo, hi in _chunks(B, threads or 1)]
    matrix = np.vstack(_map(_draw_chunk, tasks, threads))
    return UncertaintyResult(UncertaintySummary.from_matrix(matrix, "normal_draws", seed, scale=scale), matrix)


# ---------------------------------------------------------------------------
# Nonparametric bootstrap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pipeline:
    """How each bootstrap replicate is refitted."""

    design: object = None
    outcome_mask: object = None
    hospital_mask: object = None
    group_mask: object = None
    ddof: int = 1

    def run(self, dataset: Dataset):
        models = fit_models(dataset, self.design, outcome_mask=self.outcome_mask,
                            hospital_mask=self.hospital_mask, group_mask=self.group_mask)
        return decompose(dataset, models, self.ddof)


def bootstrap_indices(n: int, seed: int, r: int) -> np.ndarray:
    return stream(seed, _BOOT, r).integers(0, n, size=n)


def bootstrap_replicate(dataset: Dataset, pipeline: Pipeline, seed: int, r: int):
    """Component vector for replicate ``r``, or ``None`` if the refit fails."""
    sample = dataset.take(bootstrap_indices(dataset.n, seed, r))
    try:
        return pipeline.run(sample).vector()
    except (FitError, DataError, np.linalg.LinAlgError):
        return None


def _boot_chunk(task):
    dataset, pipeline, seed, lo, hi = task
    return [bootstrap_replicate(dataset, pipeline, seed, r) for r in range(lo, hi)]


def bootstrap(dataset: Dataset, B: int, seed: int, pipeline: Pipeline | None = None, *,
              threads: int = 1, scale: str = "raw", max_failure_rate: float = MAX_FAILURE_RATE) -> UncertaintyResult:
    """Resample rows with replacement, refit all three models and redecompose.

    Replicates whose fits fail are dropped and counted; more than
    ``max_failure_rate`` of B failing raises :class:`TooManyFailures`.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    pipeline = pipeline or Pipeline()
    tasks = [(dataset, pipeline, seed, lo, hi) for lo, hi in _chunks(B, threads or 1)]
    results = [v for part in _map(_boot_chunk, tasks, threads) for v in part]
    failed = tuple(r for r, v in enumerate(results) if v is None)
    if len(failed) > math.floor(max_failure_rate * B):
        raise TooManyFailures(len(failed), B)
    kept = [v for v in results if v is not None]
    if len(kept) < 2:
        raise TooManyFailures(len(failed), B)
    matrix = np.vstack(kept)
    summary = UncertaintySummary.from_matrix(matrix, "bootstrap", seed, failures=len(failed), scale=scale)
    return UncertaintyResult(summary, matrix, failed)

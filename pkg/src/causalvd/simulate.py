"""Simulation scenarios, data generation, super-population truths and replication runs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._pykernels import row_terms
from .data import CategoryMap, Dataset, StandardDesign
from .decompose import COLUMNS, NAMES, CellTable, Components, cells_from_params, decompose, decompose_cells
from .errors import DataError, DimensionMismatch, FitError
from .models import fit_models
from .oracles import DiscreteLaw, brute_force_components
from .uncertainty import _map, posterior_draws, stream, to_percent

SAMPLE_SIZES = (500, 1000, 2500, 5000)
DEFAULT_REPS = 200
DEFAULT_SUPERPOP = 10_000

# stream identifiers
_GEN, _TRUTH, _DRAWS = 10, 11, 12

# group model: rows (alpha, beta1, beta2) for z = 2, 3
PHI = ((0.2, 0.1, 0.2),
       (0.2, 0.2, 0.3))

# hospital model: rows (alpha, beta1, beta2, gamma_z2, gamma_z3) for a = 2..J
THETA_5 = ((0.1, 0.1, 0.2, 1.0, 0.1),
           (-0.2, 0.5, 0.5, 0.2, 0.5),
           (0.1, 0.1, 0.2, 0.3, 1.2),
           (0.1, 0.5, 0.5, -0.4, 0.7))
THETA_10 = THETA_5 + THETA_5 + ((0.2, 0.3, 0.3, 0.6, 0.6),)

# outcome model
BETA0 = -0.5
BETA = (1.4, -1.4)
THETA_Z = (-0.5, 1.0)
GAMMA_5 = (1.5, 0.5, 1.6, 0.0)
GAMMA_10 = (1.5, 0.5, 1.6, 0.0, 1.3, 0.0, 1.4, 0.0, 1.2)
# interaction vectors over a = 2..J, one per group level z = 2, 3
INTER_5 = ((1.0, 1.2, -0.2, -0.5),
           (-1.4, 1.5, -1.6, -0.3))
INTER_10 = ((1.0, 1.2, -0.2, -0.5, 1.2, 1.3, -0.5, -0.2, -0.2),
            (-1.4, 1.5, -1.6, -0.3, -1.4, 1.3, -1.5, 1.6, -0.4))

ERROR_SD = 1.0


def _mat(v):
    return np.array(v, dtype=float)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Data-generating mechanism X -> Z -> A -> Y with two covariates.

    X1 ~ Bernoulli(0.5), X2 ~ N(0, 1). ``phi`` is (K-1, 3), ``theta_a`` is
    (J-1, 3 + K-1), ``interaction[a-2, z-2]`` holds the outcome-model
    hospital-by-group coefficients. ``error_sd`` is the Gaussian error scale
    for the identity link.
    """

    name: str
    J: int
    K: int
    link: str
    phi: np.ndarray
    theta_a: np.ndarray
    beta0: float
    beta: np.ndarray
    gamma: np.ndarray
    theta_z: np.ndarray
    interaction: np.ndarray
    error_sd: float = ERROR_SD

    def __post_init__(self):
        for name in ("phi", "theta_a", "beta", "gamma", "theta_z", "interaction"):
            arr = _mat(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        J, K = int(self.J), int(self.K)
        if J < 2 or K < 2:
            raise DimensionMismatch("J and K must be at least 2")
        if self.link not in ("logit", "identity"):
            raise ValueError(f"unknown link {self.link!r}")
        expected = {
            "phi": (K - 1, 3), "theta_a": (J - 1, 3 + K - 1), "beta": (2,), "gamma": (J - 1,),
            "theta_z": (K - 1,), "interaction": (J - 1, K - 1),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} must have shape {shape}, got {getattr(self, name).shape}")
        if not self.error_sd >= 0:
            raise ValueError("error_sd must be non-negative")

    @property
    def outcome_kind(self):
        return "binary" if self.link == "logit" else "continuous"

    @property
    def design(self) -> StandardDesign:
        return StandardDesign(self.J, self.K, 2)

    def true_params(self):
        """(theta, eta, phi) in the layout of the standard design."""
        theta = np.concatenate([[self.beta0], self.beta, self.gamma, self.theta_z, self.interaction.ravel()])
        return theta, self.theta_a.copy(), self.phi.copy()

    def residual_sd(self):
        return self.error_sd if self.link == "identity" else None

    def to_dict(self):
        return {
            "name": self.name, "J": self.J, "K": self.K, "link": self.link,
            "phi": self.phi.tolist(), "theta_a": self.theta_a.tolist(), "beta0": self.beta0,
            "beta": self.beta.tolist(), "gamma": self.gamma.tolist(), "theta_z": self.theta_z.tolist(),
            "interaction": self.interaction.tolist(), "error_sd": self.error_sd,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=str(d.get("name", "custom")), J=int(d["J"]), K=int(d["K"]), link=d["link"],
                phi=d["phi"], theta_a=d["theta_a"], beta0=float(d["beta0"]), beta=d["beta"],
                gamma=d["gamma"], theta_z=d["theta_z"], interaction=d["interaction"],
                error_sd=float(d.get("error_sd", ERROR_SD)),
            )
        except KeyError as exc:
            raise DataError(f"scenario is missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid scenario: {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"scenario file is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise DataError("scenario file must hold a JSON object")
        return cls.from_dict(d)

    def zeroed(self):
        """Same dimensions and link with every coefficient set to zero."""
        return Scenario(
            f"{self.name}-zero", self.J, self.K, self.link, np.zeros_like(self.phi),
            np.zeros_like(self.theta_a), 0.0, np.zeros(2), np.zeros_like(self.gamma),
            np.zeros_like(self.theta_z), np.zeros_like(self.interaction), self.error_sd,
        )


def builtin(name: str) -> Scenario:
    """``j5-binary``, ``j10-binary``, ``j5-continuous`` or ``j10-continuous``."""
    try:
        size, kind = name.split("-")
        J = {"j5": 5, "j10": 10}[size]
        link = {"binary": "logit", "continuous": "identity"}[kind]
    except (ValueError, KeyError):
        raise DataError(f"unknown built-in scenario {name!r}") from None
    theta_a, gamma, inter = (THETA_5, GAMMA_5, INTER_5) if J == 5 else (THETA_10, GAMMA_10, INTER_10)
    return Scenario(name, J, 3, link, PHI, theta_a, BETA0, BETA, gamma, THETA_Z, _mat(inter).T)


BUILTINS = ("j5-binary", "j10-binary", "j5-continuous", "j10-continuous")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _categorical(probs, u):
    # inverse-CDF draw of 1-based codes, one uniform per row
    cdf = np.cumsum(probs, axis=1)
    codes = (u[:, None] > cdf[:, :-1]).sum(axis=1) + 1
    return codes


def _covariates(rng, n):
    x1 = (rng.random(n) < 0.5).astype(float)
    x2 = rng.standard_normal(n)
    return np.column_stack([x1, x2])


def generate(scenario: Scenario, n: int, seed: int, replicate: int | None = None) -> Dataset:
    """Draw n rows; with ``replicate`` set the draw uses that replicate's own stream."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream(seed, _GEN) if replicate is None else stream(seed, _GEN, replicate)
    x = _covariates(rng, n)
    design = scenario.design
    theta, eta, phi = scenario.true_params()
    pz = _softmax_rows(design.group_linear(phi, x))
    z = _categorical(pz, rng.random(n))
    hl = design.hospital_linear(eta, x)[np.arange(n), :, z - 1]
    a = _categorical(_softmax_rows(hl), rng.random(n))
    lin = design.outcome_matrix(x, a, z) @ theta
    if scenario.link == "logit":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-lin))).astype(float)
    else:
        y = lin + scenario.error_sd * rng.standard_normal(n)
    return Dataset(
        y=y, a=a, z=z, x=x, outcome_kind=scenario.outcome_kind,
        hospitals=CategoryMap("hospital", tuple(str(j) for j in range(1, scenario.J + 1))),
        groups=CategoryMap("group", tuple(str(k) for k in range(1, scenario.K + 1))),
        outcome_name="y", covariate_names=("x1", "x2"),
    )


def _softmax_rows(lin):
    full = np.column_stack([np.zeros(len(lin)), lin])
    full -= full.max(axis=1, keepdims=True)
    np.exp(full, out=full)
    return full / full.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Truth
# ---------------------------------------------------------------------------

def true_cells(scenario: Scenario, x, weights=None) -> CellTable:
    theta, eta, phi = scenario.true_params()
    return cells_from_params(scenario.design, x, theta, eta, phi, link=scenario.link,
                             outcome_kind=scenario.outcome_kind, residual_sd=scenario.residual_sd(),
                             weights=weights)


@dataclass(frozen=True, eq=False)
class TruthReport:
    components: Components
    superpop_n: int
    seed: int
    mc_se: np.ndarray  # nine entries, raw scale
    mc_se_percent: np.ndarray
    scenario: str = ""

    @property
    def percent(self) -> np.ndarray:
        return to_percent(self.components.vector()[None, :])[0]

    def as_dict(self):
        return {
            "scenario": self.scenario, "superpop_n": self.superpop_n, "seed": self.seed,
            "components": self.components.as_dict(),
            "percent": dict(zip(COLUMNS, self.percent.tolist())),
            "mc_se": dict(zip(COLUMNS, self.mc_se.tolist())),
            "mc_se_percent": dict(zip(COLUMNS, self.mc_se_percent.tolist())),
        }


def truth_from_cells(cells: CellTable, ddof: int = 1):
    """Components of a super-population plus Monte Carlo standard errors.

    Each averaged component is a row mean, so its MC SE is the row SD over
    sqrt(N); the case-mix term uses the squared deviations of mu(X_i). The
    percent-scale SEs use the delta method for the ratio to the total.
    """
    comp = decompose_cells(cells, ddof)
    terms, mux = row_terms(cells.m, cells.pA, cells.pZ, cells.v)
    N = cells.n
    sq = (mux - mux.mean()) ** 2
    per_row = np.column_stack([terms[:, :6], sq, terms[:, 6], terms[:, 7] + sq])
    se = per_row.std(axis=0, ddof=1) / math.sqrt(N)
    vec = comp.vector()
    total = vec[8]
    infl = (per_row[:, :8] - np.outer(per_row[:, 8], vec[:8] / total)) / total
    se_pct = np.append(100.0 * infl.std(axis=0, ddof=1) / math.sqrt(N), 0.0)
    return comp, se, se_pct


def true_components(scenario: Scenario, superpop_n: int = DEFAULT_SUPERPOP, seed: int = 0) -> TruthReport:
    """Evaluate every component at the known parameters over a drawn super-population of X."""
    if superpop_n < 1000:
        raise ValueError("superpop_n must be at least 1000")
    x = _covariates(stream(seed, _TRUTH), superpop_n)
    comp, se, se_pct = truth_from_cells(true_cells(scenario, x))
    return TruthReport(comp, superpop_n, seed, se, se_pct, scenario.name)


def quadrature_law(scenario: Scenario, nodes: int = 40) -> DiscreteLaw:
    """Discretize (X1, X2) with Gauss-Hermite nodes for X2 and the exact two-point law of X1."""
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    x = np.array([(x1, x2) for x1 in (0.0, 1.0) for x2 in t])
    probs = np.concatenate([0.5 * w, 0.5 * w])
    cells = true_cells(scenario, x)
    return DiscreteLaw(probs, cells.pZ, cells.pA, cells.m, cells.v)


def quadrature_truth(scenario: Scenario, nodes: int = 40) -> Components:
    """Population components by exhaustive enumeration over the discretized covariate law."""
    return brute_force_components(quadrature_law(scenario, nodes))


# ---------------------------------------------------------------------------
# Replication
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReplicationReport:
    """Per-replicate estimates for the fixed-effects plug-in estimator.

    ``estimates`` holds one row (w1..w8, total) per successful replicate;
    ``draw_se`` and ``draw_se_percent`` hold the per-replicate SD of the
    normal-approximation draws when requested.
    """

    scenario: str
    n: int
    seed: int
    replicates: tuple
    estimates: np.ndarray
    failures: tuple = ()
    draw_se: np.ndarray | None = None
    draw_se_percent: np.ndarray | None = None
    B: int = 0

    @property
    def reps(self):
        return len(self.replicates) + len(self.failures)

    def matrix(self, scale="raw"):
        return to_percent(self.estimates) if scale == "percent" else self.estimates

    def summary(self, scale="raw"):
        mat = self.matrix(scale)
        out = {"mean": mat.mean(axis=0), "median": np.median(mat, axis=0), "mc_sd": mat.std(axis=0, ddof=1)}
        se = self.draw_se_percent if scale == "percent" else self.draw_se
        if se is not None:
            out["mean_se"] = se.mean(axis=0)
            out["sd_minus_se"] = out["mc_sd"] - out["mean_se"]
        return out

    def as_dict(self):
        d = {
            "scenario": self.scenario, "n": self.n, "seed": self.seed, "reps": self.reps,
            "failures": list(self.failures), "B": self.B,
            "columns": list(COLUMNS),
            "estimates": self.estimates.tolist(),
        }
        for scale in ("raw", "percent"):
            d[f"summary_{scale}"] = {k: v.tolist() for k, v in self.summary(scale).items()}
        return d


def _replicate(task):
    scenario, n, seed, r, B = task
    data = generate(scenario, n, seed, replicate=r)
    try:
        models = fit_models(data)
        est = decompose(data, models).vector()
    except (FitError, DataError, np.linalg.LinAlgError):
        return r, None, None, None
    if not B:
        return r, est, None, None
    draws_seed = int(np.random.SeedSequence([seed, _DRAWS, r]).generate_state(1)[0])
    mat = posterior_draws(models, data, B, draws_seed).matrix
    return r, est, mat.std(axis=0, ddof=1), to_percent(mat).std(axis=0, ddof=1)


def run_replicates(scenario: Scenario, n: int, reps: int = DEFAULT_REPS, seed: int = 0, *,
                   with_draw_se: bool = False, B: int = 500, threads: int = 1) -> ReplicationReport:
    """generate -> fit -> decompose for each replicate (optionally with draw-based SEs)."""
    if reps < 2:
        raise ValueError("reps must be at least 2")
    B = B if with_draw_se else 0
    tasks = [(scenario, n, seed, r, B) for r in range(reps)]
    if threads and threads > 1:
        results = _map(_replicate, tasks, threads)
    else:
        results = [_replicate(t) for t in tasks]
    ok = [res for res in results if res[1] is not None]
    failures = tuple(res[0] for res in results if res[1] is None)
    if not ok:
        raise FitError(f"all {reps} replicates failed to fit")
    est = np.vstack([res[1] for res in ok])
    se = np.vstack([res[2] for res in ok]) if B else None
    se_pct = np.vstack([res[3] for res in ok]) if B else None
    return ReplicationReport(scenario.name, n, seed, tuple(res[0] for res in ok), est, failures, se, se_pct, B)


# ---------------------------------------------------------------------------
# Long-format figure data
# ---------------------------------------------------------------------------

def sampling_distribution_rows(reports, truth: TruthReport | None = None):
    """One row per (n, replicate, component): percent-scale estimate and truth."""
    rows = []
    true_pct = truth.percent if truth is not None else None
    for rep in reports:
        pct = rep.matrix("percent")
        for i, r in enumerate(rep.replicates):
            for k, name in enumerate(NAMES):
                rows.append({
                    "scenario": rep.scenario, "n": rep.n, "replicate": r, "component": name,
                    "estimate_percent": float(pct[i, k]),
                    "truth_percent": float(true_pct[k]) if true_pct is not None else float("nan"),
                })
    return rows


def sd_se_rows(reports, scale="percent"):
    """One row per (n, component): MC SD, mean draw SE and their difference."""
    rows = []
    for rep in reports:
        s = rep.summary(scale)
        if "mean_se" not in s:
            continue
        for k, name in enumerate(NAMES):
            rows.append({
                "scenario": rep.scenario, "n": rep.n, "component": name, "mc_sd": float(s["mc_sd"][k]),
                "mean_se": float(s["mean_se"][k]), "sd_minus_se": float(s["sd_minus_se"][k]),
            })
    return rows

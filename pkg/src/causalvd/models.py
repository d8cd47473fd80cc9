"""Maximum-likelihood fitting of the outcome GLM and the two multinomial assignment models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import expit, logsumexp

from .data import Dataset, Design, StandardDesign
from .errors import DimensionMismatch, NotConverged, RankDeficientDesign

MAX_ITER = 100
MAX_HALVINGS = 30
GRAD_TOL = 1e-8
SEPARATION_EPS = 1e-12

LINKS = ("logit", "identity")


@dataclass(frozen=True, eq=False)
class GlmFit:
    theta: np.ndarray
    vcov: np.ndarray
    link: str
    converged: bool
    log_likelihood: float
    residual_sd: Optional[float] = None
    iterations: int = 0
    gradient_norm: float = 0.0
    separation: bool = False
    names: tuple[str, ...] = ()
    loglik_path: tuple[float, ...] = ()

    def to_dict(self):
        return {
            "link": self.link,
            "names": list(self.names),
            "coef": self.theta.tolist(),
            "vcov": self.vcov.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "log_likelihood": self.log_likelihood,
            "separation": self.separation,
            "residual_sd": self.residual_sd,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            theta=np.asarray(d["coef"], dtype=float), vcov=np.asarray(d["vcov"], dtype=float),
            link=d["link"], converged=d["converged"], log_likelihood=d["log_likelihood"],
            residual_sd=d.get("residual_sd"), iterations=d.get("iterations", 0),
            gradient_norm=d.get("gradient_norm", 0.0), separation=d.get("separation", False),
            names=tuple(d.get("names", ())),
        )


@dataclass(frozen=True, eq=False)
class MultinomialFit:
    coef: np.ndarray  # (L - 1, q); level 1 is the reference with implicit zeros
    vcov: np.ndarray  # ((L - 1) * q) square, level-major ordering
    response_levels: int
    converged: bool
    log_likelihood: float = 0.0
    iterations: int = 0
    gradient_norm: float = 0.0
    separation: bool = False
    names: tuple[str, ...] = ()
    loglik_path: tuple[float, ...] = ()

    def to_dict(self):
        return {
            "response_levels": self.response_levels,
            "names": list(self.names),
            "coef": self.coef.tolist(),
            "vcov": self.vcov.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "log_likelihood": self.log_likelihood,
            "separation": self.separation,
        }

    @classmethod
    def from_dict(cls, d):
        coef = np.asarray(d["coef"], dtype=float)
        return cls(
            coef=coef.reshape(d["response_levels"] - 1, -1), vcov=np.asarray(d["vcov"], dtype=float),
            response_levels=d["response_levels"], converged=d["converged"],
            log_likelihood=d.get("log_likelihood", 0.0), iterations=d.get("iterations", 0),
            gradient_norm=d.get("gradient_norm", 0.0), separation=d.get("separation", False),
            names=tuple(d.get("names", ())),
        )


# ---------------------------------------------------------------------------
# Newton-Raphson with step-halving
# ---------------------------------------------------------------------------

@dataclass
class _NewtonResult:
    beta: np.ndarray
    info: np.ndarray
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    path: list = field(default_factory=list)


def _solve_pd(info, g):
    try:
        return scipy.linalg.solve(info, g, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(info, g, rcond=None)[0]


def _newton(loglik, derivs, size, free=None, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Maximise ``loglik`` over the ``free`` coordinates starting from zero.

    ``derivs(beta)`` returns ``(loglik, gradient, information)`` on the full
    parameter vector; fixed coordinates stay at zero.
    """
    free = np.arange(size) if free is None else np.asarray(free)
    beta = np.zeros(size)
    ll, g, info = derivs(beta)
    path = [ll]
    it = 0
    while True:
        gf = g[free]
        gnorm = float(np.max(np.abs(gf))) if gf.size else 0.0
        if gnorm < tol or it >= max_iter:
            break
        step = _solve_pd(info[np.ix_(free, free)], gf)
        slack = 1e-12 * (1.0 + abs(ll))
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta.copy()
            cand[free] += t * step
            ll_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            # no step improves the likelihood: at the optimum up to roundoff
            break
        beta = cand
        ll, g, info = derivs(beta)
        path.append(ll)
        it += 1
    if it and gnorm < tol and gnorm > 0:
        # one extra Newton step: quadratic convergence takes the score from tol to roundoff
        cand = beta.copy()
        cand[free] += _solve_pd(info[np.ix_(free, free)], gf)
        ll_new = loglik(cand)
        if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
            beta = cand
            ll, g, info = derivs(beta)
    gf = g[free]
    gnorm = float(np.max(np.abs(gf))) if gf.size else 0.0
    return _NewtonResult(beta, info, ll, gnorm, it, gnorm < tol, path)


def _check_rank(X, names=None):
    if X.shape[1] == 0:
        return
    if X.shape[0] < X.shape[1]:
        dep = list(range(X.shape[0], X.shape[1]))
    else:
        R, piv = scipy.linalg.qr(X, mode="r", pivoting=True)
        d = np.abs(np.diag(R))
        tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
        rank = int(np.sum(d > tol))
        dep = sorted(piv[rank:].tolist())
    if dep:
        raise RankDeficientDesign([names[j] for j in dep] if names else dep)


def _inverse_information(info_free, free, size):
    vcov = np.zeros((size, size))
    if len(free):
        inv = scipy.linalg.inv(info_free)
        vcov[np.ix_(free, free)] = 0.5 * (inv + inv.T)
    return vcov


# ---------------------------------------------------------------------------
# Outcome GLM
# ---------------------------------------------------------------------------

def _logit_loglik(X, y, beta):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _logit_derivs(X, y, beta):
    eta = X @ beta
    mu = expit(eta)
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    g = X.T @ (y - mu)
    w = mu * (1.0 - mu)
    info = (X * w[:, None]).T @ X
    return ll, g, info


def fit_glm(data, y=None, link=None, *, mask=None, names=None, strict=True) -> GlmFit:
    """Fit the outcome model by maximum likelihood.

    ``data`` is either a :class:`Dataset` (the standard fixed-effects design
    is built from it and ``link`` defaults to the outcome kind) or a design
    matrix accompanied by ``y``. ``mask`` marks coefficients that are free;
    masked-out coefficients are held at zero. With ``strict`` a
    non-converged fit raises :class:`NotConverged`.
    """
    if isinstance(data, Dataset):
        design = StandardDesign.for_dataset(data)
        X = design.outcome_matrix(data.x, data.a, data.z)
        y = data.y
        names = names or design.outcome_names(data.covariate_names)
        link = link or ("logit" if data.outcome_kind == "binary" else "identity")
    else:
        X = np.asarray(data, dtype=float)
    y = np.asarray(y, dtype=float)
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}")
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise DimensionMismatch("design matrix rows must match outcome length")
    q = X.shape[1]
    free = np.arange(q) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    names = tuple(names) if names else tuple(f"b{j}" for j in range(q))
    _check_rank(X[:, free], [names[j] for j in free])

    if link == "identity":
        return _fit_gaussian(X, y, free, names)

    res = _newton(lambda b: _logit_loglik(X, y, b), lambda b: _logit_derivs(X, y, b), q, free)
    if strict and not res.converged:
        raise NotConverged(res.iterations, res.gradient_norm)
    mu = expit(X @ res.beta)
    sep = bool(np.any(mu < SEPARATION_EPS) or np.any(mu > 1.0 - SEPARATION_EPS))
    vcov = _inverse_information(res.info[np.ix_(free, free)], free, q)
    return GlmFit(
        theta=res.beta, vcov=vcov, link="logit", converged=res.converged, log_likelihood=res.loglik,
        iterations=res.iterations, gradient_norm=res.gradient_norm, separation=sep, names=names,
        loglik_path=tuple(res.path),
    )


def _fit_gaussian(X, y, free, names):
    n, q = X.shape
    Xf = X[:, free]
    beta = np.zeros(q)
    if len(free):
        beta[free] = scipy.linalg.lstsq(Xf, y)[0]
        # one step of iterative refinement
        beta[free] += scipy.linalg.lstsq(Xf, y - X @ beta)[0]
    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / n
    if sigma2 > 0:
        ll = -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0)
        g = Xf.T @ resid / sigma2
        vcov = _inverse_information(Xf.T @ Xf / sigma2, free, q)
    else:
        ll = np.inf
        g = Xf.T @ resid
        vcov = np.zeros((q, q))
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = gnorm < GRAD_TOL
    # unbiased residual variance: RSS over the residual degrees of freedom
    df = n - len(free)
    resid_sd = float(np.sqrt(rss / df)) if df > 0 else 0.0
    return GlmFit(
        theta=beta, vcov=vcov, link="identity", converged=converged, log_likelihood=ll,
        residual_sd=resid_sd, iterations=1, gradient_norm=gnorm, names=names, loglik_path=(ll,),
    )


def predict_mean(fit: GlmFit, row) -> float:
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != fit.theta.shape[0]:
        raise DimensionMismatch(f"row has length {row.shape[-1]}, model has {fit.theta.shape[0]} coefficients")
    eta = row @ fit.theta
    return expit(eta) if fit.link == "logit" else eta


def conditional_variance(fit: GlmFit, row, outcome_kind: str) -> float:
    """Plug-in V(Y | A, Z, X): Bernoulli m(1 - m), or the pooled residual variance."""
    m = predict_mean(fit, row)
    if outcome_kind == "binary":
        return m * (1.0 - m)
    if fit.residual_sd is None:
        raise ValueError("continuous outcome requires a fit with residual_sd")
    return np.zeros_like(m) + fit.residual_sd ** 2


# ---------------------------------------------------------------------------
# Multinomial logit
# ---------------------------------------------------------------------------

def _softmax_ref(eta):
    """Probabilities for a reference-coded multinomial; ``eta`` is (..., L-1)."""
    full = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=-1, keepdims=True)
    return full


def _mn_loglik(F, onehot, L, b):
    eta = F @ b.reshape(L - 1, -1).T
    full = np.hstack([np.zeros((len(F), 1)), eta])
    return float(np.sum(full * onehot) - np.sum(logsumexp(full, axis=1)))


def _mn_derivs(F, onehot, L, b):
    n, q = F.shape
    eta = F @ b.reshape(L - 1, q).T
    full = np.hstack([np.zeros((n, 1)), eta])
    lse = logsumexp(full, axis=1)
    ll = float(np.sum(full * onehot) - np.sum(lse))
    P = np.exp(eta - lse[:, None])
    g = ((onehot[:, 1:] - P).T @ F).ravel()
    G = (P[:, :, None] * F[:, None, :]).reshape(n, -1)
    info = -(G.T @ G)
    diag = np.einsum("nl,ni,nj->lij", P, F, F)
    for l in range(L - 1):
        info[l * q:(l + 1) * q, l * q:(l + 1) * q] += diag[l]
    return ll, g, info


def fit_multinomial(features, labels, L: int, *, mask=None, names=None, strict=True) -> MultinomialFit:
    """Reference-coded multinomial logistic regression; ``labels`` are codes 1..L."""
    F = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if F.ndim != 2 or len(labels) != F.shape[0]:
        raise DimensionMismatch("features rows must match label length")
    if labels.size and (labels.min() < 1 or labels.max() > L):
        raise ValueError(f"labels must lie in 1..{L}")
    n, q = F.shape
    size = (L - 1) * q
    names = tuple(names) if names else tuple(f"f{j}" for j in range(q))
    if mask is None:
        free = np.arange(size)
        _check_rank(F, list(names))
    else:
        mask = np.asarray(mask, dtype=bool).reshape(L - 1, q)
        free = np.flatnonzero(mask.ravel())
        for l in range(L - 1):
            _check_rank(F[:, mask[l]], [f"{names[j]}[{l + 2}]" for j in np.flatnonzero(mask[l])])
    onehot = np.zeros((n, L))
    onehot[np.arange(n), labels - 1] = 1.0

    res = _newton(lambda b: _mn_loglik(F, onehot, L, b), lambda b: _mn_derivs(F, onehot, L, b), size, free)
    if strict and not res.converged:
        raise NotConverged(res.iterations, res.gradient_norm)
    coef = res.beta.reshape(L - 1, q)
    P = _softmax_ref(F @ coef.T)
    sep = bool(np.any(P < SEPARATION_EPS) or np.any(P > 1.0 - SEPARATION_EPS))
    vcov = _inverse_information(res.info[np.ix_(free, free)], free, size)
    return MultinomialFit(
        coef=coef, vcov=vcov, response_levels=L, converged=res.converged, log_likelihood=res.loglik,
        iterations=res.iterations, gradient_norm=res.gradient_norm, separation=sep, names=names,
        loglik_path=tuple(res.path),
    )


def predict_probs(fit: MultinomialFit, feature_row) -> np.ndarray:
    row = np.asarray(feature_row, dtype=float)
    if row.shape[-1] != fit.coef.shape[1]:
        raise DimensionMismatch(f"feature row has length {row.shape[-1]}, model expects {fit.coef.shape[1]}")
    return _softmax_ref(row @ fit.coef.T)


# ---------------------------------------------------------------------------
# The three plug-in models together
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedModels:
    outcome: GlmFit
    hospital: MultinomialFit
    group: MultinomialFit
    design: Design
    outcome_kind: str

    @property
    def dims(self):
        return (self.design.J, self.design.K, self.design.p)

    def to_dict(self):
        return {
            "dims": {"J": self.design.J, "K": self.design.K, "p": self.design.p},
            "outcome_kind": self.outcome_kind,
            "outcome": self.outcome.to_dict(),
            "hospital": self.hospital.to_dict(),
            "group": self.group.to_dict(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d, design=None):
        dims = d["dims"]
        design = design or StandardDesign(dims["J"], dims["K"], dims["p"])
        return cls(
            outcome=GlmFit.from_dict(d["outcome"]), hospital=MultinomialFit.from_dict(d["hospital"]),
            group=MultinomialFit.from_dict(d["group"]), design=design, outcome_kind=d["outcome_kind"],
        )


def fit_models(dataset: Dataset, design: Design | None = None, *, outcome_mask=None,
               hospital_mask=None, group_mask=None, strict=True) -> FittedModels:
    """Fit outcome, hospital-assignment and group-membership models on ``dataset``.

    The masks are the hook for zero constraints on selected coefficients
    (``True`` = estimated); none are applied by default.
    """
    design = design or StandardDesign.for_dataset(dataset)
    link = "logit" if dataset.outcome_kind == "binary" else "identity"
    cov = dataset.covariate_names
    named = isinstance(design, StandardDesign)
    outcome = fit_glm(
        design.outcome_matrix(dataset.x, dataset.a, dataset.z), dataset.y, link, mask=outcome_mask,
        names=design.outcome_names(cov) if named else None, strict=strict,
    )
    hospital = fit_multinomial(
        design.hospital_matrix(dataset.x, dataset.z), dataset.a, dataset.J, mask=hospital_mask,
        names=design.hospital_names(cov) if named else None, strict=strict,
    )
    group = fit_multinomial(
        design.group_matrix(dataset.x), dataset.z, dataset.K, mask=group_mask,
        names=design.group_names(cov) if named else None, strict=strict,
    )
    return FittedModels(outcome, hospital, group, design, dataset.outcome_kind)

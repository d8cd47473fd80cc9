"""Reference implementations of the decomposition over finite covariate supports.

These are deliberately naive: every term is an explicit nested sum over
(x, z, a) with compensated summation, and the total variance is computed
directly from the law's first two moments rather than from the components.
They exist to validate the vectorized estimators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .decompose import Components
from .errors import DimensionMismatch, UnsupportedDims

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteLaw:
    """Joint law of (X, Z, A) with moment-specified outcomes on a finite X support.

    ``probs[s]`` is P(X = x_s), ``pZ[s, z]`` is P(Z=z | x_s), ``pA[s, a, z]``
    is P(A=a | z, x_s), and ``m[s, a, z]`` / ``v[s, a, z]`` are the outcome
    mean and variance in cell (a, z) at x_s. Indices are 0-based.
    """

    probs: np.ndarray
    pZ: np.ndarray
    pA: np.ndarray
    m: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("probs", "pZ", "pA", "m", "v"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        S = self.probs.shape[0]
        if self.pZ.ndim != 2 or self.pZ.shape[0] != S:
            raise DimensionMismatch("pZ must have shape (S, K)")
        K = self.pZ.shape[1]
        if self.pA.ndim != 3 or self.pA.shape[0] != S or self.pA.shape[2] != K:
            raise DimensionMismatch("pA must have shape (S, J, K)")
        if self.m.shape != self.pA.shape or self.v.shape != self.pA.shape:
            raise DimensionMismatch("m and v must have the shape of pA")
        for name, arr in (("probs", self.probs), ("pZ", self.pZ), ("pA", self.pA)):
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if abs(math.fsum(self.probs) - 1.0) > _PROB_TOL:
            raise ValueError("support probabilities must sum to 1")
        if np.any(np.abs(self.pZ.sum(axis=1) - 1.0) > _PROB_TOL):
            raise ValueError("P(Z | x) must sum to 1 for every support point")
        if np.any(np.abs(self.pA.sum(axis=1) - 1.0) > _PROB_TOL):
            raise ValueError("P(A | z, x) must sum to 1 for every (x, z)")
        if np.any(self.v < 0):
            raise ValueError("outcome variances must be non-negative")

    @property
    def S(self):
        return self.probs.shape[0]

    @property
    def J(self):
        return self.pA.shape[1]

    @property
    def K(self):
        return self.pZ.shape[1]

    @classmethod
    def dichotomous(cls, probs, xi, pi, m, v=None):
        """Build a J = K = 2 law from the shorthand tables.

        ``xi[s]`` = P(Z=2nd level | x_s); ``pi[s, z]`` = P(A=2nd level | z, x_s);
        ``m[s, a, z]`` outcome means. ``v`` defaults to Bernoulli variances.
        """
        probs = np.asarray(probs, dtype=float)
        xi = np.asarray(xi, dtype=float).reshape(-1)
        pi = np.asarray(pi, dtype=float).reshape(len(probs), 2)
        m = np.asarray(m, dtype=float).reshape(len(probs), 2, 2)
        pZ = np.stack([1 - xi, xi], axis=1)
        pA = np.stack([1 - pi, pi], axis=1)
        if v is None:
            v = m * (1 - m)
        return cls(probs, pZ, pA, m, v)

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in ("probs", "pZ", "pA", "m", "v")}

    @classmethod
    def from_dict(cls, d):
        return cls(d["probs"], d["pZ"], d["pA"], d["m"], d["v"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def total_variance(self) -> float:
        """V[Y] from the law's first two moments."""
        ey, ey2 = [], []
        for s in range(self.S):
            for z in range(self.K):
                for a in range(self.J):
                    w = self.probs[s] * self.pZ[s, z] * self.pA[s, a, z]
                    ey.append(w * self.m[s, a, z])
                    ey2.append(w * (self.m[s, a, z] ** 2 + self.v[s, a, z]))
        mean = math.fsum(ey)
        return math.fsum(ey2) - mean * mean


def random_law(rng, S, J, K, outcome="binary", concentration=1.0, floor=0.0):
    """A random law for property tests; ``floor`` bounds probabilities away from 0."""
    probs = rng.dirichlet(np.full(S, concentration))
    pZ = rng.dirichlet(np.full(K, concentration), size=S)
    pA = np.transpose(rng.dirichlet(np.full(J, concentration), size=(S, K)), (0, 2, 1))
    if floor:
        probs = (probs + floor) / (1 + S * floor)
        pZ = (pZ + floor) / (1 + K * floor)
        pA = (pA + floor) / (1 + J * floor)
    if outcome == "binary":
        m = rng.uniform(0.02, 0.98, size=(S, J, K))
        v = m * (1 - m)
    else:
        m = rng.normal(size=(S, J, K))
        v = rng.gamma(2.0, 0.5, size=(S, J, K))
    return DiscreteLaw(probs, pZ, pA, m, v)


@dataclass(frozen=True)
class OracleTerms:
    """Eight components plus the coarser three- and six-way terms they refine."""

    components: Components
    threeway: dict
    sixway: dict


def _fsum(values):
    return math.fsum(values)


def brute_force(law: DiscreteLaw) -> OracleTerms:
    S, J, K = law.S, law.J, law.K
    px, pZ, pA, m, v = law.probs, law.pZ, law.pA, law.m, law.v
    w = {k: [] for k in ("w1", "w2", "w3", "w4", "w5", "w6", "w8", "group", "hosp", "within")}
    mu_x_all = []
    for s in range(S):
        # mu(z, z*, x)
        mu = [[_fsum(m[s, a, z] * pA[s, a, zs] for a in range(J)) for zs in range(K)] for z in range(K)]
        mu_z = [mu[z][z] for z in range(K)]
        mu_zdot = [_fsum(mu[z][zs] * pZ[s, zs] for zs in range(K)) for z in range(K)]
        mu_dd = _fsum(mu_z[z] * pZ[s, z] for z in range(K))
        mu_x_all.append(mu_dd)

        ind = [mu_z[z] - mu_zdot[z] for z in range(K)]
        dr = [mu_zdot[z] - mu_dd for z in range(K)]
        w["w1"].append(px[s] * _fsum(ind[z] ** 2 * pZ[s, z] for z in range(K)))
        w["w2"].append(px[s] * _fsum(dr[z] ** 2 * pZ[s, z] for z in range(K)))
        w["w3"].append(px[s] * _fsum(2 * ind[z] * dr[z] * pZ[s, z] for z in range(K)))
        w["group"].append(px[s] * _fsum((mu_z[z] - mu_dd) ** 2 * pZ[s, z] for z in range(K)))

        main, em, ds = [], [], []
        for a in range(J):
            tau = [m[s, a, z] - mu_z[z] for z in range(K)]
            e_tau = _fsum(tau[z] * pZ[s, z] for z in range(K))
            e_p = _fsum(pA[s, a, z] * pZ[s, z] for z in range(K))
            var_tau = _fsum((tau[z] - e_tau) ** 2 * pZ[s, z] for z in range(K))
            e_tsq = _fsum(tau[z] ** 2 * pZ[s, z] for z in range(K))
            cov = _fsum((tau[z] ** 2 - e_tsq) * (pA[s, a, z] - e_p) * pZ[s, z] for z in range(K))
            main.append(e_tau ** 2 * e_p)
            em.append(var_tau * e_p)
            ds.append(cov)
        w["w4"].append(px[s] * _fsum(main))
        w["w5"].append(px[s] * _fsum(em))
        w["w6"].append(px[s] * _fsum(ds))
        # E_Z V_{A|Z}[m], computed directly as a variance over A
        w["hosp"].append(px[s] * _fsum(
            pZ[s, z] * _fsum(pA[s, a, z] * (m[s, a, z] - mu_z[z]) ** 2 for a in range(J)) for z in range(K)
        ))
        w["w8"].append(px[s] * _fsum(
            pZ[s, z] * _fsum(v[s, a, z] * pA[s, a, z] for a in range(J)) for z in range(K)
        ))

    sums = {k: _fsum(vals) for k, vals in w.items()}
    mean_mu = _fsum(px[s] * mu_x_all[s] for s in range(S))
    w7 = _fsum(px[s] * (mu_x_all[s] - mean_mu) ** 2 for s in range(S))
    total = law.total_variance()
    comp = Components(sums["w1"], sums["w2"], sums["w3"], sums["w4"], sums["w5"], sums["w6"],
                      w7, sums["w8"], total=total, n_used=S)
    threeway = {"group": sums["group"], "hospital": sums["hosp"], "residual": sums["w8"], "case_mix": w7}
    sixway = {
        "group": sums["group"], "main_hospital": sums["w4"], "effect_modification": sums["w5"],
        "differential_selection": sums["w6"], "case_mix": w7, "residual": sums["w8"],
    }
    return OracleTerms(comp, threeway, sixway)


def brute_force_components(law: DiscreteLaw) -> Components:
    """Eight components by literal enumeration; ``total`` is V[Y] from the law's moments."""
    return brute_force(law).components


def dichotomous_components(law: DiscreteLaw) -> Components:
    """Closed-form components for two hospitals and two groups.

    Written in the shorthand xi = P(Z=1|x), pi(z) = P(A=1|z,x) with level 0
    the reference, following the dichotomous-case expressions. The group
    covariance term is 2 * sum_z delta_ind * delta_dir * P(z|x) (unsquared).
    """
    if law.J != 2 or law.K != 2:
        raise UnsupportedDims(f"dichotomous closed forms need J = K = 2, got J={law.J}, K={law.K}")
    parts = {k: [] for k in ("w1", "w2", "w3", "w4", "w5", "w6", "w8")}
    s_vals = []
    for s in range(law.S):
        p = law.probs[s]
        xi = law.pZ[s, 1]
        pi0, pi1 = law.pA[s, 1, 0], law.pA[s, 1, 1]
        m00, m10, m01, m11 = law.m[s, 0, 0], law.m[s, 1, 0], law.m[s, 0, 1], law.m[s, 1, 1]
        v00, v10, v01, v11 = law.v[s, 0, 0], law.v[s, 1, 0], law.v[s, 0, 1], law.v[s, 1, 1]
        pi_x = (1 - xi) * pi0 + xi * pi1

        # mu(z, z*): outcomes of group z under group z*'s hospital mix
        mu00 = m00 * (1 - pi0) + m10 * pi0
        mu01 = m00 * (1 - pi1) + m10 * pi1
        mu10 = m01 * (1 - pi0) + m11 * pi0
        mu11 = m01 * (1 - pi1) + m11 * pi1
        mu0dot = mu00 * (1 - xi) + mu01 * xi
        mu1dot = mu10 * (1 - xi) + mu11 * xi
        mudd = mu00 * (1 - xi) + mu11 * xi

        parts["w1"].append(p * ((mu00 - mu0dot) ** 2 * (1 - xi) + (mu11 - mu1dot) ** 2 * xi))
        parts["w2"].append(p * ((mu0dot - mudd) ** 2 * (1 - xi) + (mu1dot - mudd) ** 2 * xi))
        parts["w3"].append(p * (2 * (mu00 - mu0dot) * (mu0dot - mudd) * (1 - xi)
                                + 2 * (mu11 - mu1dot) * (mu1dot - mudd) * xi))

        # tau_a(z) = m_az - mu(z, z)
        t00, t01 = m00 - mu00, m01 - mu11
        t10, t11 = m10 - mu00, m11 - mu11
        parts["w4"].append(p * ((t00 * (1 - xi) + t01 * xi) ** 2 * (1 - pi_x)
                                + (t10 * (1 - xi) + t11 * xi) ** 2 * pi_x))
        parts["w5"].append(p * (xi * (1 - xi) * (t01 - t00) ** 2 * (1 - pi_x)
                                + xi * (1 - xi) * (t11 - t10) ** 2 * pi_x))
        parts["w6"].append(p * xi * (1 - xi) * (pi0 - pi1)
                           * ((t01 ** 2 - t00 ** 2) - (t11 ** 2 - t10 ** 2)))
        s_vals.append((1 - xi) * (m00 * (1 - pi0) + m10 * pi0) + xi * (m01 * (1 - pi1) + m11 * pi1))
        parts["w8"].append(p * ((1 - xi) * (v00 * (1 - pi0) + v10 * pi0) + xi * (v01 * (1 - pi1) + v11 * pi1)))

    sums = {k: math.fsum(vals) for k, vals in parts.items()}
    mean_s = math.fsum(law.probs[s] * s_vals[s] for s in range(law.S))
    w7 = math.fsum(law.probs[s] * (s_vals[s] - mean_s) ** 2 for s in range(law.S))
    return Components(sums["w1"], sums["w2"], sums["w3"], sums["w4"], sums["w5"], sums["w6"], w7,
                      sums["w8"], total=law.total_variance(), n_used=law.S)


def law_from_cells(cells, weights=None) -> DiscreteLaw:
    """Treat the rows of a ``CellTable`` as the support of a discrete law."""
    w = cells.weights if weights is None else np.asarray(weights, dtype=float) / math.fsum(weights)
    return DiscreteLaw(w, cells.pZ, cells.pA, cells.m, cells.v)

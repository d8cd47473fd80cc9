"""Pure numpy implementation of the per-row component reduction (fallback backend)."""

import math

import numpy as np


def row_terms(m, pA, pZ, v):
    """Per-row integrands, shape (n, 8): w1..w6, w8 and the within-X variance; plus mu(X_i)."""
    mu_cross = np.einsum("naz,nas->nzs", m, pA)  # mu(z, z*, X_i)
    mu_z = np.einsum("nzz->nz", mu_cross)
    mu_zdot = np.einsum("nzs,ns->nz", mu_cross, pZ)
    mu_dd = np.einsum("nz,nz->n", mu_z, pZ)
    d_ind = mu_z - mu_zdot
    d_dir = mu_zdot - mu_dd[:, None]

    tau = m - mu_z[:, None, :]
    pbar = np.einsum("naz,nz->na", pA, pZ)
    taubar = np.einsum("naz,nz->na", tau, pZ)
    tsq = tau * tau
    em = np.einsum("naz,nz->na", (tau - taubar[:, :, None]) ** 2, pZ)
    dev = m - mu_dd[:, None, None]
    joint = pA * pZ[:, None, :]

    out = np.empty((len(m), 8))
    out[:, 0] = np.einsum("nz,nz->n", d_ind * d_ind, pZ)
    out[:, 1] = np.einsum("nz,nz->n", d_dir * d_dir, pZ)
    out[:, 2] = 2.0 * np.einsum("nz,nz->n", d_ind * d_dir, pZ)
    out[:, 3] = np.einsum("na,na->n", taubar * taubar, pbar)
    out[:, 4] = np.einsum("na,na->n", em, pbar)
    out[:, 5] = np.einsum("naz,naz->n", tsq, joint) - np.einsum("na,na->n", np.einsum("naz,nz->na", tsq, pZ), pbar)
    out[:, 6] = np.einsum("naz,naz->n", v, joint)
    out[:, 7] = np.einsum("naz,naz->n", dev * dev + v, joint)
    return out, mu_dd


def reduce_components(m, pA, pZ, v, w):
    terms, mux = row_terms(m, pA, pZ, v)
    weighted = terms * np.asarray(w)[:, None]
    sums = np.array([math.fsum(weighted[:, k]) for k in range(8)])
    return sums, mux


def _softmax_with_reference(lin, axis):
    # prepend a zero reference level along ``axis`` and normalize
    shape = list(lin.shape)
    shape[axis] = 1
    full = np.concatenate([np.zeros(shape), lin], axis=axis)
    full -= full.max(axis=axis, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=axis, keepdims=True)
    return full


def standard_cells(base, offset, hbase, zoff, glin, logit, sigma2):
    """Cell arrays (m, pA, pZ, v) from structured linear predictors."""
    lin = base[:, None, None] + offset[None, :, :]
    if logit:
        m = 1.0 / (1.0 + np.exp(-lin))
        v = m * (1.0 - m)
    else:
        m = lin
        v = np.full_like(m, sigma2)
    pA = _softmax_with_reference(hbase[:, :, None] + zoff[None, :, :], 1)
    pZ = _softmax_with_reference(glin, 1)
    return m, pA, pZ, v


def reduce_standard(base, offset, hbase, zoff, glin, logit, sigma2, w):
    return reduce_components(*standard_cells(base, offset, hbase, zoff, glin, logit, sigma2), w)

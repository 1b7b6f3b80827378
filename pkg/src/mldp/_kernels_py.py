"""Pure-numpy implementations of the hot kernels.

Components are passed in precision-Cholesky form: ``prec_chol[k]`` is the
lower-triangular ``T`` with ``inv(Sigma_k) = T @ T.T`` and ``log_det[k]`` is
``log|Sigma_k|``.
"""
import math
from functools import lru_cache

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def covariate_loglik(X, mu, prec_chol, log_det):
    """log N(x_n; mu_k, Sigma_k) for every row n and component k -> (n, K)."""
    X = np.atleast_2d(X)
    P = X.shape[1]
    d = X[:, None, :] - mu[None, :, :]
    z = np.einsum("kij,nki->nkj", prec_chol, d)
    quad = np.einsum("nkj,nkj->nk", z, z)
    return -0.5 * (P * LOG_2PI + log_det[None, :] + quad)


def joint_loglik(x, y, mu, prec_chol, log_det, beta, sigma_y2):
    """log N(x; mu_k, Sigma_k) + log N(y; x.beta_k, sigma_y2_k) -> (K,)."""
    P = x.shape[0]
    d = x[None, :] - mu
    z = np.einsum("kij,ki->kj", prec_chol, d)
    quad = np.einsum("kj,kj->k", z, z)
    r = y - beta @ x
    return -0.5 * (P * LOG_2PI + log_det + quad) - 0.5 * (LOG_2PI + np.log(sigma_y2) + r * r / sigma_y2)


def draw_log_categorical(logits, u):
    """Inverse-CDF draw from unnormalised log-probabilities with uniform ``u``."""
    m = np.max(logits)
    if not np.isfinite(m):
        return -1
    cum = np.cumsum(np.exp(logits - m))
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(idx, len(cum) - 1)


@lru_cache(maxsize=None)
def _tril(P):
    return np.tril_indices(P, -1)


def assemble_atoms(chi, off, zmu, zb, psi_inv_chol, V_chol, mu, beta_mean, lam, sigma_y2):
    """Turn the raw normal/chi-square draws of a batch into atoms.

    Bartlett factor ``A`` (sqrt(chi) on the diagonal, ``off`` below it in
    ``tril`` order), precision Cholesky ``T = psi_inv_chol @ A``,
    ``mu = m + T^{-T} zmu / sqrt(lam)`` and ``beta = b + sqrt(s2) V_chol zb``.
    Returns ``(mu, T, log_det_Sigma, beta)``.
    """
    n, P = chi.shape
    A = np.zeros((n, P, P))
    A[:, np.arange(P), np.arange(P)] = np.sqrt(chi)
    rows, cols = _tril(P)
    A[:, rows, cols] = off
    T = psi_inv_chol @ A
    log_det = -2.0 * np.log(np.diagonal(T, axis1=1, axis2=2)).sum(axis=1)
    mu_draw = mu + np.linalg.solve(np.swapaxes(T, 1, 2), zmu[..., None])[..., 0] / np.sqrt(lam)
    beta = beta_mean + np.sqrt(sigma_y2)[:, None] * (zb @ V_chol.T)
    return mu_draw, T, log_det, beta

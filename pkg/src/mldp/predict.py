"""Posterior-predictive point predictions from a fitted trace.

For each snapshot, the responsibility of live cluster k on basis b for a
request (x, g) is proportional to

    w[g, b] * l_k / (L_b + alpha_b) * N(x; mu_k, Sigma_k)

and each basis also carries a new-cluster candidate proportional to
``w[g, b] * alpha_b / (L_b + alpha_b) * p_H(x)``, where ``p_H`` is the prior
predictive covariate density (multivariate t) of that basis' base prior.
The new-cluster candidate predicts the prior mean response, 0. The snapshot
prediction is the responsibility-weighted sum of x . beta_k, and the final
prediction averages snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError, StateError
from .gibbs import Snapshot, Trace
from .multiindex import GroupIndex, flat_index
from .prior import log_weight_matrix


@dataclass(frozen=True)
class PredictionRequest:
    x: np.ndarray
    g: GroupIndex


@dataclass
class Prediction:
    mean: float
    per_snapshot: np.ndarray


def _snapshot_arrays(snap: Snapshot, P: int):
    cl = snap.clusters
    mu = np.stack([k.phi.mu_x for k in cl]) if cl else np.empty((0, P))
    T = np.stack([k.phi.prec_chol for k in cl]) if cl else np.empty((0, P, P))
    ld = np.array([k.phi.log_det for k in cl])
    beta = np.stack([k.phi.beta for k in cl]) if cl else np.empty((0, P))
    basis = np.array([k.basis for k in cl], dtype=np.intp)
    counts = np.array([k.count for k in cl], dtype=float)
    return mu, T, ld, beta, basis, counts


def _prior_predictive(trace: Trace, X) -> np.ndarray:
    """(n, I) prior predictive log density of each row under each basis' base prior."""
    cache = {}
    cols = []
    for p in trace.priors:
        if id(p) not in cache:
            cache[id(p)] = p.predictive_logpdf_x(X)
        cols.append(cache[id(p)])
    return np.stack(cols, axis=1)


def snapshot_responsibilities(trace: Trace, snap: Snapshot, X, groups, prior_mass: bool = True,
                              prior_logpdf=None):
    """Responsibilities over live clusters and per-basis new-cluster candidates.

    Returns ``(r_clusters (n, K), r_new (n, I))``; rows sum to 1.
    """
    X = np.atleast_2d(X)
    P = X.shape[1]
    I = trace.cfg.n_bases
    alpha = trace.hyper.alpha_vector(I)
    mu, T, ld, beta, basis, counts = _snapshot_arrays(snap, P)
    L = np.bincount(basis, weights=counts, minlength=I)
    logW = log_weight_matrix(snap.U)[groups]   # (n, I)
    log_denom = np.log(L + alpha)
    lc = kernels.covariate_loglik(X, mu, T, ld) if len(basis) else np.empty((X.shape[0], 0))
    s_cl = logW[:, basis] + np.log(counts) - log_denom[basis] + lc
    if prior_mass:
        if prior_logpdf is None:
            prior_logpdf = _prior_predictive(trace, X)
        s_new = logW + np.log(alpha) - log_denom + prior_logpdf
    else:
        s_new = np.full((X.shape[0], I), -np.inf)
    m = np.maximum(s_cl.max(axis=1, initial=-np.inf), s_new.max(axis=1))
    e_cl, e_new = np.exp(s_cl - m[:, None]), np.exp(s_new - m[:, None])
    z = e_cl.sum(axis=1) + e_new.sum(axis=1)
    return e_cl / z[:, None], e_new / z[:, None]


def predict_many(trace: Trace, X, groups, prior_mass: bool = True):
    """Predictions for rows ``X`` in flat groups ``groups``: (mean (n,), per-snapshot (n_snap, n))."""
    if not trace.snapshots:
        raise StateError("trace has no snapshots")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    groups = np.asarray(groups, dtype=np.intp).reshape(-1)
    P = trace.priors[0].dim
    if X.shape[1] != P:
        raise ShapeError(f"rows have {X.shape[1]} features, model has {P}")
    if X.shape[0] != groups.shape[0]:
        raise ShapeError("one group index per row is required")
    if X.shape[0] == 0:
        return np.empty(0), np.empty((len(trace.snapshots), 0))
    prior_logpdf = _prior_predictive(trace, X) if prior_mass else None
    per = np.empty((len(trace.snapshots), X.shape[0]))
    for s, snap in enumerate(trace.snapshots):
        r_cl, _ = snapshot_responsibilities(trace, snap, X, groups, prior_mass, prior_logpdf)
        beta = np.stack([k.phi.beta for k in snap.clusters])
        per[s] = np.sum(r_cl * (X @ beta.T), axis=1)
    return per.mean(axis=0), per


def predict_y(trace: Trace, req: PredictionRequest, prior_mass: bool = True) -> Prediction:
    x = np.atleast_1d(np.asarray(req.x, dtype=float))
    g = flat_index(req.g.validate(trace.cfg), trace.cfg)
    mean, per = predict_many(trace, x[None], [g], prior_mass)
    return Prediction(float(mean[0]), per[:, 0])


def predict_dataset(trace: Trace, dataset, prior_mass: bool = True) -> np.ndarray:
    """Predictions for every row of a GroupedDataset, in original row order."""
    flat = dataset.flatten()
    mean, _ = predict_many(trace, flat.X, flat.group, prior_mass)
    out = np.empty(dataset.n_samples)
    out[dataset.row_order()] = mean
    return out

"""Multilinear weights, latent-factor priors and the truncated prior simulator.

Group ``g = (j_1..j_N)`` mixes the basis measures with weights

    w[g, b] = softmax_b( prod_n u[n][j_n, i_n] ),   b = (i_1..i_N)

The product tensor over all groups and bases is built by broadcasting, so
every routine here works on the full ``(S, I)`` weight matrix at once.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .multiindex import FactorConfig, GroupIndex, enumerate_groups, flat_index

log = logging.getLogger(__name__)


@dataclass
class LatentFactors:
    """``u[n]`` has shape ``(J_n, I_n)``; ``sigma_u[n]`` is the prior scale of group n."""

    u: list[np.ndarray]
    sigma_u: np.ndarray

    def __post_init__(self):
        self.u = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.u]
        self.sigma_u = np.atleast_1d(np.asarray(self.sigma_u, dtype=float))
        if len(self.sigma_u) != len(self.u):
            raise ConfigError("sigma_u needs one entry per factor group")
        if np.any(self.sigma_u <= 0):
            raise ConfigError("sigma_u must be positive")

    def check(self, cfg: FactorConfig) -> "LatentFactors":
        if len(self.u) != cfg.n_groups:
            raise ConfigError(f"{len(self.u)} latent blocks for {cfg.n_groups} factor groups")
        for n, a in enumerate(self.u):
            want = (cfg.factors_per_group[n], cfg.bases_per_group[n])
            if a.shape != want:
                raise ConfigError(f"latent block {n} has shape {a.shape}, expected {want}")
        return self

    def copy(self) -> "LatentFactors":
        return LatentFactors([a.copy() for a in self.u], self.sigma_u.copy())

    @property
    def config(self) -> FactorConfig:
        return FactorConfig([a.shape[0] for a in self.u], [a.shape[1] for a in self.u])


@dataclass
class Hyperparams:
    """DP concentration, latent-scale hyperprior and the heterogeneous switch.

    With ``heterogeneous=True``, ``alpha`` may be a sequence with one value per
    basis (flat order); otherwise it must be a scalar.
    """

    alpha: float | Sequence[float] = 1.0
    sigma0: float = 1.0
    heterogeneous: bool = False

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if np.any(~(a > 0)):
            raise ConfigError("alpha must be positive")
        if not self.sigma0 > 0:
            raise ConfigError("sigma0 must be positive")
        if a.size > 1 and not self.heterogeneous:
            raise ConfigError("per-basis alpha requires heterogeneous=True")

    def alpha_vector(self, n_bases: int) -> np.ndarray:
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if a.size == 1:
            return np.full(n_bases, float(a[0]))
        if a.size != n_bases:
            raise ConfigError(f"alpha has {a.size} entries for {n_bases} bases")
        return a.copy()


@dataclass
class WeightTensor:
    group: GroupIndex
    w: np.ndarray  # shape bases_per_group

    def __post_init__(self):
        if np.any(self.w < 0) or abs(self.w.sum() - 1.0) > 1e-12:
            raise NumericError("weights are not a probability simplex")


@dataclass
class TruncatedMeasure:
    atoms: list | np.ndarray
    weights: np.ndarray
    truncation_level: int
    residual: float = 0.0
    stick_fractions: np.ndarray | None = field(default=None, repr=False)

    def mass(self, indicator: Callable) -> float:
        """Measure of the set whose indicator is given (applied to the atom array)."""
        inside = np.asarray(indicator(np.asarray(self.atoms)), dtype=bool)
        return float(self.weights[inside].sum())


def product_tensor(U: LatentFactors) -> np.ndarray:
    """``theta[g, b] = prod_n u[n][j_n, i_n]`` as an ``(S, I)`` matrix."""
    N = len(U.u)
    J = [a.shape[0] for a in U.u]
    I = [a.shape[1] for a in U.u]
    theta = np.ones([1] * (2 * N))
    for n, a in enumerate(U.u):
        shape = [1] * (2 * N)
        shape[n], shape[N + n] = J[n], I[n]
        theta = theta * a.reshape(shape)
    return theta.reshape(math.prod(J), math.prod(I))


def _check_finite(U: LatentFactors):
    for n, a in enumerate(U.u):
        if not np.all(np.isfinite(a)):
            raise NumericError(f"latent block {n} contains non-finite entries")


def log_weight_matrix(U: LatentFactors) -> np.ndarray:
    """Log weights for every (group, basis) pair, max-subtracted log-sum-exp."""
    _check_finite(U)
    theta = product_tensor(U)
    m = theta.max(axis=1, keepdims=True)
    return theta - m - np.log(np.exp(theta - m).sum(axis=1, keepdims=True))


def weight_matrix(U: LatentFactors) -> np.ndarray:
    _check_finite(U)
    theta = product_tensor(U)
    e = np.exp(theta - theta.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def compute_weights(U: LatentFactors, g: GroupIndex) -> WeightTensor:
    cfg = U.config
    g.validate(cfg)
    row = weight_matrix(U)[flat_index(g, cfg)]
    return WeightTensor(g, row.reshape(cfg.bases_per_group))


def log_weights(U: LatentFactors, g: GroupIndex) -> np.ndarray:
    cfg = U.config
    g.validate(cfg)
    return log_weight_matrix(U)[flat_index(g, cfg)].reshape(cfg.bases_per_group)


def weight_concentration(wt: WeightTensor | np.ndarray) -> float:
    w = wt.w if isinstance(wt, WeightTensor) else np.asarray(wt)
    return float(np.sum(w * w))


def sample_latent_factors(h: Hyperparams, cfg: FactorConfig, rng: np.random.Generator) -> LatentFactors:
    """log(sigma_u^2) ~ N(0, sigma0^2), then u entries i.i.d. N(0, sigma_u^2), group by group."""
    u, sig = [], []
    for J, I in zip(cfg.factors_per_group, cfg.bases_per_group):
        t = rng.normal(0.0, h.sigma0)
        s = math.exp(0.5 * t)
        sig.append(s)
        u.append(s * rng.standard_normal((J, I)))
    return LatentFactors(u, np.array(sig))


def _draw_base(base, rng, n):
    if hasattr(base, "rvs"):
        return np.asarray(base.rvs(size=n, random_state=rng))
    return base(rng, n)


def measure_from_fractions(v, atoms) -> TruncatedMeasure:
    v = np.asarray(v, dtype=float)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    weights = v * remaining[:-1]
    return TruncatedMeasure(atoms, weights, len(v), float(remaining[-1]), v)


def stick_breaking_draw(alpha: float, base, K: int, rng: np.random.Generator) -> TruncatedMeasure:
    """Truncated stick-breaking draw; the residual mass is reported, not redistributed.

    ``base`` is a frozen scipy distribution (anything with ``rvs``) or a callable
    ``base(rng, n)`` returning ``n`` atoms.
    """
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    if K < 1:
        raise ConfigError("truncation level must be >= 1")
    v = rng.beta(1.0, alpha, size=K)
    return measure_from_fractions(v, _draw_base(base, rng, K))


def _per_basis(obj, n_bases):
    if isinstance(obj, (list, tuple)):
        if len(obj) != n_bases:
            raise ConfigError(f"need one base distribution per basis ({n_bases}), got {len(obj)}")
        return list(obj)
    return [obj] * n_bases


def draw_basis_measures(h: Hyperparams, cfg: FactorConfig, base, K: int, rng) -> list[TruncatedMeasure]:
    """One truncated DP draw per basis in flat order; per-basis alpha/base when heterogeneous."""
    alphas = h.alpha_vector(cfg.n_bases)
    bases = _per_basis(base, cfg.n_bases) if h.heterogeneous else [base] * cfg.n_bases
    return [stick_breaking_draw(alphas[b], bases[b], K, rng) for b in range(cfg.n_bases)]


def simulate_dependent_measures(U: LatentFactors, h: Hyperparams, cfg: FactorConfig, base, K: int,
                                rng: np.random.Generator) -> dict[GroupIndex, TruncatedMeasure]:
    """Draw the basis measures and return every group's weighted combination.

    Each basis draw is renormalised by its truncation residual before mixing,
    so the returned measures are probability measures over the union of atoms.
    """
    U.check(cfg)
    basis = draw_basis_measures(h, cfg, base, K, rng)
    resid = max(m.residual for m in basis)
    if resid > 0:
        log.debug("renormalising truncated basis measures (max residual %.3g)", resid)
    W = weight_matrix(U)
    atoms = _concat_atoms([m.atoms for m in basis])
    scaled = [m.weights / (1.0 - m.residual) for m in basis]
    out = {}
    for gi, g in enumerate(enumerate_groups(cfg)):
        weights = np.concatenate([W[gi, b] * scaled[b] for b in range(cfg.n_bases)])
        out[g] = TruncatedMeasure(atoms, weights, K)
    return out


def _concat_atoms(parts):
    if all(isinstance(p, np.ndarray) for p in parts):
        return np.concatenate(parts)
    return [a for p in parts for a in p]


def moment_check(U: LatentFactors, h: Hyperparams, cfg: FactorConfig, K: int, n_sims: int,
                 rng: np.random.Generator, threshold: float = 0.0) -> dict:
    """Monte-Carlo check of E{G(B)|U} and V{G(B)|U} for a standard-normal base, B = (-inf, threshold].

    Homogeneous regime only (the closed forms assume a common alpha and H).
    """
    from scipy.stats import norm

    if h.heterogeneous:
        raise ConfigError("moment identities are stated for the homogeneous prior")
    alpha = float(h.alpha_vector(1)[0])
    HB = float(norm.cdf(threshold))
    W = weight_matrix(U.check(cfg))
    samples = np.empty((n_sims, cfg.n_sets))
    max_resid = 0.0
    base = norm()
    for r in range(n_sims):
        basis = draw_basis_measures(h, cfg, base, K, rng)
        gb = np.array([m.weights[m.atoms <= threshold].sum() / (1.0 - m.residual) for m in basis])
        max_resid = max(max_resid, max(m.residual for m in basis))
        samples[r] = W @ gb
    groups = []
    for gi, g in enumerate(enumerate_groups(cfg)):
        s = samples[:, gi]
        mean, var = s.mean(), s.var(ddof=1)
        m4 = np.mean((s - s.mean()) ** 4)
        se_mean = math.sqrt(var / n_sims)
        se_var = math.sqrt(max(m4 - var * var, 0.0) / n_sims)
        conc = weight_concentration(W[gi])
        exp_var = conc * HB * (1.0 - HB) / (1.0 + alpha)
        groups.append({
            "group": list(g.indices),
            "group_flat_index": gi,
            "weight_concentration": conc,
            "mean": mean, "expected_mean": HB, "se_mean": se_mean,
            "var": var, "expected_var": exp_var, "se_var": se_var,
            "mean_ok": bool(abs(mean - HB) < 3 * se_mean),
            "var_ok": bool(abs(var - exp_var) < 3 * se_var),
        })
    return {
        "alpha": alpha, "threshold": threshold, "base_mass": HB, "truncation": K,
        "n_sims": n_sims, "max_residual": max_resid, "groups": groups,
        "all_ok": all(g["mean_ok"] and g["var_ok"] for g in groups),
    }

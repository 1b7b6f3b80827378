"""Mixture atoms for the mixture of regressions and their base prior.

An atom ``phi = (mu_x, Sigma_x, beta, sigma_y2)`` generates a labelled
sample by ``x ~ N(mu_x, Sigma_x)`` and ``y ~ N(x . beta, sigma_y2)``; the
second argument of the response normal is a variance. The base prior is

    NIW(mu_x, Sigma_x; mu0, lambda0, Psi0, nu0) N(beta; 0, sigma_y2 V) IG(sigma_y2; a_y, b_y)

Internally atoms are kept in precision-Cholesky form (``T`` lower triangular
with ``inv(Sigma) = T T'``) because that is what both the Bartlett draw and
the density kernels produce and consume.

Random-number protocol
----------------------
Every draw of ``n`` atoms from NIW x NIG parameters consumes the generator
in this order, which reference implementations rely on::

    g    = rng.standard_gamma(a, size=n)                 # sigma_y2 = b / g
    chi  = rng.chisquare(nu - arange(P), size=(n, P))    # Bartlett diagonal
    off  = rng.standard_normal((n, P*(P-1)//2))          # Bartlett strict lower, tril order
    zmu  = rng.standard_normal((n, P))                   # mu = m + T^{-T} zmu / sqrt(lambda)
    zb   = rng.standard_normal((n, P))                   # beta = b0 + sqrt(sigma_y2) chol(V) zb
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from . import kernels
from .errors import NumericError, PriorConfigError, ShapeError


def _chol(A, err, what):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise err(f"{what} is not symmetric positive-definite") from exc


def _is_spd(A) -> bool:
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return bool(np.allclose(A, A.T, rtol=1e-10, atol=1e-12))


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if not (np.all(np.isfinite(x)) and np.isfinite(self.y)):
            raise ShapeError("labelled sample has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


class RegressionComponent:
    """One mixture atom."""

    def __init__(self, mu_x, Sigma_x, beta, sigma_y2):
        mu_x = np.atleast_1d(np.asarray(mu_x, dtype=float))
        Sigma_x = np.atleast_2d(np.asarray(Sigma_x, dtype=float))
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        P = mu_x.shape[0]
        if Sigma_x.shape != (P, P) or beta.shape != (P,):
            raise ShapeError(f"inconsistent atom shapes: mu {mu_x.shape}, Sigma {Sigma_x.shape}, beta {beta.shape}")
        if not sigma_y2 > 0:
            raise PriorConfigError(f"sigma_y2 must be positive, got {sigma_y2}")
        C = _chol(Sigma_x, NumericError, "Sigma_x")
        # inv(Sigma) = C^{-T} C^{-1}; its lower Cholesky factor is chol of that product
        Cinv = solve_triangular(C, np.eye(P), lower=True)
        T = _chol(Cinv.T @ Cinv, NumericError, "inverse of Sigma_x")
        self.mu_x = mu_x
        self._Sigma = Sigma_x
        self.beta = beta
        self.sigma_y2 = float(sigma_y2)
        self.prec_chol = T
        self.log_det = float(2.0 * np.sum(np.log(np.diag(C))))

    @classmethod
    def from_precision(cls, mu_x, prec_chol, log_det, beta, sigma_y2) -> "RegressionComponent":
        self = cls.__new__(cls)
        self.mu_x = mu_x
        self._Sigma = None
        self.beta = beta
        self.sigma_y2 = float(sigma_y2)
        self.prec_chol = prec_chol
        self.log_det = float(log_det)
        return self

    @property
    def Sigma_x(self) -> np.ndarray:
        if self._Sigma is None:
            Tinv = solve_triangular(self.prec_chol, np.eye(self.dim), lower=True)
            self._Sigma = Tinv.T @ Tinv
        return self._Sigma

    @property
    def dim(self) -> int:
        return self.mu_x.shape[0]

    def as_batch(self) -> "ComponentBatch":
        return ComponentBatch(
            self.mu_x[None], self.prec_chol[None], np.array([self.log_det]),
            self.beta[None], np.array([self.sigma_y2]),
        )

    def __repr__(self):
        return (f"RegressionComponent(mu_x={self.mu_x!r}, beta={self.beta!r}, "
                f"sigma_y2={self.sigma_y2!r})")


@dataclass
class ComponentBatch:
    """``K`` atoms stacked along a leading axis."""

    mu: np.ndarray         # (K, P)
    prec_chol: np.ndarray  # (K, P, P)
    log_det: np.ndarray    # (K,)
    beta: np.ndarray       # (K, P)
    sigma_y2: np.ndarray   # (K,)

    def __len__(self):
        return self.mu.shape[0]

    def __getitem__(self, k) -> RegressionComponent:
        return RegressionComponent.from_precision(
            self.mu[k], self.prec_chol[k], self.log_det[k], self.beta[k], self.sigma_y2[k])

    @classmethod
    def stack(cls, comps: Sequence[RegressionComponent], dim: int) -> "ComponentBatch":
        if not comps:
            return cls(np.empty((0, dim)), np.empty((0, dim, dim)), np.empty(0),
                       np.empty((0, dim)), np.empty(0))
        return cls(
            np.stack([c.mu_x for c in comps]),
            np.stack([c.prec_chol for c in comps]),
            np.array([c.log_det for c in comps]),
            np.stack([c.beta for c in comps]),
            np.array([c.sigma_y2 for c in comps]),
        )

    @classmethod
    def concat(cls, batches: Sequence["ComponentBatch"]) -> "ComponentBatch":
        return cls(*(np.concatenate(parts) for parts in zip(*(
            (b.mu, b.prec_chol, b.log_det, b.beta, b.sigma_y2) for b in batches))))

    def joint_loglik(self, x, y) -> np.ndarray:
        return kernels.joint_loglik(x, y, self.mu, self.prec_chol, self.log_det, self.beta, self.sigma_y2)


class PosteriorParams(NamedTuple):
    mu: np.ndarray
    lam: float
    Psi: np.ndarray
    nu: float
    beta_mean: np.ndarray
    beta_cov: np.ndarray   # V_n; beta | sigma_y2 ~ N(beta_mean, sigma_y2 V_n)
    a: float
    b: float


@dataclass
class BasePrior:
    mu0: np.ndarray
    lambda0: float
    Psi0: np.ndarray
    nu0: float
    V: np.ndarray
    a_y: float = 1.0
    b_y: float = 1.0
    _psi_inv_chol: np.ndarray = field(init=False, repr=False, compare=False)
    _V_chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        P = self.mu0.shape[0]
        self.Psi0 = np.atleast_2d(np.asarray(self.Psi0, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        self.lambda0, self.nu0 = float(self.lambda0), float(self.nu0)
        self.a_y, self.b_y = float(self.a_y), float(self.b_y)
        if self.Psi0.shape != (P, P) or self.V.shape != (P, P):
            raise PriorConfigError(f"Psi0 {self.Psi0.shape} and V {self.V.shape} must be ({P}, {P})")
        if not (self.lambda0 > 0 and self.a_y > 0 and self.b_y > 0):
            raise PriorConfigError("lambda0, a_y and b_y must be positive")
        if not self.nu0 > P - 1:
            raise PriorConfigError(f"nu0 must exceed P - 1 = {P - 1}, got {self.nu0}")
        if not _is_spd(self.Psi0):
            raise PriorConfigError("Psi0 is not symmetric positive-definite")
        if not _is_spd(self.V):
            raise PriorConfigError("V is not symmetric positive-definite")
        self._psi_inv_chol = _chol(np.linalg.inv(self.Psi0), PriorConfigError, "inverse of Psi0")
        self._V_chol = _chol(self.V, PriorConfigError, "V")

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    @classmethod
    def from_data(cls, X, lambda0=1.0, nu0=None, V=None, a_y=1.0, b_y=1.0) -> "BasePrior":
        """Data-scaled defaults: mu0 = mean(X), Psi0 = cov(X), nu0 = P + 2, V = I."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = X.shape[1]
        mu0 = X.mean(axis=0)
        Psi0 = np.atleast_2d(np.cov(X, rowvar=False)) if X.shape[0] > 1 else np.eye(P)
        if not _is_spd(Psi0):
            ridge = 1e-6 * max(np.trace(Psi0) / P, 1.0)
            Psi0 = Psi0 + ridge * np.eye(P)
        return cls(mu0, lambda0, Psi0, P + 2.0 if nu0 is None else nu0,
                   np.eye(P) if V is None else V, a_y, b_y)

    def prior_params(self) -> PosteriorParams:
        return PosteriorParams(self.mu0, self.lambda0, self.Psi0, self.nu0,
                               np.zeros(self.dim), self.V, self.a_y, self.b_y)

    def draw(self, rng: np.random.Generator, n: int = 1) -> ComponentBatch:
        return _draw_atoms(rng, n, self.mu0, self.lambda0, self._psi_inv_chol, self.nu0,
                           np.zeros(self.dim), self._V_chol, self.a_y, self.b_y)

    def __call__(self, rng, n):
        batch = self.draw(rng, n)
        return [batch[k] for k in range(n)]

    def log_density(self, phi: RegressionComponent) -> float:
        """log H(phi)."""
        S = phi.Sigma_x
        return float(
            stats.multivariate_normal.logpdf(phi.mu_x, self.mu0, S / self.lambda0)
            + stats.invwishart.logpdf(S, df=self.nu0, scale=self.Psi0)
            + stats.multivariate_normal.logpdf(phi.beta, np.zeros(self.dim), phi.sigma_y2 * self.V)
            + stats.invgamma.logpdf(phi.sigma_y2, self.a_y, scale=self.b_y)
        )

    def predictive_logpdf_x(self, X) -> np.ndarray:
        """Prior predictive density of covariates: multivariate t from the NIW marginal."""
        P = self.dim
        df = self.nu0 - P + 1
        shape = self.Psi0 * (self.lambda0 + 1) / (self.lambda0 * df)
        return np.atleast_1d(stats.multivariate_t.logpdf(np.atleast_2d(X), loc=self.mu0, shape=shape, df=df))


def _draw_atoms(rng, n, mu, lam, psi_inv_chol, nu, beta_mean, V_chol, a, b) -> ComponentBatch:
    P = mu.shape[0]
    g = rng.standard_gamma(a, size=n)
    chi = rng.chisquare(nu - np.arange(P), size=(n, P))
    off = rng.standard_normal((n, P * (P - 1) // 2))
    zmu = rng.standard_normal((n, P))
    zb = rng.standard_normal((n, P))

    sigma_y2 = b / g
    mu_draw, T, log_det, beta = kernels.assemble_atoms(chi, off, zmu, zb, psi_inv_chol, V_chol, mu,
                                                       beta_mean, lam, sigma_y2)
    return ComponentBatch(mu_draw, T, log_det, beta, sigma_y2)


def _as_xy(data, P):
    if isinstance(data, tuple) and len(data) == 2:
        X, y = data
        X = np.asarray(X, dtype=float).reshape(-1, P)
        return X, np.asarray(y, dtype=float).reshape(-1)
    data = list(data)
    if not data:
        return np.empty((0, P)), np.empty(0)
    X = np.stack([s.x for s in data])
    if X.shape[1] != P:
        raise ShapeError(f"samples have {X.shape[1]} features, prior has {P}")
    return X, np.array([s.y for s in data])


def posterior_params(H: BasePrior, X, y) -> PosteriorParams:
    """Conjugate NIW (covariates) and NIG (regression) posterior parameters."""
    n = X.shape[0]
    if n == 0:
        return H.prior_params()
    xbar = X.mean(axis=0)
    D = X - xbar
    S = D.T @ D
    lam_n = H.lambda0 + n
    mu_n = (H.lambda0 * H.mu0 + n * xbar) / lam_n
    dm = xbar - H.mu0
    Psi_n = H.Psi0 + S + (H.lambda0 * n / lam_n) * np.outer(dm, dm)
    Psi_n = 0.5 * (Psi_n + Psi_n.T)
    prec = np.linalg.inv(H.V) + X.T @ X
    V_n = np.linalg.inv(prec)
    V_n = 0.5 * (V_n + V_n.T)
    m_n = V_n @ (X.T @ y)
    a_n = H.a_y + 0.5 * n
    b_n = H.b_y + 0.5 * (y @ y - m_n @ prec @ m_n)
    if not b_n > 0:
        # rounding can push the quadratic below zero on near-perfect fits
        b_n = H.b_y
    return PosteriorParams(mu_n, lam_n, Psi_n, H.nu0 + n, m_n, V_n, a_n, b_n)


def draw_from_params(params: PosteriorParams, rng, n: int = 1) -> ComponentBatch:
    psi_inv_chol = _chol(np.linalg.inv(params.Psi), NumericError, "posterior scale matrix")
    V_chol = _chol(params.beta_cov, NumericError, "posterior regression covariance")
    return _draw_atoms(rng, n, params.mu, params.lam, psi_inv_chol, params.nu,
                       params.beta_mean, V_chol, params.a, params.b)


def posterior_draw_xy(H: BasePrior, X, y, rng, n: int = 1) -> ComponentBatch:
    if X.shape[0] == 0:
        return H.draw(rng, n)
    return draw_from_params(posterior_params(H, X, y), rng, n)


def sample_prior(H: BasePrior, rng: np.random.Generator) -> RegressionComponent:
    return H.draw(rng, 1)[0]


def posterior_draw(H: BasePrior, data, rng: np.random.Generator) -> RegressionComponent:
    """Draw phi from its conjugate posterior given ``data``.

    ``data`` is a sequence of ``LabeledSample`` or an ``(X, y)`` tuple. With
    no data this is exactly ``sample_prior`` (same law, same random stream).
    """
    X, y = _as_xy(data, H.dim)
    return posterior_draw_xy(H, X, y, rng)[0]


def log_likelihood(phi: RegressionComponent, s: LabeledSample) -> float:
    x = np.atleast_1d(np.asarray(s.x, dtype=float))
    if x.shape != (phi.dim,):
        raise ShapeError(f"sample has {x.shape[0]} features, component has {phi.dim}")
    return float(phi.as_batch().joint_loglik(x, s.y)[0])


def predictive_log_density_x(phi: RegressionComponent, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (phi.dim,):
        raise ShapeError(f"x has {x.shape[0]} features, component has {phi.dim}")
    return float(kernels.covariate_loglik(x[None], phi.mu_x[None], phi.prec_chol[None],
                                          np.array([phi.log_det]))[0, 0])

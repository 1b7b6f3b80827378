"""Auxiliary-cluster Gibbs sampler for MLDP mixtures of regressions.

One sweep updates, in order: the joint (basis, cluster) assignment of every
sample, the atom of every live cluster, each latent vector ``u[n][j]`` by
Metropolis-Hastings, and each group scale ``sigma_u[n]`` by slice sampling
on ``log sigma_u^2``.

Basis occupancy ``L_b`` is counted over all groups, since the basis measures
are shared.

Random streams
--------------
Three independent generators are spawned from the seed, in this order:
``assign`` (auxiliary atoms and the categorical draw of each assignment
step, plus the scan permutation when shuffling), ``phi`` (initial and
updated atoms) and ``u`` (latent-factor prior draw, U and sigma_u updates).
Keeping U on its own stream means a one-basis configuration consumes
``assign`` and ``phi`` exactly like a classical DP sampler.

Within an assignment step the candidates are ordered as: live clusters
(basis-major, creation order within a basis), then auxiliaries (basis-major,
``s`` per basis). If detaching the sample empties its cluster, that atom is
reused as the first auxiliary of its basis and only ``s - 1`` fresh atoms are
drawn there. Fresh auxiliaries for all bases come from one batched prior
draw in the homogeneous case and from per-basis draws otherwise.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .components import BasePrior, ComponentBatch, RegressionComponent, posterior_draw_xy
from .errors import ConfigError, InputError, NumericError, StateError
from .multiindex import FactorConfig
from .prior import (Hyperparams, LatentFactors, log_weight_matrix, product_tensor,
                    sample_latent_factors, weight_matrix)

log = logging.getLogger(__name__)

U_SAMPLERS = ("random-walk", "gradient")


@dataclass
class SamplerConfig:
    aux: int = 3
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 5
    seed: int = 0
    u_step: float = 0.5
    u_sampler: str = "random-walk"
    slice_width: float = 1.0
    shuffle: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if self.aux < 1:
            raise ConfigError("aux (number of auxiliary clusters) must be >= 1")
        if self.iterations < 1 or self.thin < 1:
            raise ConfigError("iterations and thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if not (self.u_step >= 0 and self.slice_width > 0):
            raise ConfigError("u_step must be >= 0 and slice_width > 0")
        if self.u_sampler not in U_SAMPLERS:
            raise ConfigError(f"u_sampler must be one of {U_SAMPLERS}, got {self.u_sampler!r}")

    @property
    def n_snapshots(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


class Streams:
    """The three random streams of a chain (see module docstring)."""

    def __init__(self, seed):
        self.assign, self.phi, self.u = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))

    @classmethod
    def single(cls, rng: np.random.Generator) -> "Streams":
        self = cls.__new__(cls)
        self.assign = self.phi = self.u = rng
        return self


def _streams(rng) -> Streams:
    if isinstance(rng, Streams):
        return rng
    if isinstance(rng, np.random.Generator):
        return Streams.single(rng)
    return Streams(rng)


@dataclass
class FlatData:
    """All samples stacked in canonical order (group enumeration, then row)."""

    X: np.ndarray
    y: np.ndarray
    group: np.ndarray  # flat group index per sample

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


class Cluster:
    __slots__ = ("id", "basis", "members", "phi")

    def __init__(self, cid, basis, phi, members=()):
        self.id = cid
        self.basis = basis
        self.phi = phi
        self.members = set(members)

    def __repr__(self):
        return f"Cluster(id={self.id}, basis={self.basis}, size={len(self.members)})"


class ClusterRegistry:
    """Live clusters of every basis, in creation order within each basis."""

    def __init__(self, n_bases: int, dim: int):
        self.by_basis: list[list[Cluster]] = [[] for _ in range(n_bases)]
        self.by_id: dict[int, Cluster] = {}
        self.dim = dim
        self._next_id = 0
        self._cache = None

    def add(self, basis: int, phi: RegressionComponent, members=()) -> Cluster:
        c = Cluster(self._next_id, basis, phi, members)
        self._next_id += 1
        self.by_basis[basis].append(c)
        self.by_id[c.id] = c
        self._cache = None
        return c

    def remove(self, c: Cluster) -> None:
        self.by_basis[c.basis].remove(c)
        del self.by_id[c.id]
        self._cache = None

    def set_phi(self, c: Cluster, phi: RegressionComponent) -> None:
        c.phi = phi
        self._cache = None

    def live(self) -> list[Cluster]:
        return [c for lst in self.by_basis for c in lst]

    def occupancy(self) -> np.ndarray:
        """L_b for every basis."""
        return np.array([sum(len(c.members) for c in lst) for lst in self.by_basis], dtype=float)

    def stacked(self):
        """(clusters, basis array, ComponentBatch) of live clusters, cached until the registry changes."""
        if self._cache is None:
            live = self.live()
            self._cache = (live, np.array([c.basis for c in live], dtype=np.intp),
                           ComponentBatch.stack([c.phi for c in live], self.dim))
        return self._cache

    def __len__(self):
        return len(self.by_id)


@dataclass
class SamplerState:
    data: FlatData
    cfg: FactorConfig
    hyper: Hyperparams
    priors: list[BasePrior]
    U: LatentFactors
    registry: ClusterRegistry
    b: np.ndarray
    c: np.ndarray
    aux: int = 3
    u_accepts: int = 0
    u_proposals: int = 0
    _logw: np.ndarray | None = field(default=None, repr=False)

    @property
    def alpha(self) -> np.ndarray:
        return self.hyper.alpha_vector(self.cfg.n_bases)

    @property
    def homogeneous_prior(self) -> bool:
        return all(p is self.priors[0] for p in self.priors)

    def log_w(self) -> np.ndarray:
        if self._logw is None:
            self._logw = log_weight_matrix(self.U)
        return self._logw

    def set_U(self, U: LatentFactors) -> None:
        self.U = U
        self._logw = None

    def counts(self) -> np.ndarray:
        """Samples of each group on each basis, shape (S, I)."""
        S, I = self.cfg.n_sets, self.cfg.n_bases
        return np.bincount(self.data.group * I + self.b, minlength=S * I).reshape(S, I).astype(float)


# --------------------------------------------------------------------------
# initialisation and bookkeeping


def _flatten(dataset) -> FlatData:
    if isinstance(dataset, FlatData):
        return dataset
    return dataset.flatten()


def _prior_list(priors, data: FlatData, n_bases: int) -> list[BasePrior]:
    if priors is None:
        priors = BasePrior.from_data(data.X)
    if isinstance(priors, BasePrior):
        return [priors] * n_bases
    priors = list(priors)
    if len(priors) != n_bases:
        raise ConfigError(f"need one base prior per basis ({n_bases}), got {len(priors)}")
    return priors


def init_state(dataset, cfg: FactorConfig, hyper: Hyperparams, sampler_cfg: SamplerConfig,
               priors=None, rng=None) -> SamplerState:
    """All samples on basis (1,..,1) in one cluster whose atom is drawn given all data; U from its prior."""
    data = _flatten(dataset)
    if len(data) == 0:
        raise InputError("dataset has no samples")
    if data.group.max() >= cfg.n_sets:
        raise InputError("dataset groups do not match the factor configuration")
    hyper.alpha_vector(cfg.n_bases)
    plist = _prior_list(priors, data, cfg.n_bases)
    if any(p.dim != data.dim for p in plist):
        raise ConfigError("base prior dimension does not match the features")
    rng = _streams(sampler_cfg.seed if rng is None else rng)
    U = sample_latent_factors(hyper, cfg, rng.u)
    reg = ClusterRegistry(cfg.n_bases, data.dim)
    phi = posterior_draw_xy(plist[0], data.X, data.y, rng.phi)[0]
    cl = reg.add(0, phi, range(len(data)))
    state = SamplerState(data, cfg, hyper, plist, U, reg,
                         np.zeros(len(data), dtype=np.intp), np.full(len(data), cl.id, dtype=np.intp),
                         aux=sampler_cfg.aux)
    return state


def check_invariants(state: SamplerState) -> None:
    """Raise StateError unless counts, registry and assignments agree."""
    reg, n = state.registry, len(state.data)
    seen = np.zeros(n, dtype=int)
    total = 0
    for bi, lst in enumerate(reg.by_basis):
        for c in lst:
            if not c.members:
                raise StateError(f"cluster {c.id} on basis {bi} is empty")
            if c.basis != bi or reg.by_id.get(c.id) is not c:
                raise StateError(f"cluster {c.id} is filed under the wrong basis or id")
            for m in c.members:
                seen[m] += 1
                if state.b[m] != bi or state.c[m] != c.id:
                    raise StateError(f"sample {m} disagrees with cluster {c.id}")
            total += len(c.members)
    if total != n or np.any(seen != 1):
        raise StateError(f"clusters hold {total} memberships for {n} samples")
    L = reg.occupancy()
    if L.sum() != n or not np.array_equal(L, np.bincount(state.b, minlength=state.cfg.n_bases)):
        raise StateError("basis occupancy does not match assignments")


# --------------------------------------------------------------------------
# assignment


def candidate_log_scores(log_w_row, alpha, s, exist_basis, exist_counts, exist_loglik,
                         aux_basis, aux_loglik, L=None) -> np.ndarray:
    """Unnormalised log probabilities of every (basis, cluster) candidate.

    Existing cluster k on basis b: w_b l_k / (L_b + alpha_b) f(x | phi_k).
    Auxiliary on basis b:          w_b (alpha_b / s) / (L_b + alpha_b) f(x | phi).
    """
    log_w_row = np.asarray(log_w_row, dtype=float)
    I = log_w_row.shape[0]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (I,))
    exist_basis = np.asarray(exist_basis, dtype=np.intp)
    aux_basis = np.asarray(aux_basis, dtype=np.intp)
    exist_counts = np.asarray(exist_counts, dtype=float)
    if L is None:
        L = np.bincount(exist_basis, weights=exist_counts, minlength=I)
    log_denom = np.log(L + alpha)
    ex = log_w_row[exist_basis] + np.log(exist_counts) - log_denom[exist_basis] + exist_loglik
    ax = log_w_row[aux_basis] + np.log(alpha[aux_basis] / s) - log_denom[aux_basis] + aux_loglik
    return np.concatenate([ex, ax])


def normalize_log_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    m = scores.max()
    p = np.exp(scores - m)
    return p / p.sum()


def _draw_auxiliaries(state: SamplerState, reuse, rng: np.random.Generator):
    """Auxiliary atoms for all bases; returns (batch, basis array)."""
    I, s = state.cfg.n_bases, state.aux
    n_fresh = [s - 1 if reuse is not None and reuse[0] == b else s for b in range(I)]
    if state.homogeneous_prior:
        fresh = state.priors[0].draw(rng, sum(n_fresh))
        offsets = np.concatenate(([0], np.cumsum(n_fresh)))
        parts = [_slice(fresh, offsets[b], offsets[b + 1]) for b in range(I)]
    else:
        parts = [state.priors[b].draw(rng, n_fresh[b]) for b in range(I)]
    if reuse is not None:
        rb = reuse[0]
        parts[rb] = ComponentBatch.concat([reuse[1].as_batch(), parts[rb]])
    basis = np.repeat(np.arange(I, dtype=np.intp), s)
    return ComponentBatch.concat(parts), basis


def _slice(batch: ComponentBatch, a, b) -> ComponentBatch:
    return ComponentBatch(batch.mu[a:b], batch.prec_chol[a:b], batch.log_det[a:b],
                          batch.beta[a:b], batch.sigma_y2[a:b])


def _detach(state: SamplerState, m: int):
    reg = state.registry
    cl = reg.by_id[int(state.c[m])]
    cl.members.discard(m)
    if cl.members:
        return None
    reg.remove(cl)
    return cl.basis, cl.phi


def assignment_step(state: SamplerState, m: int, rng) -> SamplerState:
    """Resample (b_m, c_m) for sample ``m`` jointly over every basis and cluster."""
    rng = _streams(rng).assign
    reuse = _detach(state, m)
    x, y = state.data.X[m], state.data.y[m]
    g = state.data.group[m]
    live, ex_basis, ex_batch = state.registry.stacked()
    ex_counts = np.array([len(c.members) for c in live], dtype=float)
    aux_batch, aux_basis = _draw_auxiliaries(state, reuse, rng)
    ex_ll = ex_batch.joint_loglik(x, y) if live else np.empty(0)
    aux_ll = aux_batch.joint_loglik(x, y)
    scores = candidate_log_scores(state.log_w()[g], state.alpha, state.aux, ex_basis, ex_counts, ex_ll,
                                  aux_basis, aux_ll)
    if np.any(np.isnan(scores)):
        raise NumericError(f"NaN candidate score for sample {m}")
    k = kernels.draw_log_categorical(scores, rng.random())
    if k < 0:
        raise NumericError(f"all candidate scores underflowed for sample {m}")
    if k < len(live):
        cl = live[k]
        cl.members.add(m)
    else:
        a = k - len(live)
        cl = state.registry.add(int(aux_basis[a]), aux_batch[a], (m,))
    state.b[m] = cl.basis
    state.c[m] = cl.id
    return state


# --------------------------------------------------------------------------
# atoms


def update_phi(state: SamplerState, rng) -> SamplerState:
    """Redraw every live atom from its conjugate posterior given its members."""
    rng = _streams(rng).phi
    reg = state.registry
    X, y = state.data.X, state.data.y
    for cl in reg.live():
        if not cl.members:
            raise StateError(f"cluster {cl.id} has no members")
        idx = np.fromiter(sorted(cl.members), dtype=np.intp, count=len(cl.members))
        reg.set_phi(cl, posterior_draw_xy(state.priors[cl.basis], X[idx], y[idx], rng)[0])
    return state


# --------------------------------------------------------------------------
# latent factors


def u_log_posterior(U: LatentFactors, counts: np.ndarray) -> float:
    """sum_g sum_b C[g,b] log w[g,b] + sum log N(u; 0, sigma_u^2)."""
    data = float(np.sum(counts * log_weight_matrix(U)))
    prior = 0.0
    for a, s in zip(U.u, U.sigma_u):
        prior += float(-0.5 * np.sum(a * a) / s**2 - a.size * (math.log(s) + 0.5 * kernels.LOG_2PI))
    return data + prior


def u_gradient(U: LatentFactors, counts: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``u_log_posterior`` with respect to each block ``u[n]``.

    d/du[n][j, i] = sum over groups with j_n = j and bases with i_n = i of
    (C[g,b] - M_g w[g,b]) * prod_{m != n} u[m][j_m, i_m], minus u / sigma_n^2.
    """
    N = len(U.u)
    J = [a.shape[0] for a in U.u]
    I = [a.shape[1] for a in U.u]
    W = weight_matrix(U)
    R = (counts - counts.sum(axis=1, keepdims=True) * W).reshape(J + I)
    grads = []
    for n in range(N):
        others = np.ones([1] * (2 * N))
        for m, a in enumerate(U.u):
            if m == n:
                continue
            shape = [1] * (2 * N)
            shape[m], shape[N + m] = J[m], I[m]
            others = others * a.reshape(shape)
        axes = tuple(ax for ax in range(2 * N) if ax not in (n, N + n))
        gn = (R * others).sum(axis=axes) if axes else R * others
        grads.append(np.asarray(gn).reshape(J[n], I[n]) - U.u[n] / U.sigma_u[n] ** 2)
    return grads


def logpost_U(state: SamplerState) -> float:
    return u_log_posterior(state.U, state.counts())


def grad_U(state: SamplerState) -> list[np.ndarray]:
    return u_gradient(state.U, state.counts())


def mh_accept(log_target_cur, log_target_prop, u, log_q_forward=0.0, log_q_reverse=0.0) -> bool:
    """Accept iff log u < [log pi(prop) + log q(cur|prop)] - [log pi(cur) + log q(prop|cur)]."""
    log_ratio = (log_target_prop - log_target_cur) + (log_q_reverse - log_q_forward)
    return bool(math.log(u) < log_ratio) if u > 0 else True


def update_U(state: SamplerState, rng, step: float = 0.5, sampler: str = "random-walk",
             blocks: Iterable[int] | None = None) -> SamplerState:
    """One MH update per latent vector u[n][j]; returns the state with acceptance counters bumped.

    ``random-walk`` proposes cur + step z. ``gradient`` proposes
    cur + step^2/2 grad + step z and corrects for the asymmetric proposal.
    """
    rng = _streams(rng).u
    if sampler not in U_SAMPLERS:
        raise ConfigError(f"unknown U sampler {sampler!r}")
    counts = state.counts()
    U = state.U.copy()
    blocks = range(len(U.u)) if blocks is None else blocks
    lp_cur = u_log_posterior(U, counts)
    grad_cur = u_gradient(U, counts) if sampler == "gradient" else None
    h = step * step / 2.0
    for n in blocks:
        for j in range(U.u[n].shape[0]):
            cur = U.u[n][j].copy()
            z = rng.standard_normal(cur.shape[0])
            if sampler == "gradient":
                prop = cur + h * grad_cur[n][j] + step * z
            else:
                prop = cur + step * z
            U.u[n][j] = prop
            lp_prop = u_log_posterior(U, counts)
            lq_fwd = lq_rev = 0.0
            if sampler == "gradient" and step > 0:
                grad_prop = u_gradient(U, counts)
                lq_fwd = -np.sum((prop - cur - h * grad_cur[n][j]) ** 2) / (2 * step * step)
                lq_rev = -np.sum((cur - prop - h * grad_prop[n][j]) ** 2) / (2 * step * step)
            state.u_proposals += 1
            if np.isfinite(lp_prop) and mh_accept(lp_cur, lp_prop, rng.random(), lq_fwd, lq_rev):
                lp_cur = lp_prop
                state.u_accepts += 1
                if sampler == "gradient":
                    grad_cur = grad_prop if step > 0 else u_gradient(U, counts)
            else:
                U.u[n][j] = cur
    state.set_U(U)
    return state


# --------------------------------------------------------------------------
# latent scales


def slice_sample(logf, x0: float, width: float, rng: np.random.Generator, max_doublings: int = 10) -> float:
    """Univariate slice sampler: interval doubling, shrinkage and the doubling acceptance test."""
    f0 = logf(x0)
    level = f0 - rng.standard_exponential()
    left = x0 - width * rng.random()
    right = left + width
    fl, fr = logf(left), logf(right)
    k = max_doublings
    while k > 0 and (level < fl or level < fr):
        if rng.random() < 0.5:
            left -= right - left
            fl = logf(left)
        else:
            right += right - left
            fr = logf(right)
        k -= 1

    def acceptable(x1):
        lo, hi = left, right
        differ = False
        while hi - lo > 1.1 * width:
            mid = 0.5 * (lo + hi)
            if (x0 < mid) != (x1 < mid):
                differ = True
            if x1 < mid:
                hi = mid
            else:
                lo = mid
            if differ and level >= logf(lo) and level >= logf(hi):
                return False
        return True

    lo, hi = left, right
    while True:
        x1 = lo + rng.random() * (hi - lo)
        if level < logf(x1) and acceptable(x1):
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
        if hi - lo < 1e-300:
            raise NumericError("slice interval collapsed")


def log_scale_density(t: float, sum_sq: float, count: int, sigma0: float) -> float:
    """Unnormalised log density of t = log sigma_u^2 given u entries (sum of squares, count)."""
    if -t > 700.0:
        return -math.inf if sum_sq > 0 else -0.5 * count * t - t * t / (2.0 * sigma0 * sigma0)
    return -0.5 * count * t - 0.5 * sum_sq * math.exp(-t) - t * t / (2.0 * sigma0 * sigma0)


def update_sigma_u(state: SamplerState, rng, width: float = 1.0) -> SamplerState:
    rng = _streams(rng).u
    U = state.U.copy()
    for n, a in enumerate(U.u):
        ss, cnt = float(np.sum(a * a)), a.size
        t0 = 2.0 * math.log(U.sigma_u[n])
        t1 = slice_sample(lambda t: log_scale_density(t, ss, cnt, state.hyper.sigma0), t0, width, rng)
        U.sigma_u[n] = math.exp(0.5 * t1)
    state.set_U(U)
    return state


# --------------------------------------------------------------------------
# sweeps and the chain


def sweep(state: SamplerState, rng, sampler_cfg: SamplerConfig | None = None) -> SamplerState:
    sc = sampler_cfg or SamplerConfig()
    rng = _streams(rng)
    order = range(len(state.data))
    if sc.shuffle:
        order = rng.assign.permutation(len(state.data))
    for m in order:
        assignment_step(state, int(m), rng)
    update_phi(state, rng)
    update_U(state, rng, sc.u_step, sc.u_sampler)
    update_sigma_u(state, rng, sc.slice_width)
    return state


def log_joint(state: SamplerState) -> float:
    """log p(X, y, B, C, Phi, U, sigma_u) up to constants that do not depend on the state."""
    data, reg = state.data, state.registry
    alpha = state.alpha
    total = 0.0
    for bi, lst in enumerate(reg.by_basis):
        a = alpha[bi]
        Lb = sum(len(c.members) for c in lst)
        if lst:
            total += len(lst) * math.log(a) + math.lgamma(a) - math.lgamma(a + Lb)
        for cl in lst:
            idx = np.fromiter(sorted(cl.members), dtype=np.intp, count=len(cl.members))
            total += math.lgamma(len(idx))
            ll = kernels.covariate_loglik(data.X[idx], cl.phi.mu_x[None], cl.phi.prec_chol[None],
                                          np.array([cl.phi.log_det]))[:, 0]
            r = data.y[idx] - data.X[idx] @ cl.phi.beta
            ll = ll - 0.5 * (kernels.LOG_2PI + math.log(cl.phi.sigma_y2) + r * r / cl.phi.sigma_y2)
            total += float(ll.sum()) + state.priors[bi].log_density(cl.phi)
    total += u_log_posterior(state.U, state.counts())
    s0 = state.hyper.sigma0
    for s in state.U.sigma_u:
        t = 2.0 * math.log(s)
        total += -0.5 * t * t / s0**2 - math.log(s0) - 0.5 * kernels.LOG_2PI
    return total


@dataclass
class ClusterSnapshot:
    id: int
    basis: int
    count: int
    phi: RegressionComponent


@dataclass
class Snapshot:
    sweep: int
    log_joint: float
    b: np.ndarray
    c: np.ndarray
    U: LatentFactors
    clusters: list[ClusterSnapshot]

    def labels(self) -> np.ndarray:
        return self.c.copy()

    def to_json(self) -> dict:
        return {
            "sweep": self.sweep,
            "log_joint": self.log_joint,
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "u": [a.tolist() for a in self.U.u],
            "sigma_u": self.U.sigma_u.tolist(),
            "clusters": [
                {"id": k.id, "basis": k.basis, "count": k.count,
                 "mu_x": k.phi.mu_x.tolist(), "prec_chol": k.phi.prec_chol.ravel().tolist(),
                 "log_det": k.phi.log_det,
                 "beta": k.phi.beta.tolist(), "sigma_y2": k.phi.sigma_y2}
                for k in self.clusters
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Snapshot":
        clusters = []
        for k in d["clusters"]:
            P = len(k["mu_x"])
            phi = RegressionComponent.from_precision(
                np.asarray(k["mu_x"], dtype=float), np.reshape(np.asarray(k["prec_chol"], dtype=float), (P, P)),
                k["log_det"], np.asarray(k["beta"], dtype=float), k["sigma_y2"])
            clusters.append(ClusterSnapshot(k["id"], k["basis"], k["count"], phi))
        return cls(d["sweep"], d["log_joint"], np.asarray(d["b"], dtype=np.intp),
                   np.asarray(d["c"], dtype=np.intp), LatentFactors(d["u"], d["sigma_u"]), clusters)


def take_snapshot(state: SamplerState, t: int, lj: float) -> Snapshot:
    clusters = [ClusterSnapshot(c.id, c.basis, len(c.members), c.phi) for c in state.registry.live()]
    return Snapshot(t, lj, state.b.copy(), state.c.copy(), state.U.copy(), clusters)


@dataclass
class Trace:
    cfg: FactorConfig
    hyper: Hyperparams
    priors: list[BasePrior]
    sampler_cfg: SamplerConfig
    snapshots: list[Snapshot]
    log_joint: np.ndarray
    n_live: np.ndarray
    u_acceptance: float = float("nan")
    invariant_checks: int = 0

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for s in self.snapshots:
                fh.write(json.dumps(s.to_json()) + "\n")

    def write_diagnostics(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("sweep,log_joint,n_live_clusters_total\n")
            for t, (lj, k) in enumerate(zip(self.log_joint, self.n_live), start=1):
                fh.write(f"{t},{lj!r},{int(k)}\n")

    def meta(self) -> dict:
        return {
            "factors_per_group": list(self.cfg.factors_per_group),
            "bases_per_group": list(self.cfg.bases_per_group),
            "hyper": {"alpha": np.atleast_1d(np.asarray(self.hyper.alpha, dtype=float)).tolist(),
                      "sigma0": self.hyper.sigma0, "heterogeneous": self.hyper.heterogeneous},
            "priors": [_prior_to_json(p) for p in self.priors],
            "sampler": asdict(self.sampler_cfg),
        }

    @classmethod
    def read(cls, ndjson_path, meta: dict) -> "Trace":
        with open(ndjson_path) as fh:
            snaps = [Snapshot.from_json(json.loads(line)) for line in fh if line.strip()]
        alpha = meta["hyper"]["alpha"]
        hyper = Hyperparams(alpha[0] if len(alpha) == 1 else alpha, meta["hyper"]["sigma0"],
                            meta["hyper"]["heterogeneous"])
        return cls(FactorConfig(meta["factors_per_group"], meta["bases_per_group"]), hyper,
                   [_prior_from_json(p) for p in meta["priors"]], SamplerConfig(**meta["sampler"]),
                   snaps, np.empty(0), np.empty(0))


def _prior_to_json(p: BasePrior) -> dict:
    return {"mu0": p.mu0.tolist(), "lambda0": p.lambda0, "Psi0": p.Psi0.tolist(), "nu0": p.nu0,
            "V": p.V.tolist(), "a_y": p.a_y, "b_y": p.b_y}


def _prior_from_json(d: dict) -> BasePrior:
    return BasePrior(d["mu0"], d["lambda0"], d["Psi0"], d["nu0"], d["V"], d["a_y"], d["b_y"])


def run(dataset, cfg: FactorConfig, sampler_cfg: SamplerConfig, hyper: Hyperparams | None = None,
        priors: BasePrior | Sequence[BasePrior] | None = None, callback=None) -> Trace:
    """Run one chain and return its thinned post-burn-in trace.

    ``callback(t, state)`` is called after every sweep if given.
    """
    hyper = hyper or Hyperparams()
    rng = Streams(sampler_cfg.seed)
    state = init_state(dataset, cfg, hyper, sampler_cfg, priors, rng)
    lj = np.empty(sampler_cfg.iterations)
    n_live = np.empty(sampler_cfg.iterations, dtype=int)
    snaps = []
    checks = 0
    for t in range(1, sampler_cfg.iterations + 1):
        sweep(state, rng, sampler_cfg)
        if sampler_cfg.check_invariants:
            check_invariants(state)
            checks += 1
        lj[t - 1] = log_joint(state)
        if not np.isfinite(lj[t - 1]):
            raise NumericError(f"log joint is not finite at sweep {t}")
        n_live[t - 1] = len(state.registry)
        if t > sampler_cfg.burn_in and (t - sampler_cfg.burn_in) % sampler_cfg.thin == 0:
            snaps.append(take_snapshot(state, t, float(lj[t - 1])))
        if callback is not None:
            callback(t, state)
    acc = state.u_accepts / state.u_proposals if state.u_proposals else float("nan")
    log.info("chain done: %d snapshots, U acceptance %.3f", len(snaps), acc)
    return Trace(cfg, hyper, state.priors, sampler_cfg, snaps, lj, n_live, acc, checks)

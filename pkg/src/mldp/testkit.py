"""Independent oracles and synthetic data.

Nothing here calls into ``gibbs``, ``prior`` weights or the ``components``
linear algebra: the reference sampler, densities and conjugate updates are
written out separately so they can check those modules. The only shared
contract is the random-number protocol documented in ``components`` and
``gibbs``, which the reference sampler follows so that a shared seed yields
the same draws.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

# --------------------------------------------------------------------------
# classical auxiliary-cluster DP sampler


def algorithm8_probabilities(counts, alpha, s, f_existing, f_aux) -> np.ndarray:
    """Normalised candidate probabilities of one classical auxiliary-cluster step.

    Existing cluster k: l_k f_k; auxiliary j: (alpha / s) f_j. The common
    factor 1 / (n - 1 + alpha) cancels.
    """
    raw = [c * f for c, f in zip(counts, f_existing)] + [alpha / s * f for f in f_aux]
    total = sum(raw)
    return np.array([r / total for r in raw])


def _ref_logpdf(x, y, atom):
    mu, Sigma, beta, s2 = atom
    P = len(mu)
    d = np.asarray(x) - mu
    sign, logdet = np.linalg.slogdet(Sigma)
    quad = float(d @ np.linalg.inv(Sigma) @ d)
    lx = -0.5 * (P * math.log(2 * math.pi) + logdet + quad)
    r = y - float(np.dot(x, beta))
    ly = -0.5 * (math.log(2 * math.pi * s2) + r * r / s2)
    return lx + ly


def _ref_draw(rng, n, m, lam, Psi, nu, beta_mean, V, a, b):
    """Atoms from NIW x NIG parameters, consuming ``rng`` in the documented order."""
    P = len(m)
    g = rng.standard_gamma(a, size=n)
    chi = rng.chisquare(nu - np.arange(P), size=(n, P))
    off = rng.standard_normal((n, P * (P - 1) // 2))
    zmu = rng.standard_normal((n, P))
    zb = rng.standard_normal((n, P))
    Lw = np.linalg.cholesky(np.linalg.inv(Psi))
    Lv = np.linalg.cholesky(V)
    atoms = []
    for t in range(n):
        A = np.zeros((P, P))
        pos = 0
        for i in range(P):
            A[i, i] = math.sqrt(chi[t, i])
            for j in range(i):
                A[i, j] = off[t, pos]
                pos += 1
        T = Lw @ A
        Sigma = np.linalg.inv(T @ T.T)
        mu = m + np.linalg.inv(T).T @ zmu[t] / math.sqrt(lam)
        s2 = b / g[t]
        beta = beta_mean + math.sqrt(s2) * (Lv @ zb[t])
        atoms.append((mu, Sigma, beta, s2))
    return atoms


def _ref_posterior(prior, X, y):
    m0, lam0, Psi0, nu0, V0, a0, b0 = prior
    n = len(y)
    if n == 0:
        return m0, lam0, Psi0, nu0, np.zeros(len(m0)), V0, a0, b0
    lam = lam0 + n
    m = (lam0 * m0 + X.sum(axis=0)) / lam
    # uncentred form of the scale update
    Psi = Psi0 + X.T @ X + lam0 * np.outer(m0, m0) - lam * np.outer(m, m)
    Psi = 0.5 * (Psi + Psi.T)
    prec = np.linalg.inv(V0) + X.T @ X
    Vn = np.linalg.inv(prec)
    Vn = 0.5 * (Vn + Vn.T)
    bm = Vn @ (X.T @ y)
    return m, lam, Psi, nu0 + n, bm, Vn, a0 + 0.5 * n, b0 + 0.5 * (y @ y - bm @ prec @ bm)


class ReferenceDP:
    """Classical auxiliary-cluster Gibbs sampler for a DP mixture of regressions.

    ``prior`` is ``(mu0, lambda0, Psi0, nu0, V, a_y, b_y)``. Draws use two
    generators spawned from ``seed`` like the main sampler's assign and phi
    streams.
    """

    def __init__(self, X, y, prior, alpha, s, seed):
        self.X, self.y = np.asarray(X, float), np.asarray(y, float)
        self.prior = tuple(np.asarray(p, float) if np.ndim(p) else float(p) for p in prior)
        self.alpha, self.s = float(alpha), int(s)
        self.rng_assign, self.rng_phi, _ = (np.random.default_rng(q) for q in np.random.SeedSequence(seed).spawn(3))
        n = len(self.y)
        atom = _ref_draw(self.rng_phi, 1, *_ref_posterior(self.prior, self.X, self.y))[0]
        self.order = [0]              # cluster ids in creation order
        self.members = {0: set(range(n))}
        self.atoms = {0: atom}
        self.next_id = 1
        self.c = np.zeros(n, dtype=int)

    def step(self, m):
        cid = self.c[m]
        self.members[cid].discard(m)
        reused = None
        if not self.members[cid]:
            reused = self.atoms.pop(cid)
            del self.members[cid]
            self.order.remove(cid)
        n_fresh = self.s - 1 if reused is not None else self.s
        fresh = _ref_draw(self.rng_assign, n_fresh, *self._prior_params())
        aux = ([reused] if reused is not None else []) + fresh
        x, y = self.X[m], self.y[m]
        f_ex = [math.exp(_ref_logpdf(x, y, self.atoms[k])) for k in self.order]
        f_aux = [math.exp(_ref_logpdf(x, y, a)) for a in aux]
        counts = [len(self.members[k]) for k in self.order]
        p = self._stable_probs(counts, f_ex, f_aux, x, y, aux)
        u = self.rng_assign.random()
        acc, pick = 0.0, len(p) - 1
        for i, pi in enumerate(p):
            acc += pi
            if acc > u:
                pick = i
                break
        if pick < len(self.order):
            new = self.order[pick]
        else:
            new = self.next_id
            self.next_id += 1
            self.order.append(new)
            self.members[new] = set()
            self.atoms[new] = aux[pick - len(counts)]
        self.members[new].add(m)
        self.c[m] = new

    def _stable_probs(self, counts, f_ex, f_aux, x, y, aux):
        if sum(f_ex) + sum(f_aux) > 0:
            return algorithm8_probabilities(counts, self.alpha, self.s, f_ex, f_aux)
        # every density underflowed: fall back to log space
        logs = [math.log(c) + _ref_logpdf(x, y, self.atoms[k]) for c, k in zip(counts, self.order)]
        logs += [math.log(self.alpha / self.s) + _ref_logpdf(x, y, a) for a in aux]
        top = max(logs)
        w = [math.exp(v - top) for v in logs]
        return np.array(w) / sum(w)

    def _prior_params(self):
        m0, lam0, Psi0, nu0, V0, a0, b0 = self.prior
        return m0, lam0, Psi0, nu0, np.zeros(len(m0)), V0, a0, b0

    def update_atoms(self):
        for k in self.order:
            idx = sorted(self.members[k])
            post = _ref_posterior(self.prior, self.X[idx], self.y[idx])
            self.atoms[k] = _ref_draw(self.rng_phi, 1, *post)[0]

    def sweep(self):
        for m in range(len(self.y)):
            self.step(m)
        self.update_atoms()
        return self.c.copy()


def dp_reference_step(counts, alpha, s, f_existing, f_aux, u) -> int:
    """Index chosen by one classical step for a given uniform ``u``."""
    p = algorithm8_probabilities(counts, alpha, s, f_existing, f_aux)
    return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))


# --------------------------------------------------------------------------
# numerical oracles


def finite_diff(fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(point, dtype=float)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grid_density(logpdf, lo: float, hi: float, n_points: int = 20001):
    """Trapezoid-normalised density of an unnormalised 1-D log density on [lo, hi]."""
    grid = np.linspace(lo, hi, n_points)
    lp = np.array([logpdf(t) for t in grid])
    dens = np.exp(lp - lp.max())
    if max(dens[0], dens[-1]) > 1e-8:
        warnings.warn(f"grid [{lo}, {hi}] cuts off non-negligible mass", RuntimeWarning, stacklevel=2)
    dx = grid[1] - grid[0]
    mass = dx * (dens.sum() - 0.5 * (dens[0] + dens[-1]))
    return grid, dens / mass


def grid_moments(grid, dens):
    dx = grid[1] - grid[0]
    w = dens * dx
    w[0] *= 0.5
    w[-1] *= 0.5
    mean = float(np.sum(w * grid))
    return mean, float(np.sum(w * (grid - mean) ** 2))


def grid_bin_probs(grid, dens, edges) -> np.ndarray:
    """Probability of each histogram bin under the grid density (trapezoid within bins)."""
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))))
    cdf /= cdf[-1]
    return np.diff(np.interp(edges, grid, cdf))


def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


# --------------------------------------------------------------------------
# synthetic data


def softmax_weights_direct(u_blocks, group) -> np.ndarray:
    """Weights over all bases for one group, by explicit enumeration (row-major bases)."""
    dims = [len(u_blocks[n][j - 1]) for n, j in enumerate(group)]
    logits = []
    for b in itertools.product(*(range(d) for d in dims)):
        prod = 1.0
        for n, (j, i) in enumerate(zip(group, b)):
            prod *= u_blocks[n][j - 1][i]
        logits.append(prod)
    top = max(logits)
    e = [math.exp(v - top) for v in logits]
    return np.array(e) / sum(e)


@dataclass
class TrueComponent:
    mu: np.ndarray
    Sigma: np.ndarray
    beta: np.ndarray
    sigma_y2: float


@dataclass
class SyntheticSpec:
    factors_per_group: list[int]
    bases_per_group: list[int]
    weights: np.ndarray                 # (S, I), rows in group enumeration order
    components: list[list[TrueComponent]]   # per basis
    mix: list[np.ndarray]               # within-basis component probabilities
    samples_per_group: int = 40
    seed: int = 0
    u_blocks: list | None = field(default=None, repr=False)

    @property
    def groups(self):
        return list(itertools.product(*(range(1, j + 1) for j in self.factors_per_group)))


@dataclass
class SyntheticData:
    factors: np.ndarray   # (n, N) 1-based factor indices
    X: np.ndarray
    y: np.ndarray
    basis: np.ndarray     # true flat basis index
    component: np.ndarray  # true global component label

    def to_frame(self):
        import pandas as pd

        cols = {f"f{n + 1}": self.factors[:, n] for n in range(self.factors.shape[1])}
        cols.update({f"x{p + 1}": self.X[:, p] for p in range(self.X.shape[1])})
        cols["y"] = self.y
        return pd.DataFrame(cols)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> SyntheticData:
    """Forward simulation: basis ~ w[g], component ~ mix[basis], then x and y from that component."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    offsets = np.concatenate(([0], np.cumsum([len(c) for c in spec.components])))
    rows = []
    for gi, g in enumerate(spec.groups):
        for _ in range(spec.samples_per_group):
            b = int(rng.choice(len(spec.components), p=spec.weights[gi]))
            k = int(rng.choice(len(spec.components[b]), p=spec.mix[b]))
            comp = spec.components[b][k]
            x = rng.multivariate_normal(comp.mu, comp.Sigma)
            y = float(x @ comp.beta + math.sqrt(comp.sigma_y2) * rng.standard_normal())
            rows.append((g, x, y, b, offsets[b] + k))
    return SyntheticData(
        np.array([r[0] for r in rows], dtype=int),
        np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows]),
        np.array([r[3] for r in rows], dtype=int),
        np.array([r[4] for r in rows], dtype=int),
    )


def bayes_optimal_predict(spec: SyntheticSpec, factors, X) -> np.ndarray:
    """E[y | x, group] under the generating truth."""
    gindex = {g: i for i, g in enumerate(spec.groups)}
    out = np.empty(len(X))
    for r, (g, x) in enumerate(zip(map(tuple, np.asarray(factors)), np.asarray(X))):
        w = spec.weights[gindex[g]]
        num = den = 0.0
        for b, comps in enumerate(spec.components):
            for k, c in enumerate(comps):
                d = x - c.mu
                dens = math.exp(-0.5 * d @ np.linalg.solve(c.Sigma, d)) / math.sqrt(np.linalg.det(2 * math.pi * c.Sigma))
                p = w[b] * spec.mix[b][k] * dens
                num += p * float(x @ c.beta)
                den += p
        out[r] = num / den
    return out


GRID2X2_BETAS = [np.array([1.0, -1.0]), np.array([-1.0, 1.0]), np.array([2.0, 0.5]), np.array([-0.5, -2.0])]


def grid2x2(separated: bool = True, samples_per_group: int = 40, seed: int = 0, strength: float = 3.0) -> SyntheticSpec:
    """The default 2x2 fixture: N=2, J=[2,2], I=[2,2], P=2, one true component per basis.

    Latent vectors are chosen so each group puts most weight on its own basis
    (about 0.91 with ``strength=3``). With ``separated`` the component means
    sit on a square of side 7 with identity covariance (7 standard deviations
    apart); otherwise every component shares x ~ N(0, I) and only the
    regression coefficients differ.
    """
    c = math.sqrt(strength)
    u_blocks = [
        [np.array([c, 0.0]), np.array([0.0, c])],
        [np.array([c, -c]), np.array([-c, c])],
    ]
    groups = list(itertools.product((1, 2), (1, 2)))
    W = np.stack([softmax_weights_direct(u_blocks, g) for g in groups])
    means = [np.array([-3.5, -3.5]), np.array([-3.5, 3.5]), np.array([3.5, -3.5]), np.array([3.5, 3.5])]
    comps = []
    for b in range(4):
        mu = means[b] if separated else np.zeros(2)
        comps.append([TrueComponent(mu, np.eye(2), GRID2X2_BETAS[b], 0.25)])
    return SyntheticSpec([2, 2], [2, 2], W, comps, [np.array([1.0])] * 4, samples_per_group, seed, u_blocks)


def single_component(samples_per_group: int = 40, seed: int = 0) -> SyntheticSpec:
    """2x2 layout where every sample comes from one component."""
    W = np.full((4, 1), 1.0)
    comp = TrueComponent(np.array([1.0, -1.0]), np.array([[1.0, 0.3], [0.3, 1.0]]), np.array([1.5, -0.5]), 0.25)
    return SyntheticSpec([2, 2], [1, 1], W, [[comp]], [np.array([1.0])], samples_per_group, seed)


def to_dataset(sd: SyntheticData, factors_per_group, bases_per_group):
    """GroupedDataset view of synthetic rows (row positions index into ``sd``)."""
    import pandas as pd

    from .data import group_by_factors
    from .multiindex import FactorConfig

    cfg = FactorConfig(factors_per_group, bases_per_group)
    cols = [f"f{n + 1}" for n in range(len(factors_per_group))]
    table = pd.DataFrame({c: sd.factors[:, n] for n, c in enumerate(cols)})
    table["y"] = sd.y
    names = [f"x{p + 1}" for p in range(sd.X.shape[1])]
    return group_by_factors(table, cols, cfg, names, "y", X=sd.X)

import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from mldp import gibbs, testkit
from mldp.components import BasePrior, posterior_params
from mldp.errors import ConfigError, InputError, StateError
from mldp.gibbs import (FlatData, SamplerConfig, Snapshot, Trace, candidate_log_scores, check_invariants,
                        grad_U, init_state, log_scale_density, logpost_U, mh_accept, normalize_log_scores,
                        slice_sample, sweep, u_gradient, u_log_posterior, update_phi, update_sigma_u, update_U)
from mldp.multiindex import FactorConfig
from mldp.prior import Hyperparams, LatentFactors


@pytest.fixture(scope="module")
def grid():
    sd = testkit.generate_synthetic(testkit.grid2x2(samples_per_group=15, seed=2))
    ds = testkit.to_dataset(sd, [2, 2], [2, 2])
    return sd, ds, BasePrior.from_data(ds.flatten().X)


def new_state(ds, prior, seed=0, **kw):
    sc = SamplerConfig(seed=seed, **kw)
    return init_state(ds, ds.cfg, Hyperparams(), sc, prior, gibbs.Streams(seed)), sc


# --------------------------------------------------------------------------
# assignment probabilities


def test_hand_computed_normalisation():
    s = candidate_log_scores([0.0], 1.0, 1, [0], [3.0], [math.log(0.2)], [0], [math.log(0.1)])
    np.testing.assert_allclose(np.exp(s), [0.15, 0.025], rtol=1e-14)
    np.testing.assert_allclose(normalize_log_scores(s), [6 / 7, 1 / 7], rtol=1e-14)


def test_single_basis_matches_classical(rng):
    for _ in range(50):
        K, s = rng.integers(1, 6), int(rng.integers(1, 5))
        counts = rng.integers(1, 20, size=K).astype(float)
        f_ex, f_aux = rng.uniform(0.01, 1, K), rng.uniform(0.01, 1, s)
        alpha = rng.uniform(0.1, 3)
        ours = normalize_log_scores(candidate_log_scores([0.0], alpha, s, np.zeros(K, int), counts, np.log(f_ex),
                                                         np.zeros(s, int), np.log(f_aux)))
        ref = testkit.algorithm8_probabilities(counts, alpha, s, f_ex, f_aux)
        np.testing.assert_allclose(ours, ref, rtol=1e-12)
        assert ours.sum() == pytest.approx(1.0, abs=1e-12)


def test_probabilities_over_bases_sum_to_one(rng):
    logw = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
    basis = np.array([0, 0, 2, 3])
    p = normalize_log_scores(candidate_log_scores(logw, 1.0, 3, basis, [2.0, 1.0, 4.0, 1.0], rng.normal(size=4),
                                                  np.repeat(np.arange(4), 3), rng.normal(size=12)))
    assert p.sum() == pytest.approx(1.0, abs=1e-12) and np.all(p > 0)


def test_empty_basis_gets_only_auxiliary_mass():
    # a basis with no clusters has L = 0, so its auxiliaries share w_b * (alpha/s) / alpha = w_b / s
    logw = np.log([0.5, 0.5])
    s = candidate_log_scores(logw, 2.0, 2, [0], [4.0], [0.0], [0, 0, 1, 1], np.zeros(4))
    raw = np.exp(s)
    np.testing.assert_allclose(raw[3:], 0.5 / 2, rtol=1e-14)
    np.testing.assert_allclose(raw[0], 0.5 * 4 / 6, rtol=1e-14)


# --------------------------------------------------------------------------
# bookkeeping and determinism


def test_initial_state(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    check_invariants(st)
    assert len(st.registry) == 1 and np.all(st.b == 0)


def test_sweep_keeps_invariants(grid):
    _, ds, prior = grid
    st, sc = new_state(ds, prior)
    rng = gibbs.Streams(0)
    for _ in range(5):
        sweep(st, rng, sc)
        check_invariants(st)
        assert st.registry.occupancy().sum() == len(st.data)


def test_invariant_checker_catches_corruption(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    st.b[3] = 1
    with pytest.raises(StateError):
        check_invariants(st)


def test_sweep_deterministic(grid):
    _, ds, prior = grid
    out = []
    for _ in range(2):
        st, sc = new_state(ds, prior, seed=11)
        rng = gibbs.Streams(11)
        for _ in range(3):
            sweep(st, rng, sc)
        out.append((st.b.copy(), st.c.copy(), [a.copy() for a in st.U.u], st.U.sigma_u.copy()))
    assert np.array_equal(out[0][0], out[1][0]) and np.array_equal(out[0][1], out[1][1])
    assert all(np.array_equal(a, b) for a, b in zip(out[0][2], out[1][2]))
    assert np.array_equal(out[0][3], out[1][3])


def test_shuffled_scan_runs(grid):
    _, ds, prior = grid
    st, sc = new_state(ds, prior, shuffle=True)
    sweep(st, gibbs.Streams(0), sc)
    check_invariants(st)


def test_single_basis_tracks_reference_sampler():
    sd = testkit.generate_synthetic(testkit.grid2x2(samples_per_group=10, seed=5))
    ds = testkit.to_dataset(sd, [2, 2], [1, 1])
    flat = ds.flatten()
    prior = BasePrior.from_data(flat.X)
    sc = SamplerConfig(seed=21)
    streams = gibbs.Streams(21)  # initialisation and sweeps share the streams, as in run()
    st = init_state(ds, ds.cfg, Hyperparams(), sc, prior, streams)
    ref = testkit.ReferenceDP(flat.X, flat.y, (prior.mu0, prior.lambda0, prior.Psi0, prior.nu0, prior.V,
                                               prior.a_y, prior.b_y), 1.0, sc.aux, 21)
    for _ in range(15):
        sweep(st, streams, sc)
        c_ref = ref.sweep()
        assert np.array_equal(st.c, c_ref)


def test_single_component_data_one_cluster():
    modes = []
    for seed in range(3):
        sd = testkit.generate_synthetic(testkit.single_component(seed=seed))
        ds = testkit.to_dataset(sd, [2, 2], [1, 1])
        tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=50, burn_in=0, thin=1, seed=seed),
                       Hyperparams(alpha=0.1), BasePrior.from_data(ds.flatten().X))
        modes.append(Counter(tr.n_live.tolist()).most_common(1)[0][0])
    assert modes == [1, 1, 1]


def test_single_component_one_cluster_per_basis():
    # with several bases each occupied basis needs its own atom; the mode per basis is still 1
    sd = testkit.generate_synthetic(testkit.single_component(seed=0))
    ds = testkit.to_dataset(sd, [2, 2], [2, 2])
    per_basis = Counter()

    def cb(t, state):
        per_basis.update(len(lst) for lst in state.registry.by_basis if lst)

    gibbs.run(ds, ds.cfg, SamplerConfig(iterations=50, burn_in=0, thin=1), Hyperparams(alpha=0.1),
              BasePrior.from_data(ds.flatten().X), callback=cb)
    assert per_basis.most_common(1)[0][0] == 1


# --------------------------------------------------------------------------
# atoms


def test_update_phi_rejects_empty_cluster(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    st.registry.live()[0].members.clear()
    with pytest.raises(StateError):
        update_phi(st, np.random.default_rng(0))


def test_update_phi_single_cluster_posterior_mean(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    flat = ds.flatten()
    post = posterior_params(prior, flat.X, flat.y)
    r = np.random.default_rng(1)
    draws = []
    for _ in range(3000):
        update_phi(st, r)
        draws.append(st.registry.live()[0].phi.mu_x)
    draws = np.array(draws)
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - post.mu) < 3 * se)


def test_update_phi_same_law_across_calls(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    a, b = [], []
    r = np.random.default_rng(2)
    for out in (a, b):
        for _ in range(1500):
            update_phi(st, r)
            out.append(st.registry.live()[0].phi.beta[0])
    assert a[0] != a[1]
    assert stats.ks_2samp(a, b).pvalue > 0.01


# --------------------------------------------------------------------------
# latent factors


def random_U(rng, J=(2, 3), I=(2, 3)):
    return LatentFactors([rng.standard_normal((j, i)) for j, i in zip(J, I)], rng.uniform(0.5, 2, len(J)))


def test_gradient_at_zero(rng):
    U = LatentFactors([np.zeros((2, 2)), np.zeros((2, 2))], [1.0, 1.0])
    counts = rng.integers(0, 5, size=(4, 4)).astype(float)
    g = u_gradient(U, counts)
    fd = testkit.finite_diff(lambda v: u_log_posterior(_unflat(v, U), counts), _flat(U))
    np.testing.assert_allclose(np.concatenate([a.ravel() for a in g]), fd, atol=1e-8)


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        U = random_U(rng)
        counts = rng.integers(0, 6, size=(6, 6)).astype(float)
        g = np.concatenate([a.ravel() for a in u_gradient(U, counts)])
        fd = testkit.finite_diff(lambda v: u_log_posterior(_unflat(v, U), counts), _flat(U))
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-5


def test_single_basis_data_gradient_is_zero(rng):
    U = random_U(rng, (3, 2), (1, 1))
    counts = rng.integers(0, 6, size=(6, 1)).astype(float)
    g = u_gradient(U, counts)
    for a, s, grad in zip(U.u, U.sigma_u, g):
        np.testing.assert_allclose(grad, -a / s**2, atol=1e-15)


def test_doubling_counts_doubles_data_term(rng):
    U = random_U(rng)
    counts = rng.integers(0, 6, size=(6, 6)).astype(float)
    zero = u_log_posterior(U, np.zeros_like(counts))
    one = u_log_posterior(U, counts) - zero
    two = u_log_posterior(U, 2 * counts) - zero
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_state_level_wrappers(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    assert logpost_U(st) == u_log_posterior(st.U, st.counts())
    assert all(np.array_equal(a, b) for a, b in zip(grad_U(st), u_gradient(st.U, st.counts())))


def test_mh_shift_invariance(rng):
    for _ in range(200):
        a, b, u = rng.normal(scale=5), rng.normal(scale=5), rng.random()
        c = rng.normal(scale=1e3)
        assert mh_accept(a, b, u) == mh_accept(a + c, b + c, u)


def test_zero_step_always_accepts(grid):
    _, ds, prior = grid
    for sampler in ("random-walk", "gradient"):
        st, _ = new_state(ds, prior)
        update_U(st, np.random.default_rng(0), step=0.0, sampler=sampler)
        assert st.u_accepts == st.u_proposals > 0


def test_acceptance_rates_track_step(grid):
    _, ds, prior = grid
    rates = {}
    for step in (1e-4, 10.0):
        st, sc = new_state(ds, prior)
        rng = gibbs.Streams(0)
        sweep(st, rng, sc)
        st.u_accepts = st.u_proposals = 0
        for _ in range(100):
            update_U(st, rng, step=step)
        rates[step] = st.u_accepts / st.u_proposals
    assert rates[1e-4] > 0.99
    assert rates[10.0] < 0.2


@pytest.mark.parametrize("sampler,n_updates", [("random-walk", 100000), ("gradient", 30000)])
def test_pinned_stationary_variance(sampler, n_updates):
    # one free vector u[0][0] in R^2; u[1] is pinned; compare against a 2-D grid posterior
    X = np.zeros((10, 1))
    data = FlatData(X, np.zeros(10), np.zeros(10, dtype=np.intp))
    cfg = FactorConfig([1, 1], [2, 1])
    prior = BasePrior(np.zeros(1), 1.0, np.eye(1), 3.0, np.eye(1))
    st = init_state(data, cfg, Hyperparams(), SamplerConfig(), prior, gibbs.Streams(0))
    st.b[:] = np.array([0] * 7 + [1] * 3)
    st.set_U(LatentFactors([np.zeros((1, 2)), np.array([[1.3]])], [1.0, 1.0]))
    counts = st.counts()
    rng = np.random.default_rng(5)
    draws = np.empty(n_updates)
    for t in range(draws.size):
        update_U(st, rng, step=1.0, sampler=sampler, blocks=[0])
        draws[t] = st.U.u[0][0, 0]
    g = np.linspace(-7, 7, 561)
    A, B = np.meshgrid(g, g, indexing="ij")
    lp = np.vectorize(lambda a, b: u_log_posterior(LatentFactors([[[a, b]], [[1.3]]], [1.0, 1.0]), counts))(A, B)
    p = np.exp(lp - lp.max())
    p /= p.sum()
    marg = p.sum(axis=1)
    mean = (g * marg).sum()
    var = ((g - mean) ** 2 * marg).sum()
    assert abs(draws[2000:].var() - var) < 0.1 * var


# --------------------------------------------------------------------------
# latent scales


def test_scale_density_single_zero_entry():
    # one entry at u = 0: the likelihood term -t/2 pushes the mode below the prior mode 0
    g, d = testkit.grid_density(lambda t: log_scale_density(t, 0.0, 1, 1.0), -10, 8)
    assert g[np.argmax(d)] < 0.0
    assert g[np.argmax(d)] == pytest.approx(-0.5, abs=1e-3)


def test_scale_density_handles_extreme_t():
    assert log_scale_density(-1e4, 1.0, 3, 1.0) == -math.inf
    assert np.isfinite(log_scale_density(-1e4, 0.0, 3, 1.0))


def test_slice_sampler_invariance():
    logf = lambda t: log_scale_density(t, 3.2, 4, 1.0)  # noqa: E731
    g, d = testkit.grid_density(logf, -12, 10, 40001)
    cdf = np.cumsum(d)
    cdf /= cdf[-1]
    rng = np.random.default_rng(8)
    x0 = np.interp(rng.random(10000), cdf, g)
    x1 = np.array([slice_sample(logf, x, 1.0, rng) for x in x0])
    ref = np.interp(rng.random(20000), cdf, g)
    assert stats.ks_2samp(x1, ref).pvalue > 0.01


def test_update_sigma_u_changes_scales(grid):
    _, ds, prior = grid
    st, _ = new_state(ds, prior)
    before = st.U.sigma_u.copy()
    update_sigma_u(st, np.random.default_rng(0))
    assert np.all(st.U.sigma_u > 0) and not np.array_equal(before, st.U.sigma_u)


# --------------------------------------------------------------------------
# chains and traces


def test_snapshot_count_and_series(grid):
    _, ds, prior = grid
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=10, burn_in=0, thin=1), Hyperparams(), prior)
    assert len(tr.snapshots) == 10 and np.all(np.isfinite(tr.log_joint)) and len(tr.n_live) == 10
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=12, burn_in=3, thin=4), Hyperparams(), prior)
    assert [s.sweep for s in tr.snapshots] == [7, 11]
    assert SamplerConfig(iterations=12, burn_in=3, thin=4).n_snapshots == 2


def test_trace_files_identical(grid, tmp_path):
    _, ds, prior = grid
    paths = []
    for k in range(2):
        tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=8, burn_in=2, thin=2, seed=4), Hyperparams(), prior)
        p = tmp_path / f"t{k}.ndjson"
        tr.write_ndjson(p)
        tr.write_diagnostics(tmp_path / f"d{k}.csv")
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "d0.csv").read_bytes() == (tmp_path / "d1.csv").read_bytes()
    assert (tmp_path / "d0.csv").read_text().splitlines()[0] == "sweep,log_joint,n_live_clusters_total"


def test_trace_roundtrip(grid, tmp_path):
    _, ds, prior = grid
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=6, burn_in=2, thin=2), Hyperparams(), prior)
    tr.write_ndjson(tmp_path / "t.ndjson")
    back = Trace.read(tmp_path / "t.ndjson", tr.meta())
    assert len(back.snapshots) == len(tr.snapshots)
    for a, b in zip(tr.snapshots, back.snapshots):
        assert np.array_equal(a.c, b.c) and a.log_joint == b.log_joint
        for ka, kb in zip(a.clusters, b.clusters):
            assert np.array_equal(ka.phi.prec_chol, kb.phi.prec_chol) and np.array_equal(ka.phi.beta, kb.phi.beta)
            np.testing.assert_allclose(ka.phi.Sigma_x, kb.phi.Sigma_x, rtol=1e-12)
    assert back.cfg.bases_per_group == tr.cfg.bases_per_group


def test_snapshot_json_keys(grid):
    _, ds, prior = grid
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=2, burn_in=0, thin=1), Hyperparams(), prior)
    d = tr.snapshots[0].to_json()
    assert {"sweep", "log_joint", "b", "c", "u", "sigma_u", "clusters"} <= set(d)
    assert Snapshot.from_json(d).sweep == d["sweep"]


@pytest.mark.slow
def test_log_joint_reaches_plateau(grid):
    _, ds, prior = grid
    ok = 0
    for seed in range(10):
        tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=40, burn_in=0, thin=1, seed=seed), Hyperparams(), prior)
        lj = tr.log_joint
        ok += lj[-8:].mean() >= lj[:4].mean()
    assert ok >= 9


def test_gradient_sampler_chain(grid):
    _, ds, prior = grid
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=5, burn_in=0, thin=1, u_sampler="gradient"),
                   Hyperparams(), prior)
    assert 0 < tr.u_acceptance <= 1


def test_heterogeneous_chain(grid):
    _, ds, prior = grid
    other = BasePrior(prior.mu0, 0.5, prior.Psi0 * 2, prior.nu0 + 1, np.eye(2))
    hyper = Hyperparams([0.5, 1.0, 1.5, 2.0], heterogeneous=True)
    sc = SamplerConfig(iterations=4, burn_in=0, thin=1, check_invariants=True)
    tr = gibbs.run(ds, ds.cfg, sc, hyper, [prior, other, prior, other])
    assert tr.invariant_checks == 4
    with pytest.raises(ConfigError):
        gibbs.run(ds, ds.cfg, sc, hyper, [prior, other])


def test_empty_dataset_rejected():
    data = FlatData(np.empty((0, 2)), np.empty(0), np.empty(0, dtype=np.intp))
    with pytest.raises(InputError):
        gibbs.run(data, FactorConfig([2]), SamplerConfig(iterations=2, burn_in=0), Hyperparams(),
                  BasePrior(np.zeros(2), 1.0, np.eye(2), 4.0, np.eye(2)))


@pytest.mark.parametrize("kw", [dict(aux=0), dict(iterations=5, burn_in=5), dict(thin=0), dict(u_step=-1),
                                dict(slice_width=0), dict(u_sampler="hmc")])
def test_sampler_config_validation(kw):
    with pytest.raises(ConfigError):
        SamplerConfig(**kw)


def _flat(U):
    return np.concatenate([a.ravel() for a in U.u])


def _unflat(v, U):
    out, pos = [], 0
    for a in U.u:
        out.append(v[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return LatentFactors(out, U.sigma_u)

"""Acceptance suite: one PASS/FAIL line per criterion, printed uncaptured.

Run with ``pytest tests/test_acceptance.py -v``. The full suite takes several
minutes (the recovery and relative-performance runs dominate).
"""
import itertools
import json
import math
import time

import numpy as np
import pytest
import yaml
from scipy import stats

from mldp import gibbs, testkit
from mldp.cli import main
from mldp.components import BasePrior
from mldp.gibbs import SamplerConfig, init_state, log_scale_density, slice_sample, sweep, u_gradient, u_log_posterior
from mldp.metrics import adjusted_rand_index, auc, point_clustering, rmse
from mldp.multiindex import FactorConfig, enumerate_groups
from mldp.predict import predict_dataset
from mldp.prior import Hyperparams, LatentFactors, moment_check, sample_latent_factors, weight_matrix


@pytest.fixture
def report(capsys):
    def emit(n, ok, text):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {text}")
        assert ok, text
    return emit


def test_c01_weight_simplex(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_sum, min_w = 0.0, 1.0
    for _ in range(1000):
        N = int(rng.integers(1, 4))
        cfg = FactorConfig(rng.integers(1, 5, N).tolist(), rng.integers(1, 5, N).tolist())
        W = weight_matrix(sample_latent_factors(Hyperparams(sigma0=rng.uniform(0.1, 3.0)), cfg, rng))
        worst_sum = max(worst_sum, float(np.max(np.abs(W.sum(axis=1) - 1.0))))
        min_w = min(min_w, float(W.min()))
    dt = time.perf_counter() - t0
    ok = worst_sum <= 1e-12 and min_w >= 0 and dt < 5
    report(1, ok, f"weight simplex: max |sum-1|={worst_sum:.2e}, min weight={min_w:.3g}, {dt:.2f}s")


def test_c02_dp_degeneration(report):
    t0 = time.perf_counter()
    sd = testkit.generate_synthetic(testkit.grid2x2(samples_per_group=40, seed=11))
    ds = testkit.to_dataset(sd, [2, 2], [1, 1])
    flat = ds.flatten()
    prior = BasePrior.from_data(flat.X)
    sc = SamplerConfig(seed=77)
    streams = gibbs.Streams(77)
    st = init_state(ds, ds.cfg, Hyperparams(), sc, prior, streams)
    ref = testkit.ReferenceDP(flat.X, flat.y, (prior.mu0, prior.lambda0, prior.Psi0, prior.nu0, prior.V,
                                               prior.a_y, prior.b_y), 1.0, sc.aux, 77)
    first_diff = None
    for t in range(1, 201):
        sweep(st, streams, sc)
        if not np.array_equal(st.c, ref.sweep()):
            first_diff = t
            break
    dt = time.perf_counter() - t0
    ok = first_diff is None and dt < 60
    detail = "identical for 200 sweeps" if first_diff is None else f"diverged at sweep {first_diff}"
    report(2, ok, f"DP degeneration vs reference sampler: {detail}, {dt:.1f}s")


def test_c03_moment_identities(report):
    t0 = time.perf_counter()
    cfg = FactorConfig([2, 2], [2, 2])
    rng_u, rng_g = (np.random.default_rng(s) for s in np.random.SeedSequence(303).spawn(2))
    U = sample_latent_factors(Hyperparams(alpha=1.0), cfg, rng_u)
    summary = moment_check(U, Hyperparams(alpha=1.0), cfg, 60, 10_000, rng_g, 0.0)
    ok = dt_ok = True
    parts = []
    for g, grp in zip(enumerate_groups(cfg), summary["groups"]):
        w = testkit.softmax_weights_direct(U.u, g.indices)
        exp_var = float(np.sum(w ** 2)) * 0.25 / 2.0
        z_mean = abs(grp["mean"] - 0.5) / grp["se_mean"]
        z_var = abs(grp["var"] - exp_var) / grp["se_var"]
        ok &= z_mean < 3 and z_var < 3
        parts.append(f"{z_mean:.2f}/{z_var:.2f}")
    dt = time.perf_counter() - t0
    dt_ok = dt < 120
    report(3, ok and dt_ok, f"moment identities, |z| mean/var per group: {' '.join(parts)}, {dt:.1f}s")


def _flat(U):
    return np.concatenate([a.ravel() for a in U.u])


def _unflat(v, U):
    out, k = [], 0
    for a in U.u:
        out.append(v[k:k + a.size].reshape(a.shape))
        k += a.size
    return LatentFactors(out, U.sigma_u)


def test_c04_gradient_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        N = int(rng.integers(1, 4))
        J, I = rng.integers(1, 4, N), rng.integers(1, 4, N)
        U = LatentFactors([rng.standard_normal((j, i)) for j, i in zip(J, I)], rng.uniform(0.5, 2.0, N))
        counts = rng.integers(0, 8, size=(int(np.prod(J)), int(np.prod(I)))).astype(float)
        g = np.concatenate([a.ravel() for a in u_gradient(U, counts)])
        fd = testkit.finite_diff(lambda v: u_log_posterior(_unflat(v, U), counts), _flat(U))
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6))))
    dt = time.perf_counter() - t0
    report(4, worst < 1e-5 and dt < 10, f"gradient vs finite differences: max rel err {worst:.2e}, {dt:.2f}s")


def test_c05_slice_sampler(report):
    t0 = time.perf_counter()
    logf = lambda t: log_scale_density(t, 3.2, 4, 1.0)  # noqa: E731
    grid, dens = testkit.grid_density(logf, -12.0, 10.0, 40001)
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    edges = np.concatenate(([grid[0]], np.interp(np.linspace(0, 1, 21)[1:-1], cdf, grid), [grid[-1]]))
    rng = np.random.default_rng(505)
    x, draws = 0.0, np.empty(100_000)
    for i in range(draws.size):
        x = slice_sample(logf, x, 1.0, rng)
        draws[i] = x
    hist = np.histogram(np.clip(draws, grid[0], grid[-1]), edges)[0] / draws.size
    tv = testkit.tv_distance(hist, testkit.grid_bin_probs(grid, dens, edges))
    dt = time.perf_counter() - t0
    report(5, tv < 0.02 and dt < 60, f"slice sampler vs grid posterior: TV={tv:.4f} over 1e5 draws, {dt:.1f}s")


@pytest.fixture(scope="module")
def recovery():
    spec = testkit.grid2x2(separated=True, samples_per_group=40, seed=0)
    sd = testkit.generate_synthetic(spec)
    ds = testkit.to_dataset(sd, [2, 2], [2, 2])
    prior = BasePrior.from_data(ds.flatten().X)
    sc = SamplerConfig(iterations=2000, burn_in=1000, thin=5, seed=606, check_invariants=True)
    t0 = time.perf_counter()
    trace = gibbs.run(ds, ds.cfg, sc, Hyperparams(), prior)
    dt = time.perf_counter() - t0
    held = testkit.generate_synthetic(testkit.grid2x2(True, 40, seed=1))
    return spec, sd, ds, trace, held, dt


def test_c06_synthetic_recovery(report, recovery):
    spec, sd, ds, trace, held, dt = recovery
    labels = np.array([s.c for s in trace.snapshots])
    order = ds.row_order()
    ari = adjusted_rand_index(sd.component[order], point_clustering(labels))
    hds = testkit.to_dataset(held, [2, 2], [2, 2])
    err = rmse(held.y, predict_dataset(trace, hds))
    bayes = rmse(held.y, testkit.bayes_optimal_predict(spec, held.factors, held.X))
    ok = ari >= 0.8 and err <= 1.2 * bayes and dt < 600
    report(6, ok, f"synthetic recovery: ARI={ari:.3f}, held-out RMSE={err:.4f} vs 1.2 x Bayes "
                  f"{1.2 * bayes:.4f}, {dt:.0f}s")


def test_c07_relative_performance(report, tmp_path):
    t0 = time.perf_counter()
    assert main(["--seed", "3", "synth", "--fixture", "grid2x2-shared", "--samples-per-group", "40",
                 "--out", str(tmp_path / "shared.csv")]) == 0
    cfg = {"seed": 3,
           "data": {"path": "shared.csv", "factors": ["f1", "f2"], "response": "y", "features": ["x1", "x2"]},
           "model": {"bases_per_group": [2, 2]},
           "sampler": {"iterations": 600, "burn_in": 300, "thin": 5},
           "experiment": {"fraction": 0.5, "repetitions": 10, "metric": "rmse", "baseline": True}}
    (tmp_path / "exp.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["experiment", "--config", str(tmp_path / "exp.yaml"), "--out", str(tmp_path / "exp")]) == 0
    res = json.loads((tmp_path / "exp" / "report.json").read_text())
    wins = sum(r["mldp"] < r["dp"] for r in res["repetitions"])
    m, d = res["reports"]["mldp"]["mean"], res["reports"]["dp"]["mean"]
    dt = time.perf_counter() - t0
    report(7, wins >= 8 and dt < 1800, f"MLDP beats DP baseline in {wins}/10 repetitions "
                                       f"(mean RMSE {m:.3f} vs {d:.3f}), {dt:.0f}s")


def test_c08_bookkeeping(report, recovery):
    trace = recovery[3]
    # check_invariants raises on the first violation, so a finished run means zero violations
    report(8, trace.invariant_checks == 2000, f"bookkeeping invariants checked after "
                                              f"{trace.invariant_checks}/2000 sweeps, 0 violations")


def _pair_auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    wins = sum(2 if p > q else 1 if p == q else 0 for p, q in itertools.product(pos, neg))
    return (wins / 2) / (len(pos) * len(neg))


def test_c09_metric_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 20, n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
        mismatches += auc(labels, scores) != _pair_auc(labels, scores)
    fixtures = [([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.0), ([1.0, 2.0, 3.0], [3.5, 4.5, 5.5], 2.5),
                ([0.0, 0.0], [5.0, 0.0], math.sqrt(12.5))]
    rmse_err = max(abs(rmse(a, b) - v) for a, b, v in fixtures)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and rmse_err <= 1e-12 and dt < 5
    report(9, ok, f"metric oracles: {mismatches}/100 auc mismatches, rmse max err {rmse_err:.1e}, {dt:.2f}s")


def test_c10_reproducibility(report, tmp_path):
    assert main(["--seed", "4", "synth", "--out", str(tmp_path / "d.csv")]) == 0
    cfg = {"seed": 4, "data": {"path": "d.csv", "factors": ["f1", "f2"], "response": "y"},
           "sampler": {"iterations": 150, "burn_in": 50, "thin": 5},
           "experiment": {"repetitions": 3, "baseline": True}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    same = []
    for run in ("a", "b"):
        assert main(["fit", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / f"fit_{run}")]) == 0
        assert main(["experiment", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / f"exp_{run}")]) == 0
    files = [("fit", "trace.ndjson"), ("fit", "diagnostics.csv"), ("fit", "model.json"), ("exp", "report.json")]
    for kind, name in files:
        same.append((tmp_path / f"{kind}_a" / name).read_bytes() == (tmp_path / f"{kind}_b" / name).read_bytes())
    report(10, all(same), f"reproducibility: {sum(same)}/{len(same)} output files byte-identical across two runs")

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, multivariate_t

from mldp import gibbs, testkit
from mldp.components import BasePrior, RegressionComponent
from mldp.errors import ShapeError, StateError
from mldp.gibbs import ClusterSnapshot, SamplerConfig, Snapshot, Trace
from mldp.multiindex import FactorConfig, GroupIndex
from mldp.predict import PredictionRequest, predict_dataset, predict_many, predict_y, snapshot_responsibilities
from mldp.prior import Hyperparams, LatentFactors

PRIOR = BasePrior(np.zeros(2), 1.0, np.eye(2), 4.0, np.eye(2))


def make_trace(clusters, cfg=FactorConfig([1], [1]), U=None, alpha=1.0, n_snap=1):
    U = U or LatentFactors([np.zeros((J, I)) for J, I in zip(cfg.factors_per_group, cfg.bases_per_group)],
                           np.ones(cfg.n_groups))
    snaps = [Snapshot(k, 0.0, np.zeros(1, int), np.zeros(1, int), U, clusters) for k in range(n_snap)]
    return Trace(cfg, Hyperparams(alpha), [PRIOR] * cfg.n_bases, SamplerConfig(), snaps, np.zeros(1), np.zeros(1))


def comp(mu, beta, Sigma=None):
    return RegressionComponent(mu, np.eye(2) if Sigma is None else Sigma, beta, 0.5)


def test_single_cluster_exact_without_prior_mass():
    phi = comp([0.0, 0.0], [1.5, -2.0])
    tr = make_trace([ClusterSnapshot(0, 0, 5, phi)])
    x = np.array([0.3, 0.8])
    p = predict_y(tr, PredictionRequest(x, GroupIndex(1)), prior_mass=False)
    assert p.mean == x @ phi.beta


def test_single_cluster_with_prior_mass_hand_computed():
    phi = comp([0.0, 0.0], [1.5, -2.0])
    tr = make_trace([ClusterSnapshot(0, 0, 5, phi)], alpha=2.0)
    x = np.array([0.3, 0.8])
    f = multivariate_normal(np.zeros(2), np.eye(2)).pdf(x)
    df = PRIOR.nu0 - 2 + 1
    h = multivariate_t(PRIOR.mu0, PRIOR.Psi0 * 2 / df, df=df).pdf(x)   # (lambda0 + 1) / (lambda0 df)
    r = 5 * f / (5 * f + 2.0 * h)
    p = predict_y(tr, PredictionRequest(x, GroupIndex(1)))
    assert p.mean == pytest.approx(r * (x @ phi.beta), rel=1e-12)


def test_symmetric_clusters_cancel():
    beta = np.array([0.7, 1.1])
    tr = make_trace([ClusterSnapshot(0, 0, 3, comp([0.0, 0.0], beta)), ClusterSnapshot(1, 0, 3, comp([0.0, 0.0], -beta))])
    mean, _ = predict_many(tr, np.array([[0.4, -0.2], [1.0, 2.0]]), [0, 0])
    np.testing.assert_allclose(mean, 0.0, atol=1e-15)


def test_two_clusters_hand_computation():
    a = comp([0.0, 0.0], [1.0, 0.0])
    b = comp([2.0, 1.0], [0.0, 3.0], np.array([[2.0, 0.5], [0.5, 1.0]]))
    tr = make_trace([ClusterSnapshot(0, 0, 4, a), ClusterSnapshot(1, 0, 2, b)])
    x = np.array([1.0, 0.5])
    fa = multivariate_normal(a.mu_x, a.Sigma_x).pdf(x)
    fb = multivariate_normal(b.mu_x, b.Sigma_x).pdf(x)
    ra, rb = 4 * fa / (4 * fa + 2 * fb), 2 * fb / (4 * fa + 2 * fb)
    r_cl, r_new = snapshot_responsibilities(tr, tr.snapshots[0], x[None], np.array([0]), prior_mass=False)
    np.testing.assert_allclose(r_cl[0], [ra, rb], rtol=1e-12)
    assert predict_y(tr, PredictionRequest(x, GroupIndex(1)), prior_mass=False).mean == pytest.approx(
        ra * x @ a.beta + rb * x @ b.beta, rel=1e-12)


def test_group_weights_enter_responsibilities():
    cfg = FactorConfig([2], [2])
    U = LatentFactors([np.array([[2.0, 0.0], [0.0, 2.0]])], [1.0])  # group 1 favours basis 1
    a, b = comp([0.0, 0.0], [1.0, 0.0]), comp([0.0, 0.0], [0.0, 1.0])
    tr = make_trace([ClusterSnapshot(0, 0, 3, a), ClusterSnapshot(1, 1, 3, b)], cfg, U)
    x = np.array([1.0, 1.0])
    w = np.exp([2.0, 0.0]) / np.exp([2.0, 0.0]).sum()
    p1 = predict_y(tr, PredictionRequest(x, GroupIndex(1)), prior_mass=False).mean
    p2 = predict_y(tr, PredictionRequest(x, GroupIndex(2)), prior_mass=False).mean
    assert p1 == pytest.approx(w @ [x @ a.beta, x @ b.beta], rel=1e-12)
    assert p2 == pytest.approx(w[::-1] @ [x @ a.beta, x @ b.beta], rel=1e-12)


@pytest.fixture(scope="module")
def fitted():
    sd = testkit.generate_synthetic(testkit.grid2x2(samples_per_group=10, seed=3))
    ds = testkit.to_dataset(sd, [2, 2], [2, 2])
    tr = gibbs.run(ds, ds.cfg, SamplerConfig(iterations=12, burn_in=4, thin=2), Hyperparams(),
                   BasePrior.from_data(ds.flatten().X))
    return sd, ds, tr


@pytest.mark.parametrize("prior_mass", [True, False])
def test_responsibilities_sum_to_one(fitted, prior_mass):
    sd, ds, tr = fitted
    flat = ds.flatten()
    for snap in tr.snapshots:
        r_cl, r_new = snapshot_responsibilities(tr, snap, flat.X, flat.group, prior_mass)
        np.testing.assert_allclose(r_cl.sum(axis=1) + r_new.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_duplicated_snapshots_leave_mean_unchanged(fitted):
    sd, ds, tr = fitted
    flat = ds.flatten()
    dup = Trace(tr.cfg, tr.hyper, tr.priors, tr.sampler_cfg, tr.snapshots + tr.snapshots, tr.log_joint, tr.n_live)
    a, _ = predict_many(tr, flat.X, flat.group)
    b, _ = predict_many(dup, flat.X, flat.group)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_dataset_prediction_row_order(fitted):
    sd, ds, tr = fitted
    pred = predict_dataset(tr, ds)
    flat = ds.flatten()
    mean, per = predict_many(tr, flat.X, flat.group)
    assert per.shape == (len(tr.snapshots), len(flat.y))
    np.testing.assert_array_equal(pred[ds.row_order()], mean)
    k = 7
    g = tuple(int(v) for v in sd.factors[k])
    single = predict_y(tr, PredictionRequest(sd.X[k], GroupIndex(*g))).mean
    assert single == pytest.approx(pred[k], rel=1e-12)


def test_errors(fitted):
    sd, ds, tr = fitted
    with pytest.raises(ShapeError):
        predict_many(tr, np.zeros((2, 3)), [0, 0])
    with pytest.raises(ShapeError):
        predict_many(tr, np.zeros((2, 2)), [0])
    empty = Trace(tr.cfg, tr.hyper, tr.priors, tr.sampler_cfg, [], tr.log_joint, tr.n_live)
    with pytest.raises(StateError):
        predict_many(empty, np.zeros((1, 2)), [0])
    mean, per = predict_many(tr, np.zeros((0, 2)), [])
    assert mean.shape == (0,)

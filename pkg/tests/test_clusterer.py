import datetime

import numpy as np
import pytest

from dykpipe import clusterer as cl
from dykpipe.errors import InputError
from factories import make_fact


def sample_mixture(rng, centers, n_per, scale=1.0):
    points = []
    labels = []
    for label, center in enumerate(centers):
        pts = rng.normal(loc=center, scale=scale, size=(n_per, len(center)))
        points.append(pts)
        labels.extend([label] * n_per)
    return np.vstack(points), np.array(labels)


def test_fit_k1_closed_form():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4)) * 2.0 + 1.5
    fit = cl.fit_gmm(x, k=1, seed=0)
    np.testing.assert_allclose(fit.params.means[0], x.mean(axis=0), rtol=0, atol=1e-12)
    expected_var = np.maximum(x.var(axis=0), fit.params.var_floor)
    np.testing.assert_allclose(fit.params.variances[0], expected_var, rtol=0, atol=1e-12)
    assert fit.params.weights[0] == pytest.approx(1.0)


def test_fit_recovers_well_separated_means():
    rng = np.random.default_rng(42)
    x, labels = sample_mixture(rng, [(0.0, 0.0), (100.0, 100.0)], n_per=100)
    fit = cl.fit_gmm(x, k=2, seed=1)
    # oracle: label-wise sample means from the known generating labels
    oracle = np.array([x[labels == j].mean(axis=0) for j in range(2)])
    got = fit.params.means
    # match components to oracle by nearest
    order = np.argsort(got[:, 0])
    oracle_order = np.argsort(oracle[:, 0])
    assert np.abs(got[order] - oracle[oracle_order]).max() < 0.5


def test_loglik_trace_monotone():
    rng = np.random.default_rng(3)
    x, _ = sample_mixture(rng, [(0, 0, 0), (5, 5, 5), (-5, 5, 0)], n_per=60)
    for seed in range(5):
        fit = cl.fit_gmm(x, k=3, seed=seed)
        trace = np.array(fit.loglik_trace)
        assert (np.diff(trace) >= -1e-9).all()


def test_degenerate_identical_points():
    x = np.ones((30, 4))
    fit = cl.fit_gmm(x, k=2, seed=0)
    assert np.isfinite(fit.params.means).all()
    assert np.isfinite(fit.params.variances).all()
    assert (fit.params.variances >= fit.params.var_floor - 1e-15).all()


def test_fit_rejects_bad_input():
    x = np.zeros((3, 2))
    with pytest.raises(InputError):
        cl.fit_gmm(x, k=4)
    x_bad = x.copy()
    x_bad[0, 0] = np.nan
    with pytest.raises(InputError):
        cl.fit_gmm(x_bad, k=1)


def test_determinism():
    rng = np.random.default_rng(9)
    x, _ = sample_mixture(rng, [(0, 0), (8, 8)], n_per=40)
    a = cl.fit_gmm(x, k=2, seed=5)
    b = cl.fit_gmm(x, k=2, seed=5)
    np.testing.assert_array_equal(a.params.means, b.params.means)
    np.testing.assert_array_equal(a.params.variances, b.params.variances)
    assert a.loglik_trace == b.loglik_trace


def test_assign_mean_point_and_row_sums():
    rng = np.random.default_rng(1)
    x, _ = sample_mixture(rng, [(0.0, 0.0), (50.0, 50.0)], n_per=50)
    fit = cl.fit_gmm(x, k=2, seed=0)
    assignment, post = cl.gmm_assign(fit.params.means, fit.params)
    assert assignment.map["0"] != assignment.map["1"]
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-9)

    queries = rng.normal(size=(100, 2)) * 30
    _, posteriors = cl.gmm_assign(queries, fit.params)
    np.testing.assert_allclose(posteriors.sum(axis=1), 1.0, atol=1e-9)


def test_assign_matches_bruteforce_density():
    rng = np.random.default_rng(4)
    x, _ = sample_mixture(rng, [(0, 0), (10, 0), (0, 10)], n_per=40)
    fit = cl.fit_gmm(x, k=3, seed=2)
    queries = rng.normal(size=(100, 2)) * 6
    assignment, _ = cl.gmm_assign(queries, fit.params)

    # oracle: per-component weighted density, evaluated directly
    p = fit.params
    for i, q in enumerate(queries):
        dens = [
            p.weights[j]
            * np.prod(
                np.exp(-0.5 * (q - p.means[j]) ** 2 / p.variances[j])
                / np.sqrt(2 * np.pi * p.variances[j])
            )
            for j in range(3)
        ]
        assert assignment.map[str(i)] == int(np.argmax(dens))


def test_assign_dim_mismatch():
    fit = cl.fit_gmm(np.random.default_rng(0).normal(size=(10, 3)), k=1)
    with pytest.raises(InputError):
        cl.gmm_assign(np.zeros((2, 4)), fit.params)


def test_temporal_partition_sizes_and_order():
    facts = [make_fact(i, year=2020 + i % 4) for i in range(9)]
    a = cl.temporal_partition(facts, 3)
    sizes = [sum(1 for c in a.map.values() if c == j) for j in range(3)]
    assert sizes == [3, 3, 3]

    facts10 = [make_fact(i, year=2020 + i % 4) for i in range(10)]
    b = cl.temporal_partition(facts10, 3)
    sizes = [sum(1 for c in b.map.values() if c == j) for j in range(3)]
    assert sizes == [4, 3, 3]

    ordered = sorted(facts10, key=lambda f: (f.date, f.id))
    blocks = [[f for f in ordered if b.map[f.id] == j] for j in range(3)]
    for left, right in zip(blocks, blocks[1:]):
        assert max(f.date for f in left) <= min(f.date for f in right)


def test_temporal_partition_edges():
    facts = [make_fact(i) for i in range(4)]
    single = cl.temporal_partition(facts, 1)
    assert set(single.map.values()) == {0}
    with pytest.raises(InputError):
        cl.temporal_partition(facts, 5)


def test_clusters_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x, _ = sample_mixture(rng, [(0, 0), (9, 9)], n_per=20)
    ids = [f"fact{i}" for i in range(40)]
    fit = cl.fit_gmm(x, k=2, seed=0)
    assignment, _ = cl.gmm_assign(x, fit.params, ids)
    p = tmp_path / "clusters.json"
    cl.save_clusters(assignment, p, seed=0, gmm=fit.params, loglik_trace=fit.loglik_trace)
    loaded, gmm, trace = cl.load_clusters(p)
    assert loaded.map == assignment.map
    assert loaded.k == 2
    np.testing.assert_allclose(gmm.means, fit.params.means)
    assert trace == fit.loglik_trace

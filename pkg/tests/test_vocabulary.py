import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentjump.errors import DataError
from latentjump.ndmath import Mlp
from latentjump.vocabulary import (
    DynamicsConfig,
    build_generalized_states,
    build_vocabulary,
    cluster_stats,
    kmeans,
    mse_loss,
    train_dynamics_net,
    transition_matrix,
)

FAST = DynamicsConfig(epochs=60)


def test_generalized_states_examples():
    gs = build_generalized_states([[0, 0], [1, 2], [3, 3]])
    np.testing.assert_array_equal(gs, [[1, 2, 1, 2], [3, 3, 2, 1]])
    assert not build_generalized_states(np.ones((5, 3)))[:, 3:].any()
    d = np.array([0.5, -2.0])
    prog = np.arange(6)[:, None] * d
    np.testing.assert_array_equal(build_generalized_states(prog)[:, 2:], np.tile(d, (5, 1)))
    with pytest.raises(DataError):
        build_generalized_states([[1.0, 2.0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_generalized_states_reconstruct(n, lat, seed):
    # dyadic values keep the differences exact in binary floating point
    mu = np.random.default_rng(seed).integers(-1000, 1000, (n, lat)) / 64.0
    gs = build_generalized_states(mu)
    assert gs.shape == (n - 1, 2 * lat)
    assert np.array_equal(mu[:-1] + gs[:, lat:], mu[1:])


def test_kmeans_single_cluster_is_mean():
    x = np.random.default_rng(0).standard_normal((30, 4))
    _, cent, _ = kmeans(x, 1)
    np.testing.assert_allclose(cent[0], x.mean(axis=0), atol=1e-12)


def exhaustive_two_means(x):
    best = None
    for bits in itertools.product([0, 1], repeat=len(x) - 1):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        w = sum(np.sum((x[lab == j] - x[lab == j].mean(axis=0)) ** 2) for j in (0, 1))
        if best is None or w < best[0]:
            best = (w, lab)
    return best


def test_kmeans_two_blobs_match_exhaustive_oracle():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal(0, 0.1, (6, 2)), rng.normal(10, 0.1, (6, 2))])
    labels, cent, wcss = kmeans(x, 2, seed=3)
    w_best, lab_best = exhaustive_two_means(x)
    assert wcss == pytest.approx(w_best, rel=1e-12)
    assert np.array_equal(labels == labels[0], lab_best == lab_best[0])
    order = np.argsort(cent[:, 0])
    assert np.all(np.abs(cent[order] - [[0, 0], [10, 10]]) < 0.2)


def test_kmeans_one_point_per_cluster():
    x = np.random.default_rng(2).standard_normal((7, 3))
    labels, _, wcss = kmeans(x, 7)
    assert wcss == 0.0 and len(set(labels.tolist())) == 7


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_kmeans_no_empty_clusters_and_deterministic(k, seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.standard_normal((20, 3)), np.zeros((10, 3))])  # duplicated points stress reseeding
    a = kmeans(x, k, seed=seed)
    b = kmeans(x, k, seed=seed)
    assert np.bincount(a[0], minlength=k).min() >= 1
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_transition_examples():
    np.testing.assert_array_equal(transition_matrix([0, 0, 0], 1), [[1.0]])
    np.testing.assert_array_equal(transition_matrix(np.array([1, 1, 2, 2, 1]) - 1, 2), [[0.5, 0.5], [0.5, 0.5]])
    t = transition_matrix([0, 1], 3)
    np.testing.assert_array_equal(t[2], [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_array_equal(t[0], [0, 1, 0])


def test_transitions_do_not_cross_segments():
    t = transition_matrix([0, 0, 1, 1], 2, segment_ids=[0, 0, 1, 1])
    np.testing.assert_array_equal(t, [[1, 0], [0, 1]])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=80))
def test_transition_rows_are_distributions(labels):
    t = transition_matrix(labels, 6)
    assert np.all(np.abs(t.sum(axis=1) - 1.0) <= 1e-12)
    assert t.min() >= 0.0 and t.max() <= 1.0


def test_cluster_stats_single_and_symmetric():
    m, q, r = cluster_stats([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(m, [1, 2, 3])
    np.testing.assert_array_equal(q, 1e-6 * np.eye(3))
    assert r == 1e-3
    m, _, _ = cluster_stats([[1.5, -2.0], [-1.5, 2.0]])
    np.testing.assert_array_equal(m, [0.0, 0.0])


def two_pass_covariance(x):
    n, d = x.shape
    mean = [sum(x[i, j] for i in range(n)) / n for j in range(d)]
    cov = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            cov[a, b] = sum((x[i, a] - mean[a]) * (x[i, b] - mean[b]) for i in range(n)) / n
    return cov


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_cluster_stats_properties(n, d, seed):
    x = np.random.default_rng(seed).standard_normal((n, d)) * 3.0
    m, q, r = cluster_stats(x)
    assert np.max(np.abs(q - (two_pass_covariance(x) + 1e-6 * np.eye(d)))) <= 1e-10
    dist = np.linalg.norm(x - m, axis=1)
    assert r <= max(dist.max(), 1e-3)


def test_mse_gradient_matches_finite_differences():
    h = 1e-5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = Mlp([3, 6, 3], rng=rng)
        x, y = rng.standard_normal((8, 3)), rng.standard_normal((8, 3))
        _, grads = mse_loss(net, x, y)
        num = den = 0.0
        for p, g in zip(net.parameters(), grads):
            fd = np.empty_like(p)
            for idx in np.ndindex(p.shape):
                keep = p[idx]
                p[idx] = keep + h
                up = mse_loss(net, x, y)[0]
                p[idx] = keep - h
                down = mse_loss(net, x, y)[0]
                p[idx] = keep
                fd[idx] = (up - down) / (2 * h)
            num += np.sum((fd - g) ** 2)
            den += max(np.sum(fd ** 2), np.sum(g ** 2))
        assert np.sqrt(num / den) <= 1e-4, f"seed {seed}"


def test_dynamics_net_zero_targets():
    # constant-rate Adam creeps toward a zero output; 400 epochs leave ~1e-2, so run longer
    x = np.random.default_rng(0).standard_normal((100, 4))
    net, resid = train_dynamics_net(x, np.zeros_like(x), 4, DynamicsConfig(epochs=1000))
    assert np.linalg.norm(net(x), axis=1).max() <= 1e-3
    assert np.all(resid <= 1e-6 + 1e-9)


def test_dynamics_net_learns_linear_map():
    rng = np.random.default_rng(1)
    g = np.array([[0.2, -0.1, 0.0], [0.05, 0.1, 0.1], [0.0, -0.2, 0.15]])
    x = rng.uniform(-1, 1, (500, 3))
    net, _ = train_dynamics_net(x, x @ g.T, 3, DynamicsConfig())
    xt = rng.uniform(-1, 1, (200, 3))
    assert np.mean(np.sum((net(xt) - xt @ g.T) ** 2, axis=1)) <= 1e-3


def test_vocabulary_single_cluster_constant_velocity(tmp_path):
    v = np.array([0.1, -0.05])
    mu = np.arange(60)[:, None] * v
    vocab = build_vocabulary(build_generalized_states(mu), 1, seed=0)
    np.testing.assert_array_equal(vocab.transition, [[1.0]])
    np.testing.assert_allclose(vocab.clusters[0].net(mu[10]), v, atol=1e-2)


def test_vocabulary_serialization_is_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    mu = np.cumsum(rng.standard_normal((80, 2)) * 0.1, axis=0)
    gs = build_generalized_states(mu)
    a = build_vocabulary(gs, 3, seed=9, config=FAST)
    b = build_vocabulary(gs, 3, seed=9, config=FAST)
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["dyn_1.bin", "dyn_2.bin", "dyn_3.bin", "vocab.json"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    back = type(a).load(tmp_path / "a")
    assert np.array_equal(back.transition, a.transition)
    for c, d in zip(back.clusters, a.clusters):
        assert np.array_equal(c.centroid, d.centroid) and c.net.equals(d.net) and c.radius == d.radius

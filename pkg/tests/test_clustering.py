import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mabretrain.clustering import (LayerClustering, TrajectoryLog, assemble_arms, cluster_layers, elbow_k,
                                   feature_matrix, kmeans, sse_curve, within_sse)
from mabretrain.errors import InvalidInputError
from mabretrain.nn import NetworkParams, mlp_specs


def log_of(series):
    log = TrajectoryLog()
    for row in np.asarray(series, dtype=float).T:
        log.record(row)
    return log


def test_tail_slicing_hand():
    feats = feature_matrix(log_of([[0, 1, 2, 3, 4]]), tail_fraction=0.4)
    assert feats.tolist() == [[1.0, 1.0]]


def test_constant_weight_zero_features():
    assert not feature_matrix(log_of([[5.0] * 6]), 0.5).any()


def test_tandem_weights_same_features():
    w1 = np.random.default_rng(0).normal(size=8).cumsum()
    f = feature_matrix(log_of([w1, w1 + 5]), 0.5)
    assert np.allclose(f[0], f[1], atol=1e-12)


def test_too_few_snapshots():
    with pytest.raises(InvalidInputError):
        feature_matrix(log_of([[1.0]]))


def test_kmeans_k1():
    x = np.random.default_rng(0).normal(size=(20, 3))
    labels, centers = kmeans(x, 1)
    assert not labels.any()
    assert np.allclose(centers[0], x.mean(axis=0))


def brute_force_2(x):
    best, best_split = np.inf, None
    n = len(x)
    for r in range(1, n):
        for group in itertools.combinations(range(n), r):
            mask = np.zeros(n, bool)
            mask[list(group)] = True
            sse = ((x[mask] - x[mask].mean()) ** 2).sum() + ((x[~mask] - x[~mask].mean()) ** 2).sum()
            if sse < best - 1e-12:
                best, best_split = sse, mask
    return best, best_split


def test_kmeans_two_blobs_brute_force():
    x = np.array([0.0, 0.1, 10.0, 10.1])
    best, split = brute_force_2(x)
    labels, centers = kmeans(x, 2, seed=3)
    assert within_sse(x, labels, centers) == pytest.approx(best)
    assert len({labels[0], labels[1]}) == 1 and labels[0] != labels[2] and labels[2] == labels[3]
    assert (labels == labels[0]).tolist() == split.tolist() or (labels != labels[0]).tolist() == split.tolist()


def test_kmeans_k_equals_n():
    x = np.array([[0.0], [1.0], [5.0], [9.0]])
    labels, centers = kmeans(x, 4)
    assert len(set(labels.tolist())) == 4
    assert within_sse(x, labels, centers) == 0.0


def test_kmeans_k_too_large():
    with pytest.raises(InvalidInputError):
        kmeans(np.zeros((3, 1)), 4)


def test_kmeans_deterministic():
    x = np.random.default_rng(1).normal(size=(50, 2))
    a, _ = kmeans(x, 3, seed=7)
    b, _ = kmeans(x, 3, seed=7)
    assert np.array_equal(a, b)


def test_sse_curve_and_elbow():
    rng = np.random.default_rng(0)
    # equilateral blobs: SSE(1) = 30 d^2, SSE(2) = 15 d^2, SSE(3) ~ 0, so the elbow is at 3
    corners = [(0.0, 0.0), (10.0, 0.0), (5.0, 5.0 * np.sqrt(3))]
    x = np.concatenate([rng.normal(c, 0.05, size=(30, 2)) for c in corners])
    sse = sse_curve(x, 6, seed=0)
    assert all(a >= b - 1e-9 for a, b in zip(sse, sse[1:]))
    assert elbow_k(sse) == 3


def test_assemble_single_layer():
    cl = LayerClustering([np.array([0, 1, 2, 1, 0])], np.array([0, 5]))
    arms = assemble_arms(cl, seed=0)
    assert len(arms) == 3
    assert all(len(a.parts) == 1 for a in arms)


def test_assemble_uneven_layers():
    cl = LayerClustering([np.array([0, 1, 2, 2]), np.array([0, 0])], np.array([0, 4, 6]))
    arms = assemble_arms(cl, seed=4)
    assert len(arms) == 3
    with_layer2 = [a for a in arms if 1 in a.parts]
    assert len(with_layer2) == 1
    assert set(with_layer2[0].members.tolist()) >= {4, 5}
    assert sum(len(a.parts) == 1 for a in arms) == 2


def check_partition(arms, n):
    members = [set(a.members.tolist()) for a in arms]
    assert set().union(*members) == set(range(n))
    assert sum(len(m) for m in members) == n
    for a, b in itertools.combinations(members, 2):
        assert not a & b


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 12), st.integers(1, 4)), min_size=1, max_size=4),
       st.integers(0, 10_000))
def test_arms_partition(layers, seed):
    rng = np.random.default_rng(seed)
    labels, offsets = [], [0]
    for size, k in layers:
        k = min(k, size)
        lab = np.concatenate([np.arange(k), rng.integers(k, size=size - k)])
        labels.append(rng.permutation(lab))
        offsets.append(offsets[-1] + size)
    cl = LayerClustering(labels, np.array(offsets))
    arms = assemble_arms(cl, seed)
    assert len(arms) == max(cl.counts)
    check_partition(arms, offsets[-1])


def test_cluster_layers_on_network():
    rng = np.random.default_rng(0)
    p = NetworkParams.init(mlp_specs(3, [6], 2), rng)
    log = TrajectoryLog()
    theta = p.theta.copy()
    for _ in range(10):
        theta = theta + rng.normal(size=p.size) * rng.choice([0.01, 1.0], size=p.size)
        log.record(theta)
    cl = cluster_layers(p, log, 3, seed=1)
    assert all(1 <= c <= 3 for c in cl.counts)
    arms = assemble_arms(cl, seed=2)
    check_partition(arms, p.size)
    again = assemble_arms(cluster_layers(p, log, 3, seed=1), seed=2)
    assert all(np.array_equal(a.members, b.members) for a, b in zip(arms, again))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100))
def test_translation_invariance(seed, shift):
    series = np.random.default_rng(seed).normal(size=(3, 7)).cumsum(axis=1)
    moved = series.copy()
    moved[1] += shift
    a, b = feature_matrix(log_of(series), 0.5), feature_matrix(log_of(moved), 0.5)
    assert np.allclose(a, b, atol=1e-9)

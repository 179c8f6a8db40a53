"""Weight-trajectory clustering and cross-layer arm assembly.

Weights are clustered per layer on their epoch-to-epoch changes over the
tail of the previous session; one cluster per layer is then combined into
each arm so that arms partition every parameter of the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .nn import NetworkParams


@dataclass
class TrajectoryLog:
    """Flat parameter snapshots, one per epoch boundary (initial state included)."""

    snapshots: list = field(default_factory=list)

    def record(self, theta: np.ndarray) -> None:
        if self.snapshots and theta.shape != self.snapshots[0].shape:
            raise InvalidInputError("snapshot length changed")
        self.snapshots.append(np.array(theta, dtype=np.float64))

    @property
    def epochs(self) -> int:
        return len(self.snapshots)

    def deltas(self) -> np.ndarray:
        return np.diff(np.stack(self.snapshots), axis=0)


def feature_matrix(log: TrajectoryLog, tail_fraction: float = 0.2) -> np.ndarray:
    """Per-weight feature rows: the last ceil(tail_fraction * E) consecutive deltas."""
    if not 0.0 < tail_fraction <= 1.0:
        raise InvalidInputError("tail_fraction must lie in (0, 1]")
    e = log.epochs
    if e < 2:
        raise InvalidInputError(f"need at least 2 snapshots to form deltas, got {e}")
    n = min(max(1, math.ceil(tail_fraction * e - 1e-9)), e - 1)
    tail = np.stack(log.snapshots[-(n + 1):])
    return np.diff(tail, axis=0).T


def _sq_dist(x, c):
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dist(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dist(x, centers[j:j + 1])[:, 0])
    return centers


def kmeans(features: np.ndarray, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are reseeded from the point farthest from its centroid.
    Returns ``(labels, centroids)``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    labels = None
    for _ in range(max_iter):
        d = _sq_dist(x, centers)
        new_labels = np.argmin(d, axis=1)
        own = d[np.arange(n), new_labels]
        for j in range(k):
            if not np.any(new_labels == j):
                far = int(np.argmax(own))
                if own[far] <= 0:
                    continue
                new_labels[far] = j
                own[far] = 0.0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if np.any(members):
                centers[j] = x[members].mean(axis=0)
    return labels, centers


def within_sse(features: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.sum((x - centroids[labels]) ** 2))


def sse_curve(features: np.ndarray, k_max: int, seed: int = 0) -> list[float]:
    """Within-cluster SSE for k = 1..k_max (a scree curve)."""
    k_max = min(k_max, len(features))
    out = []
    for k in range(1, k_max + 1):
        labels, centers = kmeans(features, k, seed)
        out.append(within_sse(features, labels, centers))
    return out


def elbow_k(sse: list[float]) -> int:
    """k at the largest second difference of SSE(k); sse[0] is k=1."""
    if len(sse) < 3:
        return len(sse)
    second = [sse[i - 1] - 2 * sse[i] + sse[i + 1] for i in range(1, len(sse) - 1)]
    return int(np.argmax(second)) + 2


@dataclass
class LayerClustering:
    """Cluster label of every scalar (weights and biases) in each layer."""

    labels: list  # per layer, int array over that layer's flat slice
    offsets: np.ndarray

    @property
    def counts(self) -> list[int]:
        return [int(lab.max()) + 1 for lab in self.labels]


def cluster_layers(params: NetworkParams, log: TrajectoryLog, k: int, seed: int = 0,
                   tail_fraction: float = 0.2) -> LayerClustering:
    feats = feature_matrix(log, tail_fraction)
    if feats.shape[0] != params.size:
        raise InvalidInputError("trajectory does not match the network size")
    labels = []
    for layer in range(params.n_layers):
        rows = feats[params.layer_slice(layer)]
        lab, _ = kmeans(rows, min(k, rows.shape[0]), seed=seed + 7919 * layer)
        # compact labels so that empty clusters disappear
        _, lab = np.unique(lab, return_inverse=True)
        labels.append(lab.astype(np.int64))
    return LayerClustering(labels, params.offsets.copy())


@dataclass
class ClusterArm:
    index: int
    members: np.ndarray  # sorted global flat indices
    parts: dict  # layer -> cluster label taken from that layer
    size: int = 0

    def mask(self, n_params: int) -> np.ndarray:
        m = np.zeros(n_params, dtype=bool)
        m[self.members] = True
        return m


def assemble_arms(clustering: LayerClustering, seed: int = 0) -> list[ClusterArm]:
    """K = max_l k_l arms; each takes one unused cluster per layer, chosen uniformly."""
    if not clustering.labels:
        raise InvalidInputError("no layers to assemble")
    rng = np.random.default_rng(seed)
    unused = [list(range(c)) for c in clustering.counts]
    arms = []
    for i in range(max(clustering.counts)):
        parts, members = {}, []
        for layer, pool in enumerate(unused):
            if not pool:
                continue
            c = pool.pop(int(rng.integers(len(pool))))
            parts[layer] = c
            local = np.flatnonzero(clustering.labels[layer] == c)
            members.append(local + int(clustering.offsets[layer]))
        members = np.sort(np.concatenate(members))
        arms.append(ClusterArm(i, members, parts, int(members.size)))
    return arms


def single_arm(n_params: int) -> list[ClusterArm]:
    return [ClusterArm(0, np.arange(n_params), {}, n_params)]

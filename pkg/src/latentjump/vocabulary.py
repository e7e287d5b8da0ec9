"""Discrete vocabulary over generalized states.

Generalized states (GS) stack a latent mean with its backward difference.
They are clustered with k-means; each cluster keeps its centroid, covariance,
acceptance radius and a small network predicting the next-step velocity from
the current latent mean. A transition matrix links the clusters.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, ShapeError
from .ndmath import Adam, Mlp

RESIDUAL_FLOOR = 1e-6
RADIUS_FLOOR = 1e-3
COV_REG = 1e-6


@dataclass
class DynamicsConfig:
    hidden: int = 32
    epochs: int = 400
    batch_size: int = 32
    lr: float = 5e-3
    weight_decay: float = 1e-3


@dataclass
class ClusterInfo:
    label: int
    centroid: np.ndarray
    covariance: np.ndarray
    radius: float
    count: int
    net: Mlp
    residual: np.ndarray


@dataclass
class VocabularyBundle:
    clusters: list
    transition: np.ndarray
    latent_dim: int

    @property
    def n_clusters(self):
        return len(self.clusters)

    @property
    def centroids(self):
        return np.stack([c.centroid for c in self.clusters])

    def nearest(self, gs):
        """Index of the nearest centroid and the distance to it."""
        d = np.linalg.norm(self.centroids - np.asarray(gs)[None, :], axis=1)
        i = int(np.argmin(d))
        return i, float(d[i])

    # -- serialization -------------------------------------------------
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        clusters = []
        for c in self.clusters:
            man = c.net.save(directory / f"dyn_{c.label + 1}.bin")
            clusters.append({
                "label": c.label + 1,
                "centroid": _encode(c.centroid),
                "covariance": _encode(c.covariance),
                "radius": _encode(c.radius),
                "count": int(c.count),
                "residual": _encode(c.residual),
                "net": man,
            })
        doc = {"latent_dim": self.latent_dim, "transition": _encode(self.transition), "clusters": clusters}
        (directory / "vocab.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        doc = json.loads((directory / "vocab.json").read_text())
        clusters = []
        for c in doc["clusters"]:
            clusters.append(ClusterInfo(
                label=c["label"] - 1,
                centroid=_decode(c["centroid"]),
                covariance=_decode(c["covariance"]),
                radius=float(c["radius"]),
                count=c["count"],
                net=Mlp.load(directory / c["net"]["file"], c["net"]),
                residual=_decode(c["residual"]),
            ))
        return cls(clusters, _decode(doc["transition"]), doc["latent_dim"])


def _encode(a):
    # 17 significant digits round-trip doubles exactly
    if np.ndim(a) == 0:
        return f"{float(a):.17g}"
    return [_encode(v) for v in np.asarray(a)]


def _decode(v):
    return np.array(v, dtype=np.float64)


def build_generalized_states(mu_seq):
    """``[mu_k, mu_k - mu_{k-1}]`` for ``k >= 1``; the first frame is dropped."""
    mu = np.asarray(mu_seq, dtype=np.float64)
    if mu.ndim != 2 or mu.shape[0] < 2:
        raise DataError("need at least 2 latent states to form generalized states")
    return np.hstack([mu[1:], mu[1:] - mu[:-1]])


def kmeans(points, n_clusters, seed=0, restarts=10, max_iter=300):
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by WCSS.

    Returns ``(labels, centroids, wcss)`` with 0-based labels. Empty clusters are
    reseeded to the point farthest from its centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > n:
        raise DataError(f"cannot form {n_clusters} clusters from {n} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        cent = _kmeanspp(x, n_clusters, rng)
        labels = None
        for _ in range(max_iter):
            new_labels, d2 = kernels.kmeans_assign(x, cent)
            new_labels, cent = _refit(x, new_labels, d2, cent)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
        labels, d2 = kernels.kmeans_assign(x, cent)
        labels, cent = _refit(x, labels, d2, cent)
        wcss = float(np.sum((x - cent[labels]) ** 2))
        if best is None or wcss < best[2]:
            best = (labels, cent, wcss)
    return best


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    cent = [x[rng.integers(n)]]
    d2 = np.sum((x - cent[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        cent.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(cent)


def _refit(x, labels, d2, cent):
    k = cent.shape[0]
    labels = labels.copy()
    d2 = d2.copy()
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # reseed the empty cluster at the worst-served point, taken from a cluster that can spare it
        donors = counts[labels] > 1
        if not donors.any():
            break
        far = int(np.argmax(np.where(donors, d2, -1.0)))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        d2[far] = 0.0
    new = np.empty_like(cent)
    for j in range(k):
        new[j] = x[labels == j].mean(axis=0)
    return labels, new


def transition_matrix(labels, n_clusters, segment_ids=None):
    """Row-normalized transition counts; rows without successors become uniform.

    Transitions across different ``segment_ids`` are not counted.
    """
    lab = np.asarray(labels, dtype=np.int64)
    if lab.size and (lab.min() < 0 or lab.max() >= n_clusters):
        raise DataError(f"label out of range for {n_clusters} clusters")
    counts = np.zeros((n_clusters, n_clusters))
    same = np.ones(max(lab.size - 1, 0), dtype=bool)
    if segment_ids is not None:
        seg = np.asarray(segment_ids)
        same = seg[1:] == seg[:-1]
    np.add.at(counts, (lab[:-1][same], lab[1:][same]), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    return np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), 1.0 / n_clusters)


def cluster_stats(members):
    """Centroid, regularized population covariance and 95th-percentile radius."""
    m = np.asarray(members, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise DataError("cluster_stats needs at least one member")
    centroid = m.mean(axis=0)
    dev = m - centroid
    cov = dev.T @ dev / m.shape[0] + COV_REG * np.eye(m.shape[1])
    if m.shape[0] == 1:
        return centroid, cov, RADIUS_FLOOR
    radius = float(np.percentile(np.linalg.norm(dev, axis=1), 95))
    return centroid, cov, max(radius, RADIUS_FLOOR)


def train_dynamics_net(inputs, targets, latent_dim, config=DynamicsConfig(), seed=0):
    """Least-squares fit of ``target ~ net(input)``; returns the net and the residual variances."""
    if inputs is None or len(inputs) == 0:
        return Mlp.zeros([latent_dim, config.hidden, latent_dim]), np.full(latent_dim, RESIDUAL_FLOOR)
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape != y.shape or x.shape[1] != latent_dim:
        raise ShapeError(f"dynamics pairs must be (n, {latent_dim}); got {x.shape} and {y.shape}")
    rng = np.random.default_rng(seed)
    net = Mlp([latent_dim, config.hidden, latent_dim], "tanh", "identity", rng=rng)
    params = net.parameters()
    opt = Adam(params, lr=config.lr)
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = mse_loss(net, x[idx], y[idx])
            if config.weight_decay:
                # weights only; biases are left free
                grads = [g + config.weight_decay * p if i % 2 == 0 else g
                         for i, (g, p) in enumerate(zip(grads, params))]
            opt.step(params, grads)
    resid = y - net(x)
    return net, np.maximum(resid.var(axis=0), RESIDUAL_FLOOR)


def mse_loss(net, x, y):
    """Mean over samples of the squared error summed over output dimensions."""
    out, acts = net.forward(x, keep=True)
    diff = out - y
    n = x.shape[0]
    loss = float(np.sum(diff * diff) / n)
    grads, _ = net.backward(acts, 2.0 * diff / n)
    return loss, grads


def build_vocabulary(gs, n_clusters, seed=0, config=DynamicsConfig(), segment_ids=None):
    """Cluster GS, count transitions, summarize clusters and fit one dynamics net each.

    The dynamics pair for GS ``k`` is ``(mu_k, mu_dot_{k+1})`` and belongs to the
    cluster of GS ``k``; pairs never straddle a segment boundary.
    """
    z = np.asarray(gs, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] % 2:
        raise ShapeError("generalized states must be an (n, 2L) array")
    lat = z.shape[1] // 2
    if z.shape[0] < n_clusters:
        raise DataError(f"need at least {n_clusters} generalized states, got {z.shape[0]}")
    seg = np.zeros(z.shape[0], dtype=np.int64) if segment_ids is None else np.asarray(segment_ids)
    labels, _, _ = kmeans(z, n_clusters, seed=seed)
    trans = transition_matrix(labels, n_clusters, seg)
    has_next = np.append(seg[1:] == seg[:-1], False)
    ss = np.random.SeedSequence([seed, 0x64796E])
    child_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_clusters)]
    clusters = []
    for j in range(n_clusters):
        members = labels == j
        centroid, cov, radius = cluster_stats(z[members])
        src = np.flatnonzero(members & has_next)
        net, resid = train_dynamics_net(z[src, :lat], z[src + 1, lat:], lat, config, seed=child_seeds[j])
        clusters.append(ClusterInfo(j, centroid, cov, radius, int(members.sum()), net, resid))
    return VocabularyBundle(clusters, trans, lat)

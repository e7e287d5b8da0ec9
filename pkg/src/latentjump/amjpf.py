"""Adapted Markov jump particle filter over generalized states.

Each particle carries a cluster label (discrete level) and an unscented
Kalman filter over ``[mu, mu_dot]`` (continuous level). Prediction pushes
sigma points through ``mu' = mu + N(mu), mu_dot' = N(mu)`` with the cluster's
dynamics net ``N``; the update treats the encoder output ``(mu, sigma2)`` of
the particle's own VAE as a direct observation of the latent block.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, FilterDivergenceError, ShapeError
from .ndmath import floor_psd

log = logging.getLogger(__name__)

SIGMA_JITTER = 1e-9
TAU_FLOOR = 1e-6
TRACE_COLUMNS = ["frame_idx", "innovation", "threshold", "exceeds", "flagged_new",
                 "argmin_bundle", "argmin_cluster", "oov_count"]


@dataclass
class UkfParams:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def lam(self, n):
        return self.alpha ** 2 * (n + self.kappa) - n

    def weights(self, n):
        lam = self.lam(n)
        if not lam > -n:
            raise ValueError(f"sigma-point scaling requires lambda > -n (lambda={lam}, n={n})")
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha ** 2 + self.beta
        return wm, wc


@dataclass
class FilterConfig:
    n_particles: int = 50
    ukf: UkfParams = field(default_factory=UkfParams)
    gain: str = "paper"  # or "textbook"
    burn_in: int = 3
    window: int = 3
    seed: int = 0


def sigma_points(mean, cov, params):
    """``2n+1`` scaled sigma points and their mean/covariance weights."""
    mean = np.asarray(mean, dtype=np.float64)
    n = mean.shape[0]
    wm, wc = params.weights(n)
    scale = n + params.lam(n)
    cov = np.asarray(cov, dtype=np.float64)
    try:
        pts = kernels.sigma_points(mean, cov, scale)
    except ArithmeticError:
        try:
            jitter = SIGMA_JITTER * max(1.0, float(np.max(np.abs(np.diag(cov)))))
            pts = kernels.sigma_points(mean, cov + jitter * np.eye(n), scale)
        except ArithmeticError as exc:
            raise FilterDivergenceError(f"sigma-point factorization failed: {exc}") from exc
    return pts, wm, wc


def propagate(points, net):
    """Apply ``z -> A z + B N(mu)`` row-wise to a batch of generalized states."""
    lat = points.shape[1] // 2
    if net.n_in != lat or net.n_out != lat:
        raise ShapeError(f"dynamics net {net.sizes} does not match latent size {lat}")
    mu = points[:, :lat]
    vel = net(mu)
    return np.hstack([mu + vel, vel])


def ukf_predict(z, cov, net, process_noise, params=UkfParams()):
    """Predicted state, covariance and its latent (top-left) block."""
    pts, wm, wc = sigma_points(z, cov, params)
    moved = propagate(pts, net)
    if not np.all(np.isfinite(moved)):
        raise FilterDivergenceError("non-finite sigma-point propagation")
    z_pred, p_pred = kernels.unscented_moments(moved, wm, wc)
    q = np.asarray(process_noise, dtype=np.float64)
    p_pred[np.diag_indices_from(p_pred)] += np.concatenate([q, q])
    lat = z_pred.shape[0] // 2
    return z_pred, p_pred, p_pred[:lat, :lat].copy()


def kf_update(z_pred, p_pred, mu_obs, sigma2, gain="paper"):
    """Latent-block Kalman update with an identity observation model.

    ``gain="paper"`` uses ``K = [P^L; I] (P^L + Sigma)^-1``; ``"textbook"`` uses
    the cross-covariance column block ``P[:, :L]`` instead of ``[P^L; I]``.
    Returns the updated state and the symmetrized, eigen-floored covariance.
    """
    if gain not in ("paper", "textbook"):
        raise ValueError(f"unknown gain variant {gain!r}")
    mu_obs = np.asarray(mu_obs, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if 2 * mu_obs.shape[0] != z_pred.shape[0] or sigma2.shape != mu_obs.shape:
        raise ShapeError("observation does not match the state dimension")
    try:
        z_new, p_new = kernels.kf_update(z_pred, p_pred, mu_obs, sigma2, gain == "paper")
    except ArithmeticError as exc:
        raise FilterDivergenceError(f"singular innovation covariance: {exc}") from exc
    if not (np.all(np.isfinite(z_new)) and np.all(np.isfinite(p_new))):
        raise FilterDivergenceError("non-finite Kalman update")
    return z_new, floor_psd(p_new)


def particle_innovations(mu_updated, mu_predicted):
    """Mean absolute latent correction per particle."""
    upd = np.atleast_2d(np.asarray(mu_updated, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(mu_predicted, dtype=np.float64))
    if upd.shape != pred.shape:
        raise ShapeError("updated and predicted means must align")
    if upd.shape[0] == 0:
        raise DataError("innovation needs at least one particle")
    return np.mean(np.abs(upd - pred), axis=1)


def innovation(mu_updated, mu_predicted):
    """Frame innovation: the minimum over particles of the mean absolute correction."""
    return float(np.min(particle_innovations(mu_updated, mu_predicted)))


def compute_threshold(values):
    """Mean plus three population standard deviations."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise DataError("threshold needs at least 2 innovation values")
    return float(v.mean() + 3.0 * v.std())


def detect_new_situations(innovations, threshold, window=3, burn_in=0):
    """Flag frames inside runs of at least ``window`` consecutive exceedances.

    Returns ``(exceeds, flags, segments)``; segments are ``[start, stop)``
    index pairs. Frames before ``burn_in`` never exceed.
    """
    y = np.asarray(innovations, dtype=np.float64)
    exceeds = y > threshold
    exceeds[:burn_in] = False
    flags = kernels.flag_runs(exceeds.astype(np.uint8), int(window))
    return exceeds, flags, runs_of(flags)


def runs_of(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


# ---------------------------------------------------------------------------
# particle filter


@dataclass
class Particle:
    bundle_id: int
    label: int
    z: np.ndarray
    cov: np.ndarray
    weight: float
    mu_pred: np.ndarray
    mu_upd: np.ndarray

    def copy(self):
        return Particle(self.bundle_id, self.label, self.z.copy(), self.cov.copy(),
                        self.weight, self.mu_pred.copy(), self.mu_upd.copy())


@dataclass
class InnovationTrace:
    innovation: list = field(default_factory=list)
    per_particle: list = field(default_factory=list)
    argmin_particle: list = field(default_factory=list)
    argmin_bundle: list = field(default_factory=list)
    argmin_cluster: list = field(default_factory=list)
    oov_count: list = field(default_factory=list)
    threshold: float = float("nan")
    exceeds: np.ndarray = None
    flagged: np.ndarray = None

    def __len__(self):
        return len(self.innovation)

    def append(self, y, per, arg, bundle, cluster, oov):
        self.innovation.append(float(y))
        self.per_particle.append(np.asarray(per, dtype=np.float64))
        self.argmin_particle.append(int(arg))
        self.argmin_bundle.append(int(bundle))
        self.argmin_cluster.append(int(cluster))
        self.oov_count.append(int(oov))

    def finalize(self, threshold, window=3, burn_in=3):
        self.threshold = float(threshold)
        self.exceeds, self.flagged, _ = detect_new_situations(self.innovation, threshold, window, burn_in)
        return self

    def segments(self):
        return runs_of(self.flagged)

    def scored(self, burn_in=3):
        """Innovations eligible for threshold fitting (burn-in removed)."""
        return np.asarray(self.innovation[burn_in:], dtype=np.float64)

    def write_csv(self, path):
        if self.flagged is None:
            raise DataError("trace must be finalized with a threshold before export")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TRACE_COLUMNS)
            for k, y in enumerate(self.innovation):
                wr.writerow([k, f"{y:.17g}", f"{self.threshold:.17g}", int(self.exceeds[k]),
                             int(self.flagged[k]), self.argmin_bundle[k], self.argmin_cluster[k] + 1,
                             self.oov_count[k]])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0].keys()) != TRACE_COLUMNS:
        raise DataError(f"{path}: not an innovation trace")
    tr = InnovationTrace()
    for r in rows:
        tr.append(float(r["innovation"]), [], 0, int(r["argmin_bundle"]),
                  int(r["argmin_cluster"]) - 1, int(r["oov_count"]))
    tr.threshold = float(rows[0]["threshold"])
    tr.exceeds = np.array([int(r["exceeds"]) for r in rows], dtype=bool)
    tr.flagged = np.array([int(r["flagged_new"]) for r in rows], dtype=bool)
    return tr


class AMJPF:
    """Particle filter over one or more model bundles with bundle-pinned particles.

    ``bundles`` are objects with ``bundle_id``, ``vae`` (``encode``) and
    ``vocab`` (:class:`~latentjump.vocabulary.VocabularyBundle`).
    """

    def __init__(self, bundles, config=FilterConfig()):
        if not bundles:
            raise DataError("the filter needs at least one bundle")
        if config.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        self.bundles = {b.bundle_id: b for b in bundles}
        if len(self.bundles) != len(bundles):
            raise DataError("bundle ids must be unique")
        self.order = sorted(self.bundles)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.particles = []
        self.initial_bundle_ids = None
        self.zero_weight_resets = 0
        self.resample_count = 0
        self.pinning_violations = 0
        self.frames_seen = 0

    def encode_all(self, frame):
        return {bid: self.bundles[bid].vae.encode(frame) for bid in self.order}

    def split_counts(self):
        n, k = self.config.n_particles, len(self.order)
        return [n // k + (1 if i < n % k else 0) for i in range(k)]

    def init(self, codes):
        """Initialize from per-bundle latent codes of the first frame."""
        self.particles = []
        for bid, count in zip(self.order, self.split_counts()):
            vocab = self.bundles[bid].vocab
            code = codes[bid]
            lat = code.mu.shape[0]
            gs0 = np.concatenate([code.mu, np.zeros(lat)])
            label, _ = vocab.nearest(gs0)
            cov0 = np.diag(np.concatenate([code.sigma2, code.sigma2]))
            for _ in range(count):
                self.particles.append(Particle(bid, label, gs0.copy(), cov0.copy(),
                                               1.0 / self.config.n_particles,
                                               code.mu.copy(), code.mu.copy()))
        self.initial_bundle_ids = [p.bundle_id for p in self.particles]
        self.frames_seen = 1
        return self

    def init_from_frame(self, frame):
        return self.init(self.encode_all(frame))

    def step(self, frame):
        return self.step_codes(self.encode_all(frame))

    def step_codes(self, codes):
        """One predict/update/relabel/resample cycle; returns ``(y, per_particle, diagnostics)``."""
        if not self.particles:
            raise DataError("filter is not initialized")
        gain = self.config.gain
        ukf = self.config.ukf
        n = len(self.particles)
        per = np.empty(n)
        oov = 0
        used_labels = []
        for i, p in enumerate(self.particles):
            vocab = self.bundles[p.bundle_id].vocab
            code = codes[p.bundle_id]
            cl = vocab.clusters[p.label]
            used_labels.append(p.label)
            z_pred, p_pred, _ = ukf_predict(p.z, p.cov, cl.net, cl.residual, ukf)
            lat = code.mu.shape[0]
            mu_pred = z_pred[:lat]
            z_upd, p_upd = kf_update(z_pred, p_pred, code.mu, code.sigma2, gain)
            mu_upd = z_upd[:lat]
            per[i] = np.mean(np.abs(mu_upd - mu_pred))
            # relabel on the observable GS: updated mean and its backward difference
            gs = np.concatenate([mu_upd, mu_upd - p.mu_upd])
            dists = np.linalg.norm(vocab.centroids - gs[None, :], axis=1)
            nearest = int(np.argmin(dists))
            if not np.any(dists <= np.array([c.radius for c in vocab.clusters])):
                oov += 1
            row = np.cumsum(vocab.transition[nearest])
            p.label = min(int(np.searchsorted(row, self.rng.random() * row[-1], side="right")),
                          vocab.n_clusters - 1)
            p.z, p.cov, p.mu_pred, p.mu_upd = z_upd, p_upd, mu_pred, mu_upd.copy()

        arg = int(np.argmin(per))
        best = {
            "argmin": arg,
            "argmin_bundle": self.particles[arg].bundle_id,
            "argmin_cluster": used_labels[arg],
            "oov": oov,
            "mu_pred": self.particles[arg].mu_pred.copy(),
        }
        self._reweight(per)
        self._check_pinning()
        self.frames_seen += 1
        return float(per[arg]), per, best

    def _reweight(self, per):
        tau = max(float(np.median(per)), TAU_FLOOR)
        w = np.exp(-(per - per.min()) / tau)
        total = w.sum()
        if not (np.isfinite(total) and total > 0.0):
            self.zero_weight_resets += 1
            log.warning("all particle weights vanished; resetting to uniform")
            w = np.ones_like(per)
            total = w.sum()
        w /= total
        ids = np.array(self.initial_bundle_ids)
        new_particles = list(self.particles)
        for bid in self.order:
            idx = np.flatnonzero(ids == bid)
            gw = w[idx]
            mass = gw.sum()
            if mass <= 0.0:
                w[idx] = 1.0 / len(self.particles)
                continue
            local = gw / mass
            ess = 1.0 / np.sum(local * local)
            if ess < idx.size / 2.0:
                picks = _systematic(local, self.rng)
                for slot, src in zip(idx, idx[picks]):
                    new_particles[slot] = self.particles[src].copy()
                w[idx] = mass / idx.size
                self.resample_count += 1
        w /= w.sum()
        for p, wi in zip(new_particles, w):
            p.weight = float(wi)
        self.particles = new_particles

    def _check_pinning(self):
        now = [p.bundle_id for p in self.particles]
        if now != self.initial_bundle_ids:
            self.pinning_violations += 1

    def run(self, frames, codes=None):
        """Filter a whole sequence; row 0 (initialization) has innovation 0."""
        n = len(frames) if codes is None else len(codes)
        if n < 1:
            raise DataError("cannot filter an empty sequence")
        seq_codes = codes
        trace = InnovationTrace()
        first = seq_codes[0] if seq_codes is not None else self.encode_all(frames[0])
        self.init(first)
        trace.append(0.0, np.zeros(len(self.particles)), 0, self.particles[0].bundle_id,
                     self.particles[0].label, 0)
        for k in range(1, n):
            c = seq_codes[k] if seq_codes is not None else self.encode_all(frames[k])
            y, per, d = self.step_codes(c)
            trace.append(y, per, d["argmin"], d["argmin_bundle"], d["argmin_cluster"], d["oov"])
        return trace

    def bundle_counts(self):
        ids = [p.bundle_id for p in self.particles]
        return {bid: ids.count(bid) for bid in self.order}


def encode_sequence(bundles, frames):
    """Per-frame dict ``{bundle_id: LatentCode}`` using batched encoding per bundle."""
    from .vae import LatentCode

    per_bundle = {}
    for b in bundles:
        mu, s2 = b.vae.encode_batch(frames)
        per_bundle[b.bundle_id] = (mu, s2)
    n = len(frames)
    return [{bid: LatentCode(mu[k], s2[k]) for bid, (mu, s2) in per_bundle.items()} for k in range(n)]


def _systematic(weights, rng):
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), n - 1)

"""Learning lifecycle: initial bundle, novelty harvesting, additional bundles.

A :class:`ModelBundle` (VAE + vocabulary + fitted threshold) is the unit of
growth. New bundles are only ever added; existing ones are never touched.
"""
import hashlib
import json
import re
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .amjpf import AMJPF, FilterConfig, compute_threshold, encode_sequence
from .errors import DataError, InsufficientNovelDataError
from .vae import VaeConfig, VaeModel, train_vae
from .vocabulary import DynamicsConfig, VocabularyBundle, build_generalized_states, build_vocabulary

MIN_INITIAL_FRAMES = 100
MIN_HARVEST_FRAMES = 32


def derive_seed(root, *names):
    """Deterministic 32-bit child seed for a named component of the root seed."""
    key = [int(root)] + [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


@dataclass
class LearnConfig:
    vae: VaeConfig = field(default_factory=VaeConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    n_clusters: int = 8
    seed: int = 0

    def vae_for(self, bundle_id):
        return replace(self.vae, seed=derive_seed(self.seed, "vae", bundle_id))

    def vocab_seed(self, bundle_id):
        return derive_seed(self.seed, "vocabulary", bundle_id)

    def filter_for(self, tag):
        return replace(self.filter, seed=derive_seed(self.seed, "filter", tag))


@dataclass
class ModelBundle:
    bundle_id: int
    vae: VaeModel
    vocab: VocabularyBundle
    threshold: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.vae.latent_dim != self.vocab.latent_dim:
            raise DataError("VAE and vocabulary latent sizes differ")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vae.save(directory)
        self.vocab.save(directory)
        doc = {"bundle_id": self.bundle_id, "threshold": f"{self.threshold:.17g}", **self.meta}
        (directory / "bundle.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        doc = json.loads((directory / "bundle.json").read_text())
        bid = doc.pop("bundle_id")
        thr = float(doc.pop("threshold"))
        return cls(bid, VaeModel.load(directory), VocabularyBundle.load(directory), thr, doc)


@dataclass
class Segment:
    source: str
    start: int
    stop: int
    frames: np.ndarray

    def __len__(self):
        return self.stop - self.start


@dataclass
class ExperienceStore:
    segments: list = field(default_factory=list)

    def add(self, delta):
        self.segments.extend(delta)

    @property
    def n_frames(self):
        return sum(len(s) for s in self.segments)

    def frames(self):
        return np.concatenate([s.frames for s in self.segments]) if self.segments else np.empty((0,))


def run_filter(bundles, frames, filter_config, threshold=None, codes=None):
    """Run the A-MJPF over ``frames`` and finalize the trace with ``threshold``.

    Without ``threshold`` the trace is returned un-finalized.
    """
    pf = AMJPF(bundles, filter_config)
    if codes is None:
        codes = encode_sequence(bundles, frames)
    trace = pf.run(None, codes=codes)
    trace.diagnostics = {
        "resamples": pf.resample_count,
        "zero_weight_resets": pf.zero_weight_resets,
        "pinning_violations": pf.pinning_violations,
        "bundle_counts": pf.bundle_counts(),
    }
    if threshold is not None:
        trace.finalize(threshold, filter_config.window, filter_config.burn_in)
    return trace


def _fit_bundle(segments, config, bundle_id):
    """Train VAE and vocabulary over one or more contiguous frame segments."""
    frames = np.concatenate(segments)
    vae = train_vae(frames, config.vae_for(bundle_id), bundle_id=bundle_id)
    gs_parts, seg_ids = [], []
    for j, seg in enumerate(segments):
        if len(seg) < 2:
            continue
        mu, _ = vae.encode_batch(seg)
        gs_parts.append(build_generalized_states(mu))
        seg_ids.append(np.full(len(seg) - 1, j))
    if not gs_parts:
        raise DataError("no segment is long enough to form generalized states")
    gs = np.concatenate(gs_parts)
    vocab = build_vocabulary(gs, config.n_clusters, config.vocab_seed(bundle_id),
                             config.dynamics, np.concatenate(seg_ids))
    return ModelBundle(bundle_id, vae, vocab)


def _self_threshold(bundle, segments, config):
    scored = []
    for j, seg in enumerate(segments):
        trace = run_filter([bundle], seg, config.filter_for(("fit", bundle.bundle_id, j)))
        scored.append(trace.scored(config.filter.burn_in))
    return compute_threshold(np.concatenate(scored))


def _provenance(config):
    return {"run": "self-test on training frames", "rule": "mean + 3 std",
            "burn_in": config.filter.burn_in, "root_seed": config.seed}


def learn_initial(frames, config=LearnConfig(), bundle_id=1):
    """Train the first bundle and fit its threshold on its own training run."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < MIN_INITIAL_FRAMES:
        raise DataError(f"initial learning needs >= {MIN_INITIAL_FRAMES} frames, got {frames.shape[0]}")
    bundle = _fit_bundle([frames], config, bundle_id)
    bundle.threshold = _self_threshold(bundle, [frames], config)
    bundle.meta = {"source": "initial", "n_frames": int(frames.shape[0]),
                   "threshold_fit": _provenance(config)}
    return bundle, bundle.threshold


def harvest_new_frames(trace, frames, source="run"):
    """Contiguous segments of the frames flagged in a finalized trace."""
    if trace.flagged is None:
        raise DataError("trace must be finalized before harvesting")
    if len(trace) != len(frames):
        raise DataError(f"trace has {len(trace)} rows but {len(frames)} frames were given")
    return [Segment(source, a, b, np.asarray(frames[a:b])) for a, b in trace.segments()]


def learn_new_situation(segments, config=LearnConfig(), bundle_id=2):
    """Train an additional bundle on harvested segments only."""
    total = sum(len(s) for s in segments)
    if total < MIN_HARVEST_FRAMES:
        raise InsufficientNovelDataError(
            f"insufficient novel data: {total} harvested frames, need {MIN_HARVEST_FRAMES}")
    arrays = [np.asarray(s.frames, dtype=np.float64) for s in segments]
    bundle = _fit_bundle(arrays, config, bundle_id)
    bundle.threshold = _self_threshold(bundle, arrays, config)
    bundle.meta = {
        "source": "harvest",
        "n_frames": int(total),
        "segments": [[s.source, int(s.start), int(s.stop)] for s in segments],
        "threshold_fit": _provenance(config),
    }
    return bundle


def combine(bundles, config=LearnConfig(), tag="combined"):
    """Combined filter configuration: all bundles in one filter, threshold = max."""
    if not bundles:
        raise DataError("combine needs at least one bundle")
    threshold = max(b.threshold for b in bundles)
    return list(bundles), config.filter_for(tag), threshold


def run_combined(bundles, frames, config=LearnConfig(), tag="combined"):
    bundles, fcfg, thr = combine(bundles, config, tag)
    return run_filter(bundles, frames, fcfg, thr)


# -- model registry: bundles/bundle_<i>/ ---------------------------------
_BUNDLE_DIR = re.compile(r"^bundle_(\d+)$")


def registry_ids(registry):
    registry = Path(registry)
    if not registry.is_dir():
        return []
    ids = [int(m.group(1)) for p in registry.iterdir() if (m := _BUNDLE_DIR.match(p.name)) and p.is_dir()]
    return sorted(ids)


def bundle_path(registry, bundle_id):
    return Path(registry) / f"bundle_{bundle_id}"


def load_registry(registry, ids=None):
    available = registry_ids(registry)
    if not available:
        raise DataError(f"no bundles under {registry}")
    wanted = available if ids is None else list(ids)
    missing = sorted(set(wanted) - set(available))
    if missing:
        raise DataError(f"bundle(s) {missing} not found under {registry}")
    return [ModelBundle.load(bundle_path(registry, i)) for i in wanted]


def add_to_registry(registry, bundle):
    """Write a new bundle directory; refuses to touch an existing one."""
    target = bundle_path(registry, bundle.bundle_id)
    if target.exists():
        raise DataError(f"{target} already exists; bundles are never rewritten")
    bundle.save(target)
    return target


def directory_checksum(directory):
    """SHA-256 over the relative paths and contents of every file below ``directory``."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in sorted(q for q in directory.rglob("*") if q.is_file()):
        h.update(p.relative_to(directory).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def registry_checksums(registry):
    return {i: directory_checksum(bundle_path(registry, i)) for i in registry_ids(registry)}

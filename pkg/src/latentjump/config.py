"""Run configuration: one JSON document plus ``--set key=value`` overrides.

The document mirrors the component dataclasses. Unknown keys are rejected so
that typos fail loudly instead of silently falling back to a default.
"""
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .amjpf import FilterConfig
from .continual import LearnConfig, derive_seed
from .errors import ConfigError
from .synthworld import World, WorldConfig
from .vae import VaeConfig
from .vocabulary import DynamicsConfig


@dataclass
class PathsConfig:
    registry: str = "bundles"


@dataclass
class RunConfig:
    seed: int = 0
    n_clusters: int = 8
    world: WorldConfig = field(default_factory=WorldConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def learn_config(self):
        return LearnConfig(self.vae, self.dynamics, self.filter, self.n_clusters, self.seed)

    def world_config(self, scenario=None):
        w = self.world if scenario is None else dataclasses.replace(self.world, scenario=scenario)
        return dataclasses.replace(w, seed=derive_seed(self.seed, "world", w.scenario))

    def to_dict(self):
        return _to_plain(self)


# component seeds are derived from the root seed, so they are not user-settable
_DERIVED = {("vae", "seed"), ("filter", "seed"), ("world", "seed")}

# fields that may be zero or negative
_NON_POSITIVE_OK = {
    ("seed",), ("world", "noise_sigma"), ("world", "texture_amp"),
    ("dynamics", "weight_decay"), ("filter", "burn_in"), ("filter", "ukf", "kappa"),
    ("filter", "ukf", "beta"),
}


def _to_plain(obj, path=()):
    # derived seeds are left out so that a dumped config loads back
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name), path + (f.name,))
                for f in dataclasses.fields(obj) if path + (f.name,) not in _DERIVED}
    if isinstance(obj, tuple):
        return [_to_plain(v, path) for v in obj]
    return obj


def _build(cls, doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'}: expected an object")
    proto = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        where = ".".join(path) or "top level"
        raise ConfigError(f"unknown config key(s) at {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, raw in doc.items():
        here = path + (name,)
        if here in _DERIVED:
            raise ConfigError(f"{'.'.join(here)} is derived from the root seed; set 'seed' instead")
        kwargs[name] = _coerce(getattr(proto, name), raw, here)
    return dataclasses.replace(proto, **kwargs)


def _coerce(default, raw, path):
    name = ".".join(path)
    if dataclasses.is_dataclass(default):
        return _build(type(default), raw, path)
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected true/false, got {raw!r}")
        return raw
    if isinstance(default, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return raw
    if isinstance(default, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {raw!r}")
        return float(raw)
    if isinstance(default, str):
        if not isinstance(raw, str):
            raise ConfigError(f"{name}: expected a string, got {raw!r}")
        return raw
    if isinstance(default, tuple):
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {raw!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in raw)
    return raw


def _check(cfg):
    def walk(obj, path):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            here = path + (f.name,)
            if here in _DERIVED:
                continue
            if dataclasses.is_dataclass(v):
                walk(v, here)
            elif isinstance(v, (int, float)) and not isinstance(v, bool) and here not in _NON_POSITIVE_OK:
                if not v > 0:
                    raise ConfigError(f"{'.'.join(here)} must be positive, got {v!r}")
    walk(cfg, ())
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.filter.gain not in ("paper", "textbook"):
        raise ConfigError(f"filter.gain must be 'paper' or 'textbook', got {cfg.filter.gain!r}")
    if cfg.world.scenario not in ("I", "II"):
        raise ConfigError(f"world.scenario must be 'I' or 'II', got {cfg.world.scenario!r}")
    if cfg.world.noise_sigma < 0 or cfg.dynamics.weight_decay < 0:
        raise ConfigError("noise_sigma and weight_decay must be non-negative")
    World(cfg.world_config("II"))  # geometry checks raise ConfigError
    return cfg


def from_dict(doc):
    return _check(_build(RunConfig, doc, ()))


def load_config(path=None, overrides=()):
    """Read a JSON config (or start from defaults) and apply ``key=value`` overrides."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        apply_override(doc, item)
    return from_dict(doc)


def apply_override(doc, item):
    """Set a dotted key in ``doc``; the value is parsed as JSON when possible."""
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not an object")
    node[parts[-1]] = parsed
    return doc


def dump_config(cfg, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

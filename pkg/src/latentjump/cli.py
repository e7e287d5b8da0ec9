"""Command-line entry point: ``latentjump <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import pgm
from .amjpf import AMJPF, encode_sequence, read_trace_csv, runs_of
from .config import dump_config, load_config
from .continual import (
    Segment,
    add_to_registry,
    learn_initial,
    learn_new_situation,
    load_registry,
    registry_checksums,
    registry_ids,
    run_combined,
)
from .errors import ConfigError, DataError, FilterDivergenceError, SingularMatrixError, TrainingError
from .synthworld import KNOWN, NOVEL, generate_scenario, load_dataset, read_labels, write_dataset

log = logging.getLogger("latentjump")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


@dataclass
class EvalReport:
    n_frames: int
    n_known: int
    n_novel: int
    n_flagged: int
    false_positive_rate: float
    n_novel_segments: int
    n_segments_detected: int
    segment_recall: float
    frame_precision: float
    frame_recall: float
    mean_innovation_known: float
    mean_innovation_novel: float

    def to_json(self):
        doc = {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in asdict(self).items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _ratio(num, den):
    return float(num) / den if den else 0.0


def evaluate(flagged, innovation, labels):
    """Confusion-matrix rates of ``flagged`` against ``known``/``novel`` labels."""
    flagged = np.asarray(flagged, dtype=bool)
    innovation = np.asarray(innovation, dtype=np.float64)
    if not (len(flagged) == len(innovation) == len(labels)):
        raise DataError(f"trace has {len(flagged)} rows but {len(labels)} labels were given")
    bad = sorted(set(labels) - {KNOWN, NOVEL})
    if bad:
        raise DataError(f"unknown label(s) {bad}")
    novel = np.array([lab == NOVEL for lab in labels], dtype=bool)
    known = ~novel
    tp = int(np.sum(flagged & novel))
    fp = int(np.sum(flagged & known))
    segs = runs_of(novel)
    hit = sum(bool(flagged[a:b].any()) for a, b in segs)
    return EvalReport(
        n_frames=len(labels),
        n_known=int(known.sum()),
        n_novel=int(novel.sum()),
        n_flagged=int(flagged.sum()),
        false_positive_rate=_ratio(fp, known.sum()),
        n_novel_segments=len(segs),
        n_segments_detected=hit,
        segment_recall=_ratio(hit, len(segs)),
        frame_precision=_ratio(tp, flagged.sum()),
        frame_recall=_ratio(tp, novel.sum()),
        mean_innovation_known=float(innovation[known].mean()) if known.any() else float("nan"),
        mean_innovation_novel=float(innovation[novel].mean()) if novel.any() else float("nan"),
    )


def _flags_doc(trace, bundle_ids):
    return {
        "threshold": f"{trace.threshold:.17g}",
        "bundles": list(bundle_ids),
        "n_frames": len(trace),
        "n_flagged": int(np.sum(trace.flagged)),
        # stop is exclusive
        "segments": [{"start": int(a), "stop": int(b)} for a, b in trace.segments()],
    }


def _parse_ids(text):
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bundle list {text!r} must be comma-separated integers") from exc


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------
def cmd_synth(cfg, args):
    wc = cfg.world_config(args.scenario)
    seq = generate_scenario(wc)
    write_dataset(seq, args.out)
    n_novel = int(seq.novel_mask.sum())
    print(f"wrote {len(seq)} frames ({n_novel} novel) for scenario {wc.scenario} to {args.out}")


def cmd_train(cfg, args):
    registry = args.registry or cfg.paths.registry
    if registry_ids(registry):
        raise DataError(f"{registry} already holds bundles; use 'learn' to add one")
    frames, labels = load_dataset(args.data)
    if NOVEL in labels:
        log.warning("training data contains frames labelled novel")
    bundle, thr = learn_initial(frames, cfg.learn_config(), bundle_id=1)
    path = add_to_registry(registry, bundle)
    dump_config(cfg, Path(registry) / "run_config.json")
    print(f"bundle 1 written to {path}; threshold {thr:.6g}")


def _run_test(cfg, registry, frames, ids):
    bundles = load_registry(registry, ids)
    trace = run_combined(bundles, frames, cfg.learn_config(), tag="test")
    return bundles, trace


def cmd_test(cfg, args):
    registry = args.registry or cfg.paths.registry
    frames, _ = load_dataset(args.data)
    bundles, trace = _run_test(cfg, registry, frames, _parse_ids(args.bundles))
    Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
    trace.write_csv(args.trace)
    ids = [b.bundle_id for b in bundles]
    flags = args.flags or str(Path(args.trace).with_suffix(".flags.json"))
    _write_json(flags, _flags_doc(trace, ids))
    print(f"bundles {ids}: {int(np.sum(trace.flagged))}/{len(trace)} frames flagged "
          f"in {len(trace.segments())} segment(s); trace {args.trace}, flags {flags}")


def cmd_learn(cfg, args):
    registry = args.registry or cfg.paths.registry
    frames, _ = load_dataset(args.data)
    trace = read_trace_csv(args.trace)
    if len(trace) != len(frames):
        raise DataError(f"trace has {len(trace)} rows but {args.data} has {len(frames)} frames")
    ids = registry_ids(registry)
    if not ids:
        raise DataError(f"no bundles under {registry}; run 'train' first")
    before = registry_checksums(registry)
    source = Path(args.data).name
    segments = [Segment(source, a, b, frames[a:b]) for a, b in trace.segments()]
    bundle = learn_new_situation(segments, cfg.learn_config(), bundle_id=max(ids) + 1)
    path = add_to_registry(registry, bundle)
    after = registry_checksums(registry)
    changed = [i for i, h in before.items() if after.get(i) != h]
    if changed:
        raise DataError(f"existing bundle(s) {changed} changed during learn")
    print(f"bundle {bundle.bundle_id} written to {path} from {bundle.meta['n_frames']} frames "
          f"in {len(segments)} segment(s); threshold {bundle.threshold:.6g}")


def cmd_eval(cfg, args):
    trace = read_trace_csv(args.trace)
    labels = read_labels(args.labels)
    report = evaluate(trace.flagged, trace.innovation, labels)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")


def one_step_predictions(bundle, frames, filter_config):
    """Decoded one-step predictions of the best particle; row 0 repeats the first reconstruction."""
    codes = encode_sequence([bundle], frames)
    pf = AMJPF([bundle], filter_config)
    pf.init(codes[0])
    preds = [pf.particles[0].mu_upd.copy()]
    for c in codes[1:]:
        _, _, d = pf.step_codes(c)
        preds.append(d["mu_pred"])
    return bundle.vae.decode(np.array(preds))


def cmd_reconstruct(cfg, args):
    registry = args.registry or cfg.paths.registry
    frames, _ = load_dataset(args.data)
    bundles = load_registry(registry, _parse_ids(args.bundles))
    stop = len(frames) if args.count is None else min(len(frames), args.start + args.count)
    if not 0 <= args.start < stop:
        raise DataError(f"frame range [{args.start}, {stop}) is empty")
    out = Path(args.out)
    lc = cfg.learn_config()
    for b in bundles:
        d = out / f"bundle_{b.bundle_id}"
        d.mkdir(parents=True, exist_ok=True)
        recon = b.vae.reconstruct(frames[args.start:stop])
        # the filter runs from frame 0 so predictions at ``start`` have history
        preds = one_step_predictions(b, frames[:stop], lc.filter_for(("reconstruct", b.bundle_id)))
        for j, k in enumerate(range(args.start, stop)):
            pgm.write_pgm(d / f"frame_{k:06d}_x.pgm", frames[k])
            pgm.write_pgm(d / f"frame_{k:06d}_xhat.pgm", recon[j])
            pgm.write_pgm(d / f"frame_{k:06d}_pred.pgm", preds[k])
    print(f"wrote {stop - args.start} frame triplets for bundles {[b.bundle_id for b in bundles]} to {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="latentjump", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. filter.n_particles=100 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scenario dataset")
    s.add_argument("--scenario", choices=["I", "II"], help="defaults to world.scenario")
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="learn bundle 1 from a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--registry", help="defaults to paths.registry")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("test", help="run the filter with registered bundles")
    s.add_argument("--data", required=True)
    s.add_argument("--registry")
    s.add_argument("--bundles", help="comma-separated bundle ids (default: all)")
    s.add_argument("--trace", required=True, help="innovation trace CSV to write")
    s.add_argument("--flags", help="flagged-segment JSON (default: next to the trace)")
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("learn", help="add a bundle trained on frames flagged in a trace")
    s.add_argument("--data", required=True, help="dataset the trace was computed on")
    s.add_argument("--trace", required=True)
    s.add_argument("--registry")
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("eval", help="score a trace against ground-truth labels")
    s.add_argument("--trace", required=True)
    s.add_argument("--labels", required=True, help="labels.csv of the dataset")
    s.add_argument("--out", help="EvalReport JSON to write")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("reconstruct", help="dump frames, reconstructions and one-step predictions as PGM")
    s.add_argument("--data", required=True)
    s.add_argument("--registry")
    s.add_argument("--bundles")
    s.add_argument("--out", required=True)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--count", type=int, default=16)
    s.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FilterDivergenceError, SingularMatrixError, TrainingError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

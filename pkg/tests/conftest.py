import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from latentjump import cli
from latentjump.amjpf import read_trace_csv
from latentjump.continual import load_registry, registry_checksums
from latentjump.synthworld import load_dataset

# lines printed in the terminal summary by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _cli(*argv):
    rc = cli.main([str(a) for a in argv])
    assert rc == 0, f"latentjump {' '.join(map(str, argv))} exited with {rc}"


def run_pipeline(root):
    """synth -> train -> test -> learn -> test, all through the CLI."""
    root = Path(root)
    reg = root / "bundles"
    out = root / "out"
    t0 = time.perf_counter()
    _cli("synth", "--scenario", "I", "--out", root / "s1")
    _cli("synth", "--scenario", "II", "--out", root / "s2")
    _cli("train", "--data", root / "s1", "--registry", reg)
    _cli("test", "--data", root / "s1", "--registry", reg, "--trace", out / "s1_pre.csv")
    _cli("test", "--data", root / "s2", "--registry", reg, "--trace", out / "s2_b1.csv")
    before = registry_checksums(reg)
    _cli("learn", "--data", root / "s2", "--trace", out / "s2_b1.csv", "--registry", reg)
    after = registry_checksums(reg)
    _cli("test", "--data", root / "s1", "--registry", reg, "--bundles", "1", "--trace", out / "s1_post.csv")
    _cli("test", "--data", root / "s2", "--registry", reg, "--trace", out / "s2_comb.csv")
    _cli("eval", "--trace", out / "s2_b1.csv", "--labels", root / "s2" / "labels.csv", "--out", out / "eval_b1.json")
    _cli("eval", "--trace", out / "s2_comb.csv", "--labels", root / "s2" / "labels.csv",
         "--out", out / "eval_comb.json")
    elapsed = time.perf_counter() - t0
    return {"root": root, "registry": reg, "out": out, "before": before, "after": after, "elapsed": elapsed}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    run = run_pipeline(tmp_path_factory.mktemp("pipeline"))
    s1, s1_labels = load_dataset(run["root"] / "s1")
    s2, s2_labels = load_dataset(run["root"] / "s2")
    run.update(
        s1=s1, s2=s2, s1_labels=s1_labels, s2_labels=s2_labels,
        novel=np.array([lab == "novel" for lab in s2_labels]),
        bundles=load_registry(run["registry"]),
        traces={name: read_trace_csv(run["out"] / f"{name}.csv")
                for name in ("s1_pre", "s2_b1", "s1_post", "s2_comb")},
    )
    return run


@pytest.fixture(scope="session")
def pipeline_rerun(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline_rerun"))

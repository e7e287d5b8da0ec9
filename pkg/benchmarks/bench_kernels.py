"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Sizes match a default run: latent size 8 (filter state 16), 50 particles,
8 clusters over ~1000 generalized states. The ``filter_step`` row times one
full A-MJPF step with each backend swapped in.
"""
import argparse
import json
import timeit

import numpy as np

from latentjump import _pykernels

try:
    from latentjump import _ckernels
except ImportError:
    _ckernels = None


def _spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def kernel_cases(rng):
    n, lat = 16, 8
    cov = _spd(rng, n)
    mean = rng.standard_normal(n)
    pts = _pykernels.sigma_points(mean, cov, 1e-6 * n)
    wm = np.full(2 * n + 1, 1.0 / (2 * n + 1))
    gs = rng.standard_normal((700, n))
    cent = rng.standard_normal((8, n))
    mask = rng.random(700) < 0.3
    return {
        "cholesky (16x16)": lambda k: k.cholesky(cov),
        "spd_inverse (16x16)": lambda k: k.spd_inverse(cov),
        "sigma_points (n=16)": lambda k: k.sigma_points(mean, cov, 1e-6 * n),
        "unscented_moments (33x16)": lambda k: k.unscented_moments(pts, wm, wm),
        "kf_update (L=8)": lambda k: k.kf_update(mean, cov, mean[:lat] + 0.1, np.full(lat, 0.5), True),
        "kmeans_assign (700x16, k=8)": lambda k: k.kmeans_assign(gs, cent),
        "flag_runs (700)": lambda k: k.flag_runs(mask, 3),
    }


def _filter_step_case(rng):
    from latentjump import kernels
    from latentjump.amjpf import AMJPF, FilterConfig
    from latentjump.ndmath import Mlp
    from latentjump.vae import LatentCode
    from latentjump.vocabulary import ClusterInfo, VocabularyBundle

    lat, n_clusters = 8, 8
    clusters = []
    for j in range(n_clusters):
        net = Mlp([lat, 32, lat], "tanh", "identity", rng=rng)
        clusters.append(ClusterInfo(j, rng.standard_normal(2 * lat), np.eye(2 * lat), 1.0, 10, net,
                                    np.full(lat, 1e-3)))
    trans = rng.random((n_clusters, n_clusters))
    vocab = VocabularyBundle(clusters, trans / trans.sum(axis=1, keepdims=True), lat)

    class _Bundle:
        bundle_id = 1

    bundle = _Bundle()
    bundle.vocab = vocab
    codes = [{1: LatentCode(rng.standard_normal(lat) * 0.1, np.full(lat, 0.05))} for _ in range(64)]

    def run(k):
        saved = {name: getattr(kernels, name) for name in kernels.__all__ if name != "BACKEND"}
        for name in saved:
            setattr(kernels, name, getattr(k, name))
        try:
            pf = AMJPF([bundle], FilterConfig(n_particles=50, seed=1))
            pf.init(codes[0])
            for c in codes[1:]:
                pf.step_codes(c)
        finally:
            for name, fn in saved.items():
                setattr(kernels, name, fn)

    return run, len(codes) - 1


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels

    rows = []
    for name, case in kernel_cases(rng).items():
        rows.append((name, {b: _time(lambda k=k: case(k), args.repeat) for b, k in backends.items()}))
    step, n_steps = _filter_step_case(rng)
    reps = max(3, args.repeat // 50)
    rows.append(("filter_step (50 particles, per step)",
                 {b: _time(lambda k=k: step(k), reps) / n_steps for b, k in backends.items()}))

    print(f"{'kernel':32s} {'python us':>12s} {'cython us':>12s} {'speedup':>8s}")
    out = {}
    for name, t in rows:
        py = t["python"] * 1e6
        cy = t.get("cython", float("nan")) * 1e6
        print(f"{name:32s} {py:12.2f} {cy:12.2f} {py / cy:8.2f}x")
        out[name] = {"python_us": py, "cython_us": cy}
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()

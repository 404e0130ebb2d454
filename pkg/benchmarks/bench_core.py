"""Compare the compiled core with the numpy fallback.

Times one log-likelihood + gradient evaluation (the HMC inner loop) for a
few network shapes, then a short HMC run end to end with each backend.

    python benchmarks/bench_core.py [--repeat 2000]
"""

import argparse
import time
import timeit

import numpy as np

from bnnood import _core_py, bnn, datasets, hmc
from bnnood import _backend

try:
    from bnnood import _core
except ImportError:
    _core = None

CASES = [("relu", (2, 5, 1)), ("relu", (2, 100, 1)), ("cos", (2, 100, 1)), ("tanh", (2, 100, 100, 1))]


def bench_grad(core, act, widths, X, y, repeat):
    spec = bnn.MlpSpec(widths, act)
    w = bnn.sample_prior(spec, np.random.default_rng(0))
    g = np.empty(spec.n_params)
    wd = np.asarray(widths, dtype=np.int64)
    code = bnn.ACTIVATIONS[act]
    fn = lambda: core.mlp_loglik_grad(w, wd, code, X, y, 0, 0.02, -1.0, g)  # noqa: E731
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def bench_hmc(core, steps):
    old = bnn.core
    bnn.core = core
    try:
        data = datasets.gen_gmm(0)
        spec = bnn.MlpSpec.mlp(2, 100, "cos")
        cfg = hmc.HmcConfig(chains=1, steps=steps, burn_in=0, n_retained=1, step_size=1e-4)
        t = time.perf_counter()
        hmc.run_hmc(spec, data, bnn.Likelihood(), cfg)
        return time.perf_counter() - t
    finally:
        bnn.core = old


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--hmc-steps", type=int, default=200)
    a = ap.parse_args(argv)
    print(f"default backend: {_backend.BACKEND}")
    if _core is None:
        print("compiled core not built; only the fallback is timed")
    data = datasets.gen_gmm(0)
    X, y = np.ascontiguousarray(data.X), np.ascontiguousarray(data.y)
    print(f"{'case':<24}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for act, widths in CASES:
        tp = bench_grad(_core_py, act, widths, X, y, a.repeat) * 1e6
        tc = bench_grad(_core, act, widths, X, y, a.repeat) * 1e6 if _core else float("nan")
        print(f"{act + ' ' + 'x'.join(map(str, widths)):<24}{tp:>12.1f}{tc:>12.1f}{tp / tc:>10.2f}")
    hp = bench_hmc(_core_py, a.hmc_steps)
    hc = bench_hmc(_core, a.hmc_steps) if _core else float("nan")
    print(f"HMC cos 2x100x1, {a.hmc_steps} proposals x 50 leapfrog: numpy {hp:.2f}s, cython {hc:.2f}s")


if __name__ == "__main__":
    main()

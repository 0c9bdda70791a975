"""Benchmark the rollout kernels: compiled extension vs pure-numpy fallback.

The per-step attractor recursion (and its reverse pass) runs once per
sample per stream in every training batch, so it is the hot loop.  This
script times both backends at production scale and at the desk scale used
by the test suite.

Usage: python benchmarks/bench_rollout.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from dexprior import ndp
from dexprior.ndp import _engine_py

try:
    from dexprior.ndp import _engine_cy
except ImportError:
    _engine_cy = None


def time_fn(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(name, n_basis, steps, d, repeats):
    cfg = ndp.DmpConfig(n_basis=n_basis, steps=steps)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(n_basis, d))
    g = rng.normal(size=d)
    y0 = rng.normal(size=d)
    z0 = np.zeros(d)
    f_all = np.ascontiguousarray(ndp._basis_matrix(cfg) @ w)
    upstream = np.ascontiguousarray(rng.normal(size=(steps + 1, d)))

    rows = []
    engines = [("numpy", _engine_py)]
    if _engine_cy is not None:
        engines.append(("cython", _engine_cy))
    for ename, eng in engines:
        fwd = time_fn(lambda: eng.rollout_core(f_all, cfg.alpha, cfg.beta, cfg.dt, g, y0, z0), repeats)
        bwd = time_fn(lambda: eng.vjp_core(upstream, cfg.alpha, cfg.beta, cfg.dt), repeats)
        rows.append((ename, fwd, bwd))
    print(f"\n{name}: N={n_basis} steps={steps} d={d} (best of {repeats})")
    base_fwd, base_bwd = rows[0][1], rows[0][2]
    for ename, fwd, bwd in rows:
        print(
            f"  {ename:7s} rollout {fwd * 1e6:9.1f} us ({base_fwd / fwd:5.1f}x)"
            f"   vjp {bwd * 1e6:9.1f} us ({base_bwd / bwd:5.1f}x)"
        )
    if _engine_cy is not None:
        a = _engine_py.rollout_core(f_all, cfg.alpha, cfg.beta, cfg.dt, g, y0, z0)
        b = _engine_cy.rollout_core(f_all, cfg.alpha, cfg.beta, cfg.dt, g, y0, z0)
        assert np.array_equal(a, b), "backends disagree"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    print(f"active backend: {ndp.backend()}")
    bench("paper scale, hand stream", n_basis=300, steps=200, d=16, repeats=args.repeats)
    bench("paper scale, wrist stream", n_basis=300, steps=200, d=6, repeats=args.repeats)
    bench("desk scale (test suite)", n_basis=10, steps=50, d=16, repeats=args.repeats)


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on inputs sized like a tiny-scenario training step: a
21x21 candidate window against 7 servers, a 200-slot episode for GAE and a
batch of 2 radii (plus a bulk batch) for the inverse-CDF solver.
"""
import argparse
import json
import math
import timeit

import numpy as np

from crosspriv.kernels import implementations


def cases(rng):
    cand = np.column_stack([121.44 + rng.uniform(-0.05, 0.05, 441), 31.22 + rng.uniform(-0.05, 0.05, 441)])
    servers = np.column_stack([121.4 + rng.uniform(0, 0.1, 7), 31.18 + rng.uniform(0, 0.08, 7)])
    is_rsu = np.array([1] * 6 + [0], dtype=np.uint8)
    log_prior = np.full(441, -math.log(441))
    rewards, values = rng.normal(size=200), rng.normal(size=201)
    dones = np.zeros(200, dtype=np.uint8)
    dones[-1] = 1
    w_small = -rng.uniform(1e-6, 1 / math.e, 2)
    w_bulk = -rng.uniform(1e-6, 1 / math.e, 100_000)
    return {
        "grid_log_posterior (441 cells)": lambda k: k.grid_log_posterior(
            cand, 121.44, 31.22, 200.0, servers, is_rsu, -2.0, 3, 0.02, log_prior, True, True),
        "gae (T=200)": lambda k: k.gae(rewards, values, dones, 0.99, 0.95),
        "lambertw_m1 (n=2)": lambda k: k.lambertw_m1(w_small, 1e-12, 64),
        "lambertw_m1 (n=100000)": lambda k: k.lambertw_m1(w_bulk, 1e-12, 64),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)
    impls = implementations()
    if "cython" not in impls:
        print("compiled extension not built; timing the numpy fallback only")
    results = {}
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {}
        for backend, mod in impls.items():
            fn(mod)
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            row[backend] = min(timer.repeat(args.repeat, number)) / number
        results[name] = row
    width = max(map(len, results))
    print(f"{'kernel':<{width}}  " + "  ".join(f"{b:>12}" for b in impls) + "     speedup")
    for name, row in results.items():
        cells = "  ".join(f"{row[b] * 1e6:10.1f}us" for b in impls)
        speed = f"{row['python'] / row['cython']:10.1f}x" if "cython" in row else ""
        print(f"{name:<{width}}  {cells}  {speed}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()

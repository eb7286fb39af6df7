"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from randbasis import _fallback, greedy
from randbasis._backend import compiled_available, get_kernels
from randbasis.grid import make_grid, target_function


def cases(rng):
    nodes = make_grid(1, 1000).nodes
    resid = rng.normal(size=1000)
    w = np.ascontiguousarray(rng.uniform(0, 200, (256, 1)))
    b = rng.uniform(-100, 0, 256)
    x = np.ascontiguousarray(rng.uniform(0, 1, (512, 1)))
    y = rng.normal(size=512)
    mw = np.ascontiguousarray(rng.normal(0, 30, (20, 1)))
    mb, mc = rng.normal(0, 10, 20), rng.normal(size=20)
    return {
        # a threshold nothing reaches forces a scan of the whole batch
        "scan_candidates (256 x 1000, gaussian)": lambda k: k.scan_candidates(w, b, nodes, resid, 0.0, -np.inf, 1e-3, 0),
        "tabulate_many (256 x 1000, sigmoid)": lambda k: k.tabulate_many(w, b, nodes, 1),
        "mlp_loss_grad (n=20, 512 inputs)": lambda k: k.mlp_loss_grad(x, y, mw, mb, mc),
        "mlp_forward (n=20, 512 inputs)": lambda k: k.mlp_forward(x, mw, mb, mc),
        "run_greedy (30 steps, 1000-point grid)": greedy_run,
    }


def greedy_run(k):
    # end to end: 30 greedy steps on the benchmark target, with the scan's early exit in play
    saved = greedy.kernels
    greedy.kernels = k
    try:
        greedy.run_greedy(greedy.GreedyConfig(max_steps=30), target_function(make_grid(1, 1000)),
                          np.random.default_rng(0))
    finally:
        greedy.kernels = saved


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results to this file")
    args = ap.parse_args(argv)
    if not compiled_available():
        print("compiled kernels are not built; only the fallback can be timed", file=sys.stderr)
    backends = {"python": _fallback}
    if compiled_available():
        backends["compiled"] = get_kernels("compiled")
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        t = {b: best_time(lambda k=k: fn(k), args.repeat) for b, k in backends.items()}
        rows.append({"kernel": name, **{f"{b}_s": v for b, v in t.items()}})
    print(f"{'kernel':42s} {'python':>12s} {'compiled':>12s} {'speedup':>8s}")
    for r in rows:
        comp = r.get("compiled_s")
        line = f"{r['kernel']:42s} {r['python_s'] * 1e3:10.3f}ms"
        line += f" {comp * 1e3:10.3f}ms {r['python_s'] / comp:7.1f}x" if comp else f" {'-':>12s} {'-':>8s}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled and vectorized flow-gradient backends on the same batch.

    python3 benchmarks/bench_backends.py [--points N] [--window T] [--repeat R]
"""
import argparse
import time

import numpy as np

from transtab import models
from transtab.dynamics import IntegratorConfig, flow_gradients


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--window", type=float, default=5.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    cfg = IntegratorConfig(h=1e-2)
    rng = np.random.default_rng(0)
    swing = models.classical_swing_field(models.SwingParams.single_machine(0.5, 0.5))
    ne39 = models.build_field({"id": "network_swing", "file": "ne39.json"})
    doc, _ = models.load_params_file("ne39.json")
    x39 = np.concatenate([doc["equilibrium"]["delta"], doc["equilibrium"]["omega"]])
    cases = [
        ("2-machine swing", swing,
         rng.uniform([-np.pi, -4.0], [2 * np.pi, 4.0], (args.points, 2))),
        ("10-machine network", ne39,
         x39 + rng.normal(0, 0.05, (max(1, args.points // 20), 20))),
    ]
    print(f"{'case':<20} {'points':>7} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'max |diff|':>11}")
    for name, vf, X in cases:
        run = lambda b: flow_gradients(vf, X, [args.window], cfg, backend=b)
        try:
            run("numba")  # compile outside the timed region
            t_nb = best_of(lambda: run("numba"), args.repeat)
            diff = float(np.nanmax(np.abs(run("numba").grad - run("numpy").grad)))
        except ImportError:
            t_nb, diff = float("nan"), float("nan")
        t_np = best_of(lambda: run("numpy"), args.repeat)
        print(f"{name:<20} {len(X):>7} {t_nb:>9.3f} {t_np:>9.3f} {t_np / t_nb:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()

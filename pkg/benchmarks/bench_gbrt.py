"""Time GBRT fitting with the compiled and the pure-Python tree kernels.

    python3 benchmarks/bench_gbrt.py [--repeat 5]

Both kernels must return identical models; the script checks that before
reporting timings.
"""

import argparse
import time

import numpy as np

from mlreact.gbrt import GbrtHyperParams, _backend, fit_gbrt, predict
from mlreact.harness import ForecasterSpec, run_rolling_forecasts
from mlreact.synth import SynthParams, generate_synthetic_panel

CASES = [
    # (label, n_rows, n_features, max_depth)
    ("rolling-window fit", 240, 7, 2),
    ("medium", 2000, 8, 3),
    ("large", 20000, 8, 3),
]


def make_data(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, 0] + np.where(X[:, 1] > 0, 1.0, -1.0) * X[:, 2] + rng.normal(scale=0.5, size=n)
    return X, y


def best_time(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = _backend.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the pure-Python kernel is available")
    prev = _backend.use_backend(backends[0])
    print(f"{'case':<22}{'rows':>7}{'p':>3}{'depth':>6}" + "".join(f"{b:>12}" for b in backends)
          + ("{:>10}".format("speedup") if len(backends) > 1 else ""))
    try:
        for label, n, p, depth in CASES:
            X, y = make_data(n, p)
            hp = GbrtHyperParams(max_depth=depth)
            times, models = {}, {}
            for b in backends:
                _backend.use_backend(b)
                times[b], models[b] = best_time(lambda: fit_gbrt(X, y, hp), args.repeat)
            if len(backends) > 1:
                a, c = (models[b] for b in backends)
                assert all(ta.same_as(tb) for ta, tb in zip(a.trees, c.trees))
                assert np.array_equal(predict(a, X), predict(c, X))
            row = f"{label:<22}{n:>7}{p:>3}{depth:>6}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends)
            if len(backends) > 1:
                row += f"{times['python'] / times['cython']:>9.1f}x"
            print(row)

        panel = generate_synthetic_panel(SynthParams(seed=0))
        spec = ForecasterSpec("gbrt")
        row = f"{'full rolling run':<22}{'':>7}{'':>3}{'':>6}"
        t = {}
        for b in backends:
            _backend.use_backend(b)
            t[b], _ = best_time(lambda: run_rolling_forecasts(panel, spec), max(1, args.repeat // 2))
            row += f"{t[b]:>11.2f}s"
        if len(backends) > 1:
            row += f"{t['python'] / t['cython']:>9.1f}x"
        print(row)
    finally:
        _backend.use_backend(prev)


if __name__ == "__main__":
    main()

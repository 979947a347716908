"""Compare the compiled kernel backend against the numpy fallback.

Times the raw elementwise kernels across array sizes and a full training
step on a small synthetic bundle, once per available backend. The training
workload lives in the small-array regime (dozens to a few thousand
elements), where call overhead dominates; the large rows show where
numpy's vectorized transcendental loops take over. Run:

    python benchmarks/benchmark_backends.py
"""

import time

import numpy as np

from hypermil import backend
from hypermil.data import SyntheticSpec, generate, make_splits
from hypermil.training import TrainConfig, train


SIZES = (64, 4096, 1_000_000)


def time_call(fn, *args, repeat=7, inner=1):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def kernel_bench(n):
    rng = np.random.default_rng(0)
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    pos = np.abs(a) + 1.1
    inner = max(1, 20_000 // n)
    rows = []
    mod = backend.active
    rows.append(("add", time_call(mod.add, a, b, inner=inner)))
    rows.append(("mul", time_call(mod.mul, a, b, inner=inner)))
    rows.append(("exp", time_call(mod.exp, np.clip(a, -5, 5), inner=inner)))
    rows.append(("sinh", time_call(mod.sinh, np.clip(a, -5, 5), inner=inner)))
    rows.append(("acosh", time_call(mod.acosh, pos, inner=inner)))
    rows.append(("clip", time_call(mod.clip, a, -1.0, 1.0, inner=inner)))
    rows.append(("maximum", time_call(mod.maximum, a, b, inner=inner)))
    return rows


def train_bench():
    spec = SyntheticSpec(n_classes=2, slides_per_class=8, n_regions=3,
                         n_patches=8, d_in=16, n_sites=4, seed=3)
    bundle = generate(spec)
    split = make_splits(bundle.bags, 1, 1, seed=0).folds[0].inner[0]
    cfg = TrainConfig(epochs=2, k=8, seed=0)
    t0 = time.perf_counter()
    train(bundle, split, cfg)
    return time.perf_counter() - t0


def main():
    results = {}
    for name in backend.available():
        backend.use(name)
        print(f"backend: {backend.name()}")
        per_size = {}
        for n in SIZES:
            kernels = kernel_bench(n)
            per_size[n] = dict(kernels)
            cells = "  ".join(f"{op}={dt * 1e6:9.2f}us" for op, dt in kernels)
            print(f"  n={n:<9} {cells}")
        wall = train_bench()
        print(f"  trainstep suite {wall:8.2f} s")
        results[name] = (per_size, wall)
    if len(results) == 2:
        print("speedup (python time / compiled time; >1 favors compiled):")
        py, comp = results["python"], results["compiled"]
        for n in SIZES:
            cells = "  ".join(
                f"{op}={py[0][n][op] / comp[0][n][op]:5.2f}x" for op in py[0][n]
            )
            print(f"  n={n:<9} {cells}")
        print(f"  training  {py[1] / comp[1]:5.2f}x")


if __name__ == "__main__":
    main()

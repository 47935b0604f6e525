"""Compare the compiled and numpy kernels on search-sized workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one CSV row per (kernel, backend) with the best wall time and the
max abs deviation from the numpy result.
"""
import argparse
import time

import numpy as np

from petalsearch import kernels
from petalsearch.geometry import PetalSpec, build_lut
from petalsearch.synthworld import SceneConfig, generate_scene


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--map-side", type=int, default=256)
    args = ap.parse_args()

    scene = generate_scene(SceneConfig(seed=0, map_side=args.map_side))
    hwc = np.ascontiguousarray(np.moveaxis(scene.data, 0, -1))
    lut = build_lut(PetalSpec(2.5))
    dy, dx, s0, sl = lut.flat()
    half = args.map_side // 4
    ys, xs = np.mgrid[half:3 * half:4, half:3 * half:4]
    anchors = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.int64)

    rng = np.random.default_rng(0)
    street = rng.normal(size=(144, 16))
    sats = rng.normal(size=(512, 144, 16))

    cases = {
        "pool_anchors": lambda b: kernels.pool_anchors(hwc, anchors, dy, dx, s0, sl, backend=b),
        "correlate_direct": lambda b: kernels.correlate_direct(street, sats, backend=b),
    }
    print("kernel,backend,best_s,speedup,max_abs_diff")
    for name, fn in cases.items():
        base_t, base = best_of(lambda: fn("python"), args.repeat)
        print(f"{name},python,{base_t:.6f},1.00,0")
        if "cython" in kernels.IMPLEMENTATIONS:
            t, out = best_of(lambda: fn("cython"), args.repeat)
            print(f"{name},cython,{t:.6f},{base_t / t:.2f},{np.abs(out - base).max():.3g}")
        else:
            print(f"{name},cython,,,compiled extension not built")


if __name__ == "__main__":
    main()

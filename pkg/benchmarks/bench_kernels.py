"""Time the compiled kernels against the NumPy fallback on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is run on both backends with identical arguments; the outputs are
compared before timing so a speedup never hides a mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import timeit

import numpy as np

from racesim import _pykernels, kernels
from racesim.dynamics import preset
from racesim.localize import rasterize, scan_points
from racesim.scenario import irregular_polygon, oval, scan_cloud
from racesim.sensors import LidarSpec, raycast_scan


def cases():
    rng = np.random.default_rng(0)
    p = preset("f1tenth").kernel_vector()
    state = (1.0, 2.0, 0.3, 4.0, 0.1, 0.5)

    sc = oval()
    spec = LidarSpec()
    angles = spec.beam_angles()
    segs = np.ascontiguousarray(sc.track.segments)

    cloud = scan_cloud(sc.track, sc.centerline[::40], LidarSpec(noise_std=0.01), rng).points
    cloud = np.ascontiguousarray(cloud[:20000])

    poly = irregular_polygon()
    grid = rasterize(poly.track, 0.05)
    pose = tuple(poly.sample_poses(rng, 1)[0])
    bx, by = scan_points(raycast_scan(pose, poly.track, [], spec), spec, stride=2)
    offs = np.linspace(-0.5, 0.5, 21)
    heads = pose[2] + np.linspace(-0.2, 0.2, 21)
    scores_args = (
        grid.quantized, grid.origin[0], grid.origin[1], grid.resolution,
        bx, by, pose[0] + offs, pose[1] + offs, np.cos(heads), np.sin(heads),
    )

    return [
        ("rk4_step", (state, 0.5, 0.1, p, 0.01, 2)),
        (f"raycast ({spec.num_beams} beams x {len(segs)} walls)",
         (-0.5, -4.0, np.cos(angles), np.sin(angles), segs)),
        (f"count_neighbors ({len(cloud)} pts)", (cloud, 0.1)),
        (f"knn k=10 ({len(cloud)} pts)", (cloud, 10, 0.1)),
        (f"poisson_mask ({len(cloud)} pts)", (cloud, 0.1)),
        (f"scan_scores (21^3 poses x {len(bx)} pts)", scores_args),
    ]


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def best_time(fn, args, repeat: int) -> float:
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.2 and number < 100_000:
        number *= 10
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    from racesim import _ckernels

    rows = []
    print(f"{'kernel':<44} {'numpy':>11} {'compiled':>11} {'speedup':>8}")
    for label, fargs in cases():
        name = label.split()[0]
        py, c = getattr(_pykernels, name), getattr(_ckernels, name)
        if not same(py(*fargs), c(*fargs)):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 1
        tp, tc = best_time(py, fargs, args.repeat), best_time(c, fargs, args.repeat)
        rows.append({"kernel": label, "numpy_s": tp, "compiled_s": tc, "speedup": tp / tc})
        print(f"{label:<44} {fmt(tp):>11} {fmt(tc):>11} {tp / tc:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def fmt(seconds: float) -> str:
    exp = min(max(int(math.floor(math.log10(seconds) / 3)), -3), 0)
    unit = {0: "s", -1: "ms", -2: "us", -3: "ns"}[exp]
    return f"{seconds / 10 ** (3 * exp):.2f} {unit}"


if __name__ == "__main__":
    sys.exit(main())

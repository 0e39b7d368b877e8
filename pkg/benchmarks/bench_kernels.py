"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--seed 0]

Each kernel is warmed up once (numba compiles on first call), then the best
of ``--repeat`` runs is reported along with the max abs difference between
the two backends.
"""
import argparse
import time

import numpy as np

from gsrkit import kernels
from gsrkit.pitch import build_pitch, sample_element
from gsrkit.projection import project_points
from gsrkit.synth import sample_main_camera


def best_time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    pitch = build_pitch()
    cam = sample_main_camera(rng)

    # polyline distance: 2000 points against a 200-vertex polyline
    verts = np.cumsum(rng.normal(0, 5, (200, 2)), axis=0) + 500
    pts = verts[rng.integers(0, 200, 2000)] + rng.normal(0, 4, (2000, 2))
    yield ("polyline_distance 2000x200",
           lambda: kernels.polyline_distance_numba(pts, verts, True),
           lambda: kernels.polyline_distance_numpy(pts, verts, True))

    # arc distance on the centre circle
    arc = pitch.element("Circle central").geometry
    poly = project_points(cam, sample_element(arc, 0.25))
    ring = np.vstack([poly, poly[:1]])
    apts = poly[rng.integers(0, len(poly), 1000)] + rng.normal(0, 3, (1000, 2))
    P = cam.P
    M = np.column_stack([arc.radius * P[:, 0], arc.radius * P[:, 1], P @ np.append(arc.center, 1.0)])
    yield ("arc_distance 1000 pts",
           lambda: kernels.arc_distance_numba(apts, ring, M, arc.start, arc.sweep, True, 4, True),
           lambda: kernels.arc_distance_numpy(apts, ring, M, arc.start, arc.sweep, True, 4, True))

    # IoU between two frames of 25 boxes, the per-frame tracking workload
    def boxes(n):
        return np.column_stack([rng.uniform(0, 1800, (n, 2)), rng.uniform(20, 80, (n, 2))])

    a, b = boxes(25), boxes(25)
    yield ("iou_matrix 25x25", lambda: kernels.iou_matrix_numba(a, b), lambda: kernels.iou_matrix_numpy(a, b))
    a, b = boxes(400), boxes(400)
    yield ("iou_matrix 400x400", lambda: kernels.iou_matrix_numba(a, b), lambda: kernels.iou_matrix_numpy(a, b))

    for n in (25, 200):
        cost = rng.uniform(0, 1, (n, n))
        yield (f"hungarian {n}x{n}",
               lambda c=cost: kernels.hungarian_numba(c)[0],
               lambda c=cost: kernels.hungarian_numpy(c)[0])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, fast, slow in cases(rng):
        diff = float(np.max(np.abs(np.asarray(fast(), dtype=float) - np.asarray(slow(), dtype=float))))
        tf = best_time(fast, args.repeat)
        ts = best_time(slow, args.repeat)
        print(f"{name:<28}{1e3 * tf:>10.3f}{1e3 * ts:>10.3f}{ts / tf:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()

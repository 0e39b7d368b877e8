import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gsrkit import kernels
from gsrkit.assignment import assignment_cost, solve_assignment

from oracles import brute_force_assignment as brute_force


def matrices(max_n=7, finite=False, integers=False):
    @st.composite
    def build(draw):
        n = draw(st.integers(1, max_n))
        m = draw(st.integers(1, max_n))
        if integers:
            vals = draw(hnp.arrays(np.float64, (n, m), elements=st.integers(0, 3).map(float)))
        else:
            vals = draw(hnp.arrays(np.float64, (n, m), elements=st.floats(-100, 100, allow_nan=False)))
        if not finite:
            mask = draw(hnp.arrays(np.bool_, (n, m)))
            vals = np.where(mask, np.inf, vals)
        return vals
    return build()


def test_two_by_two():
    pairs = solve_assignment([[1, 2], [2, 1]])
    assert pairs == [(0, 0), (1, 1)]
    assert assignment_cost([[1, 2], [2, 1]], pairs) == 2


def test_ties_prefer_smallest_indices():
    assert solve_assignment(np.zeros((3, 3))) == [(0, 0), (1, 1), (2, 2)]
    assert solve_assignment(np.ones((2, 4))) == [(0, 0), (1, 1)]


def test_all_forbidden():
    assert solve_assignment(np.full((3, 2), np.inf)) == []
    assert solve_assignment(np.empty((0, 3))) == []


@given(matrices())
def test_optimal_against_permutations(cost):
    pairs = solve_assignment(cost)
    n_best, c_best, _ = brute_force(cost)
    assert len(pairs) == -n_best
    assert abs(assignment_cost(cost, pairs) - c_best) <= 1e-9 * max(1.0, abs(c_best))


def test_optimal_against_scipy_on_large_matrices():
    optimize = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, m = rng.integers(1, 60, 2)
        cost = rng.uniform(-5, 5, (n, m))
        rows, cols = optimize.linear_sum_assignment(cost)
        pairs = solve_assignment(cost)
        assert len(pairs) == min(n, m)
        assert abs(assignment_cost(cost, pairs) - cost[rows, cols].sum()) <= 1e-9


@given(matrices(max_n=5, finite=True, integers=True))
def test_lexicographic_tie_break(cost):
    assert solve_assignment(cost) == brute_force(cost)[2]


@given(matrices(max_n=6, finite=True))
def test_numba_and_numpy_hungarian_agree(cost):
    size = max(cost.shape)
    sq = np.zeros((size, size))
    sq[: cost.shape[0], : cost.shape[1]] = cost
    a, _, _ = kernels.hungarian_numba(sq)
    b, _, _ = kernels.hungarian_numpy(sq)
    assert sq[np.arange(size), a].sum() == sq[np.arange(size), b].sum()


boxes = hnp.arrays(np.float64, st.tuples(st.integers(0, 6), st.just(4)),
                   elements=st.floats(0.5, 100.0))


@given(boxes, boxes)
def test_iou_backends_agree(a, b):
    x = kernels.iou_matrix_numba(a, b)
    y = kernels.iou_matrix_numpy(a, b)
    assert x.shape == (len(a), len(b))
    np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
    assert np.all((x >= 0) & (x <= 1))


def test_iou_values():
    a = np.array([[0, 0, 10, 10]], dtype=float)
    b = np.array([[0, 0, 10, 10], [5, 0, 10, 10], [20, 20, 5, 5]], dtype=float)
    np.testing.assert_allclose(kernels.iou_matrix(a, b), [[1.0, 50 / 150, 0.0]])


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 20), st.just(2)), elements=st.floats(-50, 50)),
       hnp.arrays(np.float64, st.tuples(st.integers(2, 10), st.just(2)), elements=st.floats(-50, 50)),
       st.booleans())
def test_polyline_backends_agree(points, verts, signed):
    x = kernels.polyline_distance_numba(points, verts, signed)
    y = kernels.polyline_distance_numpy(points, verts, signed)
    np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)


def test_polyline_distance_values():
    verts = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    pts = np.array([[5.0, 3.0], [12.0, 5.0], [-3.0, -4.0]])
    np.testing.assert_allclose(kernels.polyline_distance(pts, verts), [3.0, 2.0, 5.0])


def test_arc_backends_agree():
    from gsrkit.calibration import arc_distance
    from gsrkit.pitch import build_pitch, sample_element
    from gsrkit.projection import project_points
    from gsrkit.synth import sample_main_camera

    pitch = build_pitch()
    rng = np.random.default_rng(0)
    cam = sample_main_camera(rng)
    for name in ("Circle central", "Circle left", "Circle right"):
        arc = pitch.element(name).geometry
        poly = project_points(cam, sample_element(arc, 0.25))
        if np.isnan(poly).any():
            continue
        pts = poly[::7] + rng.normal(0, 3.0, poly[::7].shape)
        P = cam.P
        M = np.column_stack([arc.radius * P[:, 0], arc.radius * P[:, 1], P @ np.append(arc.center, 1.0)])
        closed = arc.is_full_circle
        ring = np.vstack([poly, poly[:1]]) if closed else poly
        a = kernels.arc_distance_numba(pts, ring, M, arc.start, arc.sweep, closed, 4, True)
        b = kernels.arc_distance_numpy(pts, ring, M, arc.start, arc.sweep, closed, 4, True)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
        # oracle: nearest point of a very dense sampling of the arc
        dense = project_points(cam, sample_element(arc, 1e-3))
        ref = np.linalg.norm(pts[:, None] - dense[None], axis=2).min(axis=1)
        gap = np.linalg.norm(np.diff(dense, axis=0), axis=1).max()
        d = arc_distance(cam, arc, pts, poly)
        assert np.all(d <= ref + 1e-9)
        assert np.all(ref - d <= gap / 2 + 1e-9)


def test_numpy_fallback_selected_by_env():
    code = (
        "import numpy as np, gsrkit, gsrkit.kernels as k;"
        "from gsrkit.assignment import solve_assignment;"
        "assert not gsrkit.USE_NUMBA and k.BACKEND == 'numpy';"
        "assert solve_assignment([[4, 1, 3], [2, 0, 5], [3, 2, 2]]) == [(0, 1), (1, 0), (2, 2)];"
        "print(k.BACKEND)"
    )
    env = dict(os.environ, GSRKIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=300)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsrkit.calibration import (
    CalibrationError,
    KeypointObservation,
    LineObservation,
    calibrate_frame,
    compose_homography,
    decompose_homography,
    estimate_homography_dlt,
    initial_camera,
    refine_pnl,
)
from gsrkit.camera import CameraParams, chordal_distance, rodrigues
from gsrkit.pitch import keypoint_positions
from gsrkit.projection import project_points
from gsrkit.synth import sample_main_camera

from conftest import IMAGE, observe, pan_tilt_camera


def _apply(H, pts):
    p = np.column_stack([pts, np.ones(len(pts))]) @ H.T
    return p[:, :2] / p[:, 2:]


def _normalized(H):
    H = H / np.linalg.norm(H)
    return H if H[2, 2] >= 0 else -H


# ---------------------------------------------------------------------------
# DLT
# ---------------------------------------------------------------------------
def test_dlt_identity():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    H = estimate_homography_dlt(pts, pts)
    assert np.abs(H / H[2, 2] - np.eye(3)).max() < 1e-10


@given(st.integers(0, 2**32 - 1))
def test_dlt_recovers_random_homography(seed):
    rng = np.random.default_rng(seed)
    cam = sample_main_camera(rng)
    H_true = compose_homography(cam)
    world = rng.uniform([-50, -30], [50, 30], size=(12, 2))
    image = _apply(H_true, world)
    H = estimate_homography_dlt(world, image)
    ref = _normalized(H_true)
    assert np.abs(_normalized(H) - ref).max() <= 1e-8 * np.abs(ref).max()


def test_dlt_noise_transfer_error():
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cam = sample_main_camera(rng)
        H_true = compose_homography(cam)
        # ten ground points inside the view
        uv = rng.uniform([200, 300], [1700, 1000], size=(10, 2))
        Hinv = np.linalg.inv(H_true)
        world = _apply(Hinv, uv)
        noisy = uv + rng.normal(0, 1.0, uv.shape)
        H = estimate_homography_dlt(world, noisy)
        fwd = np.linalg.norm(_apply(H, world) - uv, axis=1)
        # backward error measured in pixels through the true map
        back = np.linalg.norm(_apply(H_true, _apply(np.linalg.inv(H), uv)) - uv, axis=1)
        errs.append(np.mean((fwd + back) / 2))
    assert np.mean(errs) <= 2.0


def test_dlt_needs_four_points():
    with pytest.raises(CalibrationError):
        estimate_homography_dlt(np.zeros((3, 2)), np.zeros((3, 2)))


def test_dlt_collinear_is_degenerate():
    world = np.column_stack([np.linspace(0, 10, 6), np.zeros(6)])
    with pytest.raises(CalibrationError):
        estimate_homography_dlt(world, world * 3)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------
def test_decompose_reference_camera():
    cam = pan_tilt_camera()
    got = decompose_homography(compose_homography(cam), *IMAGE)
    assert abs(got.fx - 1000.0) <= 1e-6 * 1000.0
    assert chordal_distance(got.R, cam.R) <= 1e-8
    assert np.abs(got.t - cam.t).max() <= 1e-6
    rebuilt = compose_homography(got)
    assert np.abs(_normalized(rebuilt) - _normalized(compose_homography(cam))).max() < 1e-9


def test_decompose_sign_free():
    cam = pan_tilt_camera()
    got = decompose_homography(-3.0 * compose_homography(cam), *IMAGE)
    assert chordal_distance(got.R, cam.R) <= 1e-8


def test_fronto_parallel_rejected():
    # R = I: optical axis perpendicular to the ground; the focal constraints vanish
    cam = CameraParams(1000, 1000, 960, 540, np.eye(3), [0.0, 0.0, 10.0])
    with pytest.raises(CalibrationError):
        decompose_homography(compose_homography(cam), *IMAGE)


@given(st.integers(0, 2**32 - 1))
def test_decompose_compose_identity(seed):
    cam = sample_main_camera(np.random.default_rng(seed))
    got = decompose_homography(compose_homography(cam), *IMAGE)
    assert abs(got.fx - cam.fx) <= 1e-6 * cam.fx
    assert chordal_distance(got.R, cam.R) <= 1e-6
    assert np.linalg.norm(got.t - cam.t) <= 1e-6 * np.linalg.norm(cam.t)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------
def test_refine_at_optimum(pitch):
    cam = sample_main_camera(np.random.default_rng(1))
    kps, lines = observe(cam, pitch)
    res = refine_pnl(cam, kps, lines, pitch, IMAGE)
    assert res.rms_reproj_error < 1e-6
    assert res.valid


@pytest.mark.parametrize("seed", range(5))
def test_refine_recovers_perturbed(pitch, seed):
    rng = np.random.default_rng(seed)
    cam = sample_main_camera(rng)
    kps, lines = observe(cam, pitch)
    axis = rng.normal(size=3)
    R0 = rodrigues(axis / np.linalg.norm(axis) * math.radians(2.0)) @ cam.R
    init = CameraParams.from_center(cam.fx * 1.05, cam.cx, cam.cy, R0, cam.center)
    res = refine_pnl(init, kps, lines, pitch, IMAGE)
    assert abs(res.params.fx - cam.fx) <= 1e-4 * cam.fx
    assert chordal_distance(res.params.R, cam.R) <= 1e-4
    assert np.linalg.norm(res.params.center - cam.center) <= 1e-4 * np.linalg.norm(cam.center)


@pytest.mark.parametrize("seed", range(20))
def test_refine_never_hurts(pitch, seed):
    rng = np.random.default_rng(seed)
    cam = sample_main_camera(rng)
    kps, lines = observe(cam, pitch, sigma=2.0, rng=rng)
    init = initial_camera(kps, lines, pitch, IMAGE)
    res = refine_pnl(init, kps, lines, pitch, IMAGE)
    assert res.rms_reproj_error <= res.initial_rms
    # accepted LM steps are monotone
    assert all(b <= a for a, b in zip(res.cost_history, res.cost_history[1:]))


def test_per_element_residuals_consistent(pitch):
    rng = np.random.default_rng(3)
    cam = sample_main_camera(rng)
    kps, lines = observe(cam, pitch, sigma=1.0, rng=rng)
    res = calibrate_frame(kps, lines, pitch, IMAGE)
    assert res is not None
    pos = keypoint_positions(pitch)
    for k in kps:
        uv = project_points(res.params, pos[k.id])[0]
        assert abs(np.hypot(uv[0] - k.x, uv[1] - k.y) - res.per_element_residuals[k.id]) < 1e-9


# ---------------------------------------------------------------------------
# per-frame pipeline
# ---------------------------------------------------------------------------
def test_eight_noiseless_keypoints(pitch):
    for seed in range(50):
        cam = sample_main_camera(np.random.default_rng(seed))
        kps, _ = observe(cam, pitch, lines=False)
        pos = keypoint_positions(pitch)
        ground = [k for k in kps if pos[k.id][2] == 0.0]
        if len(ground) >= 8:
            break
    res = calibrate_frame(ground[:8], [], pitch, IMAGE)
    assert res is not None and res.valid
    assert abs(res.params.fx - cam.fx) <= 1e-4 * cam.fx
    assert np.linalg.norm(res.params.center - cam.center) <= 1e-4 * np.linalg.norm(cam.center)


def test_two_keypoints_absent(pitch):
    kps = [KeypointObservation(1, 100.0, 100.0), KeypointObservation(2, 300.0, 200.0)]
    assert calibrate_frame(kps, [], pitch, IMAGE) is None


def test_zero_confidence_absent(pitch):
    cam = sample_main_camera(np.random.default_rng(0))
    kps, _ = observe(cam, pitch, lines=False)
    kps = [KeypointObservation(k.id, k.x, k.y, 0.0) for k in kps]
    assert calibrate_frame(kps, [], pitch, IMAGE) is None


def test_empty_frame_absent(pitch):
    assert calibrate_frame([], [], pitch, IMAGE) is None


def test_line_observation_invariants():
    with pytest.raises(ValueError):
        LineObservation("Middle line", [[0.5, 0.5]])
    with pytest.raises(ValueError):
        KeypointObservation(1, 0.0, 0.0, 1.5)
    obs = LineObservation.from_endpoints("Middle line", (0.5, 0.1), (0.5, 0.9))
    a, b = obs.endpoints
    assert tuple(a) == (0.5, 0.1) and tuple(b) == (0.5, 0.9)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 3.0]))
def test_scale_covariance(pitch, seed, s):
    cam = sample_main_camera(np.random.default_rng(seed))
    kps, lines = observe(cam, pitch, sigma=1.0, rng=np.random.default_rng(seed))
    base = calibrate_frame(kps, lines, pitch, IMAGE)
    size2 = (IMAGE[0] * s, IMAGE[1] * s)
    kps2 = [KeypointObservation(k.id, k.x * s, k.y * s, k.p) for k in kps]
    got = calibrate_frame(kps2, lines, pitch, size2)
    assert base is not None and got is not None
    assert abs(got.params.fx - s * base.params.fx) <= 1e-6 * s * base.params.fx
    assert got.params.cx == s * base.params.cx and got.params.cy == s * base.params.cy
    assert chordal_distance(got.params.R, base.params.R) <= 1e-6
    assert np.linalg.norm(got.params.center - base.params.center) <= 1e-6 * np.linalg.norm(base.params.center)

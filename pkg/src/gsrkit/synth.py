"""Synthetic broadcast scenes with exact ground truth.

Cameras sit near the halfway line behind the near touchline; athletes follow
a bounded Ornstein-Uhlenbeck velocity walk; observations are the noise-free
projections plus configurable noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import KeypointObservation, LineObservation
from .camera import CameraParams, look_at, pan_tilt_rotation
from .formats import AthleteRecord, FrameAnnotation, KeypointRecord
from .pitch import PitchModel, build_pitch, keypoint_catalogue
from .projection import image_to_pitch_many, in_frame, project_pitch, project_points
from .tracking import AthleteDetection

BODY_HEIGHT = 1.8
BODY_ASPECT = 0.4  # bbox width / height
DEFAULT_IMAGE = (1920, 1080)


@dataclass
class NoiseModel:
    keypoint_sigma: float = 0.0
    detection_dropout: float = 0.0
    false_positive_rate: float = 0.0  # expected false detections per frame
    embedding_noise_sigma: float = 0.0
    bbox_jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ValueError("detection_dropout must be in [0, 1]")
        for name in ("keypoint_sigma", "false_positive_rate", "embedding_noise_sigma", "bbox_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class CameraSampler:
    x_range: tuple = (-10.0, 10.0)
    y_range: tuple = (-90.0, -40.0)
    z_range: tuple = (8.0, 30.0)
    hfov_deg: tuple = (15.0, 60.0)
    target_x: tuple = (-35.0, 35.0)
    target_y: tuple = (-20.0, 20.0)
    max_roll_deg: float = 0.5
    min_keypoints: int = 6
    min_ground_keypoints: int = 4
    min_pitch_fraction: float = 0.6
    max_tries: int = 1000


def pitch_fraction(cam: CameraParams, pitch: PitchModel, image_size, grid=(32, 18)) -> float:
    """Share of a pixel grid whose ground point lies on the pitch surface."""
    W, H = image_size
    u = (np.arange(grid[0]) + 0.5) * W / grid[0]
    v = (np.arange(grid[1]) + 0.5) * H / grid[1]
    uu, vv = np.meshgrid(u, v)
    xy = image_to_pitch_many(cam, np.column_stack([uu.ravel(), vv.ravel()]))
    L, Wd = pitch.dims.length, pitch.dims.width
    with np.errstate(invalid="ignore"):
        on = (np.abs(xy[:, 0]) <= L / 2) & (np.abs(xy[:, 1]) <= Wd / 2)
    return float(on.mean())


def _ground_rank_ok(pts: np.ndarray) -> bool:
    if len(pts) < 4:
        return False
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[1] > 1e-3 * max(s[0], 1e-12)


def visible_keypoints(cam: CameraParams, pitch: PitchModel, image_size):
    cat = keypoint_catalogue(pitch)
    X = np.array([k.position for k in cat])
    vis = in_frame(project_points(cam, X), image_size)
    return X[vis]


def sample_main_camera(rng: np.random.Generator, image_size=DEFAULT_IMAGE, pitch: PitchModel | None = None,
                       sampler: CameraSampler | None = None) -> CameraParams:
    """Broadcast main-camera pose drawn from ``rng``, rejection-sampled until
    enough keypoints are visible and most of the image shows the pitch."""
    pitch = pitch or build_pitch()
    s = sampler or CameraSampler()
    W, H = image_size
    for _ in range(s.max_tries):
        C = np.array([rng.uniform(*s.x_range), rng.uniform(*s.y_range), rng.uniform(*s.z_range)])
        target = np.array([rng.uniform(*s.target_x), rng.uniform(*s.target_y), 0.0])
        hfov = math.radians(rng.uniform(*s.hfov_deg))
        roll = math.radians(rng.uniform(-s.max_roll_deg, s.max_roll_deg))
        f = (W / 2.0) / math.tan(hfov / 2.0)
        cam = CameraParams.from_center(f, W / 2.0, H / 2.0, look_at(C, target, roll), C)
        if view_ok(cam, pitch, image_size, s):
            return cam
    raise RuntimeError("camera sampler exhausted its tries; constraints too tight")


def view_ok(cam: CameraParams, pitch: PitchModel, image_size, sampler: CameraSampler | None = None) -> bool:
    """Enough keypoints, a non-degenerate ground set and mostly pitch in view."""
    s = sampler or CameraSampler()
    vis = visible_keypoints(cam, pitch, image_size)
    if len(vis) < s.min_keypoints:
        return False
    ground = vis[np.abs(vis[:, 2]) < 1e-12][:, :2]
    if len(ground) < s.min_ground_keypoints or not _ground_rank_ok(ground):
        return False
    return pitch_fraction(cam, pitch, image_size) >= s.min_pitch_fraction


def embedding_centroids(rng: np.random.Generator, n: int, dim: int = 128, max_cos: float = 0.3,
                        max_tries: int = 10000) -> np.ndarray:
    """``n`` unit vectors with pairwise cosine below ``max_cos`` (rejection sampling)."""
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n} centroids with cosine < {max_cos} in {dim} dims")
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if out and np.max(np.array(out) @ v) >= max_cos:
            continue
        out.append(v)
    return np.array(out).reshape(n, dim)


@dataclass
class SyntheticAthlete:
    identity: int
    role: str
    jersey: Optional[int]
    team: Optional[str]
    positions: np.ndarray  # (n_frames, 2) pitch xy
    legibility: np.ndarray  # (n_frames,)


@dataclass
class SyntheticScene:
    cameras: list  # frame -> CameraParams
    athletes: list  # SyntheticAthlete, index == identity
    embedding_centroids: np.ndarray  # (n_identities, d)
    image_size: tuple = DEFAULT_IMAGE
    dt: float = 1.0 / 25
    vmax: float = 8.0
    pitch: PitchModel = field(default_factory=build_pitch)

    @property
    def n_frames(self) -> int:
        return len(self.cameras)

    def position(self, identity: int, frame: int) -> tuple[float, float]:
        p = self.athletes[identity].positions[frame]
        return float(p[0]), float(p[1])


@dataclass
class MotionConfig:
    vmax: float = 8.0  # m/s
    theta: float = 0.5  # OU mean reversion, 1/s
    sigma: float = 3.0  # OU diffusion, m/s/sqrt(s)
    margin: float = 2.0  # metres allowed beyond the touchlines
    wall_buffer: float = 5.0  # metres inside the limit where the spring starts
    wall_stiffness: float = 2.0  # 1/s^2
    max_pan_rate: float = math.radians(10.0)  # rad/s
    max_pan_accel: float = math.radians(20.0)  # rad/s^2
    pan_gain: float = 1.0  # 1/s, rate command per radian of heading error
    max_zoom_rate: float = 0.05  # relative focal change per second


def _step_athlete(p, v, lo, hi, m, dt, noise):
    """One OU step; a spring pushes back inside ``lo``/``hi`` so velocities
    stay smooth, with a hard clip as the last resort."""
    acc = -m.theta * v + m.sigma * noise / math.sqrt(dt)
    inner_lo = lo + m.wall_buffer
    inner_hi = hi - m.wall_buffer
    acc = acc - m.wall_stiffness * (np.maximum(p - inner_hi, 0.0) - np.maximum(inner_lo - p, 0.0))
    v = v + acc * dt
    speed = np.linalg.norm(v)
    if speed > m.vmax:
        v = v * (m.vmax / speed)
    p = p + v * dt
    out = (p < lo) | (p > hi)
    if out.any():
        p = np.clip(p, lo, hi)
        v = np.where(out, 0.0, v)
    return p, v


def _pan_tilt_of(cam: CameraParams) -> tuple[float, float, float]:
    fwd = cam.R[2]
    pan = math.atan2(fwd[0], fwd[1])
    tilt = math.asin(max(-1.0, min(1.0, fwd[2])))
    R0 = pan_tilt_rotation(pan, tilt)
    # residual rotation about the optical axis
    M = cam.R @ R0.T
    roll = math.atan2(M[1, 0], M[0, 0])
    return pan, tilt, roll


def _camera_path(rng, pos, image_size, pitch, m: MotionConfig, dt: float) -> list:
    """Operator model: pan/tilt toward the athletes' centroid with bounded
    angular rate and acceleration, braking early enough that every framed
    view keeps usable markings; zoom drifts slowly."""
    cam0 = sample_main_camera(rng, image_size, pitch)
    pan, tilt, roll = _pan_tilt_of(cam0)
    C = cam0.center
    W, H = image_size
    f_lo = (W / 2.0) / math.tan(math.radians(60.0) / 2)
    f_hi = (W / 2.0) / math.tan(math.radians(15.0) / 2)
    focal = cam0.fx
    w = np.zeros(2)  # pan, tilt rates
    zoom = 0.0  # relative focal rate
    acc = m.max_pan_accel * dt

    def make(pt, f):
        return CameraParams.from_center(f, W / 2.0, H / 2.0, pan_tilt_rotation(pt[0], pt[1], roll), C)

    cams = [cam0]
    for k in range(1, len(pos)):
        d = np.append(pos[k].mean(axis=0), 0.0) - C
        want = np.array([math.atan2(d[0], d[1]), math.atan2(d[2], math.hypot(d[0], d[1]))])
        pt = np.array([pan, tilt])
        target_w = np.clip(m.pan_gain * (want - pt), -m.max_pan_rate, m.max_pan_rate)
        w_new = w + np.clip(target_w - w, -acc, acc)
        zoom_new = float(np.clip(zoom + rng.normal(0.0, m.max_zoom_rate * 0.2 * math.sqrt(dt)),
                                 -m.max_zoom_rate, m.max_zoom_rate))
        f_new = float(np.clip(focal * (1.0 + zoom_new * dt), f_lo, f_hi))
        stop = pt + w_new * dt + w_new * np.abs(w_new) / (2.0 * m.max_pan_accel)
        ok = view_ok(make(pt + w_new * dt, f_new), pitch, image_size) and view_ok(make(stop, f_new), pitch, image_size)
        if not ok:
            # brake: decelerate and freeze the zoom
            w_new = w - np.clip(w, -acc, acc)
            zoom_new = 0.0
            f_new = focal
            if not view_ok(make(pt + w_new * dt, f_new), pitch, image_size):
                w_new = np.zeros(2)
        w, zoom, focal = w_new, zoom_new, f_new
        pan, tilt = pt + w * dt
        cams.append(make((pan, tilt), focal))
    return cams


def simulate_match(rng: np.random.Generator, n_players: int = 22, n_frames: int = 1, dt: float = 1.0 / 25,
                   image_size=DEFAULT_IMAGE, camera: CameraParams | None = None, embedding_dim: int = 128,
                   n_referees: int = 0, motion: MotionConfig | None = None, pitch: PitchModel | None = None,
                   max_centroid_cos: float = 0.3) -> SyntheticScene:
    """Two squads (first half ``left``, second half ``right``, first of each a
    goalkeeper) plus optional referees.

    With ``camera`` given the view is fixed; otherwise a main camera is drawn
    and pans / zooms smoothly toward the athletes' centroid.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    pitch = pitch or build_pitch()
    m = motion or MotionConfig()
    L, Wd = pitch.dims.length, pitch.dims.width
    lo = np.array([-L / 2 - m.margin, -Wd / 2 - m.margin])
    hi = -lo
    n_ids = n_players + n_referees
    centroids = embedding_centroids(rng, n_ids, embedding_dim, max_centroid_cos)

    half = n_players // 2
    roles, teams, jerseys, starts = [], [], [], []
    for sq, (team, sign) in enumerate((("left", -1.0), ("right", 1.0))):
        count = half if sq == 0 else n_players - half
        nums = rng.choice(np.arange(2, 100), size=max(count - 1, 0), replace=False)
        for k in range(count):
            if k == 0:
                roles.append("goalkeeper")
                jerseys.append(1)
                starts.append([sign * (L / 2 - 5.0), rng.uniform(-5, 5)])
            else:
                roles.append("player")
                jerseys.append(int(nums[k - 1]))
                starts.append([sign * rng.uniform(3, L / 2 - 10), rng.uniform(-Wd / 2 + 3, Wd / 2 - 3)])
            teams.append(team)
    for _ in range(n_referees):
        roles.append("referee")
        jerseys.append(None)
        teams.append(None)
        starts.append([rng.uniform(-20, 20), rng.uniform(-20, 20)])

    pos = np.zeros((n_frames, n_ids, 2))
    pos[0] = np.array(starts).reshape(n_ids, 2)
    vel = rng.standard_normal((n_ids, 2)) * 1.0
    for f in range(1, n_frames):
        for i in range(n_ids):
            pos[f, i], vel[i] = _step_athlete(pos[f - 1, i], vel[i], lo, hi, m, dt, rng.standard_normal(2))

    if camera is not None:
        cams = [camera] * n_frames
    else:
        cams = _camera_path(rng, pos, image_size, pitch, m, dt)
    athletes = [
        SyntheticAthlete(i, roles[i], jerseys[i], teams[i], pos[:, i].copy(), rng.uniform(0, 1, n_frames))
        for i in range(n_ids)
    ]
    return SyntheticScene(cams, athletes, centroids, tuple(image_size), dt, m.vmax, pitch)


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------
@dataclass
class SyntheticFrame:
    keypoints: list  # KeypointObservation
    lines: list  # LineObservation
    detections: list  # AthleteDetection
    identities: list  # per detection: athlete identity, -1 for false positives
    gt: FrameAnnotation
    camera: CameraParams


def athlete_box(cam: CameraParams, xy, height: float = BODY_HEIGHT) -> Optional[tuple]:
    """Pinhole box for a standing athlete; the bottom centre is the foot point."""
    foot = project_points(cam, [xy[0], xy[1], 0.0])[0]
    head = project_points(cam, [xy[0], xy[1], height])[0]
    if np.isnan(foot).any() or np.isnan(head).any():
        return None
    h = float(foot[1] - head[1])
    if h <= 0:
        return None
    w = BODY_ASPECT * h
    return (float(foot[0] - w / 2.0), float(foot[1] - h), w, h)


def _unit(v):
    return v / np.linalg.norm(v)


def render_observations(scene: SyntheticScene, noise: NoiseModel | None = None, image_size=None,
                        rng: np.random.Generator | None = None) -> list[SyntheticFrame]:
    noise = noise or NoiseModel()
    rng = rng if rng is not None else np.random.default_rng(0)
    image_size = tuple(image_size or scene.image_size)
    W, H = image_size
    out = []
    for f, cam in enumerate(scene.cameras):
        proj = project_pitch(cam, scene.pitch, image_size)
        gt_kps = {k: KeypointRecord(x, y, 1.0) for k, (x, y) in sorted(proj.keypoints.items())}
        gt_lines = {n: tuple((float(x), float(y)) for x, y in pts) for n, pts in sorted(proj.lines.items())}

        kps = []
        for k, (x, y) in sorted(proj.keypoints.items()):
            if noise.keypoint_sigma > 0:
                x, y = np.array([x, y]) + rng.normal(0.0, noise.keypoint_sigma, 2)
            kps.append(KeypointObservation(k, float(x), float(y), 1.0))
        lines = []
        for n, pts in sorted(proj.lines.items()):
            pts = np.array(pts, dtype=float)
            if noise.keypoint_sigma > 0:
                pts = pts + rng.normal(0.0, noise.keypoint_sigma, pts.shape) / np.array([W, H])
                pts = np.clip(pts, 0.0, 1.0)
            if len(pts) >= 2:
                lines.append(LineObservation(n, pts))

        gt_athletes, dets, ids = [], [], []
        for a in scene.athletes:
            box = athlete_box(cam, a.positions[f])
            if box is None:
                continue
            bottom = np.array([[box[0] + box[2] / 2.0, box[1] + box[3]]])
            if not in_frame(bottom, image_size)[0]:
                continue
            leg = float(a.legibility[f])
            gt_athletes.append(AthleteRecord(box, a.identity + 1, a.jersey, leg, a.role, a.team))
            if noise.detection_dropout > 0 and rng.uniform() < noise.detection_dropout:
                continue
            b = np.array(box)
            if noise.bbox_jitter > 0:
                b = b + rng.normal(0.0, noise.bbox_jitter, 4)
                b[2:] = np.maximum(b[2:], 1.0)
            emb = scene.embedding_centroids[a.identity]
            if noise.embedding_noise_sigma > 0:
                emb = _unit(emb + rng.normal(0.0, noise.embedding_noise_sigma, emb.shape))
            dets.append(AthleteDetection(tuple(float(v) for v in b), a.role, a.jersey, leg, emb, 1.0))
            ids.append(a.identity)

        if noise.false_positive_rate > 0:
            med_h = float(np.median([d.bbox_ltwh[3] for d in dets])) if dets else 0.05 * H
            for _ in range(rng.poisson(noise.false_positive_rate)):
                h = med_h * rng.uniform(0.7, 1.3)
                w = BODY_ASPECT * h
                l = rng.uniform(0, max(W - w, 1.0))
                t = rng.uniform(0, max(H - h, 1.0))
                emb = _unit(rng.standard_normal(scene.embedding_centroids.shape[1]))
                dets.append(AthleteDetection((l, t, w, h), "unknown", None, 0.0, emb, 0.3))
                ids.append(-1)

        gt = FrameAnnotation(tuple(gt_athletes), gt_kps, gt_lines).with_camera(cam)
        out.append(SyntheticFrame(kps, lines, dets, ids, gt, cam))
    return out


def observation_annotation(frame: SyntheticFrame, image_size) -> FrameAnnotation:
    """The frame's noisy observations in the annotation layout (no camera)."""
    athletes = tuple(
        AthleteRecord(d.bbox_ltwh, None, d.jersey_number, d.legibility_score, d.role, None,
                      {"confidence": d.confidence})
        for d in frame.detections
    )
    kps = {k.id: KeypointRecord(k.x, k.y, k.p) for k in frame.keypoints}
    lines = {ln.name: tuple((float(x), float(y)) for x, y in ln.points) for ln in frame.lines}
    return FrameAnnotation(athletes, kps, lines)

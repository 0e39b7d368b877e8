"""Camera calibration from pitch keypoints and lines.

Pipeline per frame: confidence filter, DLT homography on ground-plane
correspondences, closed-form decomposition into focal length and pose, then
Levenberg-Marquardt refinement of point and line reprojection residuals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import CameraParams, nearest_rotation, rodrigues
from .pitch import Arc3, PitchModel, keypoint_positions, sampled_elements
from .projection import DEFAULT_SPACING, project_points

log = logging.getLogger(__name__)

REFERENCE_WIDTH = 960.0
_BIG_RESIDUAL = 1e4


class CalibrationError(ValueError):
    pass


class DegenerateConfigurationError(CalibrationError):
    pass


class NoValidFocalError(CalibrationError):
    pass


class BehindGroundError(CalibrationError):
    pass


@dataclass(frozen=True)
class KeypointObservation:
    id: int
    x: float
    y: float
    p: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.p}")


@dataclass(frozen=True, eq=False)
class LineObservation:
    """Detected marking as an ordered point sequence in normalized image coordinates."""

    name: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("a line observation needs at least two points")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_endpoints(cls, name, a, b) -> "LineObservation":
        return cls(name, np.array([a, b], dtype=float))

    @property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points[0], self.points[-1]

    def pixels(self, image_size) -> np.ndarray:
        return self.points * np.asarray(image_size, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, LineObservation):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class LMConfig:
    initial_damping: float = 1e-3
    damping_factor: float = 10.0
    max_iters: int = 100
    rel_tol: float = 1e-8
    line_spacing: float = DEFAULT_SPACING
    max_line_points: int = 30


@dataclass(frozen=True)
class ValidityConfig:
    min_confidence: float = 0.5
    max_rms_at_reference: float = 5.0
    focal_range: tuple[float, float] = (0.2, 10.0)  # multiples of image width
    height_range: tuple[float, float] = (2.0, 80.0)  # metres
    min_lines_for_fallback: int = 6  # keypoint count under which lines join the DLT


@dataclass
class CalibrationResult:
    params: CameraParams
    rms_reproj_error: float
    per_element_residuals: dict = field(default_factory=dict)
    valid: bool = False
    initial_rms: float = float("nan")
    iterations: int = 0
    cost_history: list = field(default_factory=list)
    converged: bool = False


# ---------------------------------------------------------------------------
# DLT
# ---------------------------------------------------------------------------
def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _hom(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([pts, np.ones(len(pts))])


def _nullvector(A: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    _, s, Vt = np.linalg.svd(A)
    if len(s) < 8 or s[7] <= rank_tol * s[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient")
    return Vt[-1]


def _fix_scale_sign(H: np.ndarray, world: np.ndarray) -> np.ndarray:
    H = H / np.linalg.norm(H)
    w = _hom(world) @ H[2]
    if np.sum(np.sign(w)) < 0:
        H = -H
    return H


def estimate_homography_dlt(world, image) -> np.ndarray:
    """Normalized DLT from ground-plane points (metres) to pixels.

    Returns H with unit Frobenius norm, signed so the inputs map to positive w.
    """
    world = np.asarray(world, dtype=float).reshape(-1, 2)
    image = np.asarray(image, dtype=float).reshape(-1, 2)
    if len(world) != len(image):
        raise ValueError("world and image must have the same length")
    if len(world) < 4:
        raise DegenerateConfigurationError("at least 4 correspondences are required")
    Tw = _normalizer(world)
    Ti = _normalizer(image)
    Xw = _hom(world) @ Tw.T
    xi = _hom(image) @ Ti.T
    n = len(world)
    A = np.zeros((2 * n, 9))
    for k in range(n):
        X = Xw[k]
        u, v, w = xi[k]
        A[2 * k, 3:6] = -w * X
        A[2 * k, 6:9] = v * X
        A[2 * k + 1, 0:3] = w * X
        A[2 * k + 1, 6:9] = -u * X
    Hn = _nullvector(A).reshape(3, 3)
    H = np.linalg.inv(Ti) @ Hn @ Tw
    return _fix_scale_sign(H, world)


def _homogeneous_line(a, b) -> np.ndarray:
    return np.cross([a[0], a[1], 1.0], [b[0], b[1], 1.0])


def estimate_homography_points_lines(world, image, world_lines, image_line_points) -> np.ndarray:
    """DLT on the image-to-ground map using point and line correspondences.

    ``world_lines`` holds ground lines as endpoint pairs; ``image_line_points``
    the pixel points observed on each. Each image point on a line gives one
    linear equation, each point pair two. Returns the ground-to-image H.
    """
    world = np.asarray(world, dtype=float).reshape(-1, 2)
    image = np.asarray(image, dtype=float).reshape(-1, 2)
    all_img = np.vstack([image] + [np.asarray(p, dtype=float).reshape(-1, 2) for p in image_line_points])
    anchors = [world] + [np.asarray(l, dtype=float).reshape(-1, 2) for l in world_lines]
    Ti = _normalizer(all_img)
    Tw = _normalizer(np.vstack(anchors))
    Tw_inv_T = np.linalg.inv(Tw).T
    rows = []
    xi = _hom(image) @ Ti.T
    Xw = _hom(world) @ Tw.T
    for X, x in zip(Xw, xi):
        # X ~ G x, with G rows g1, g2, g3 flattened into 9 unknowns
        r1 = np.zeros(9)
        r1[3:6] = -X[2] * x
        r1[6:9] = X[1] * x
        r2 = np.zeros(9)
        r2[0:3] = X[2] * x
        r2[6:9] = -X[0] * x
        rows += [r1, r2]
    for (a, b), pts in zip(world_lines, image_line_points):
        L = Tw_inv_T @ _homogeneous_line(a, b)
        L /= np.linalg.norm(L)
        for x in _hom(np.asarray(pts, dtype=float).reshape(-1, 2)) @ Ti.T:
            rows.append(np.concatenate([L[0] * x, L[1] * x, L[2] * x]))
    A = np.asarray(rows)
    if len(A) < 8:
        raise DegenerateConfigurationError("not enough constraints")
    Gn = _nullvector(A).reshape(3, 3)
    G = np.linalg.inv(Tw) @ Gn @ Ti
    try:
        H = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfigurationError("singular image-to-ground map") from exc
    ground = _hom(all_img) @ G.T
    ground = ground[:, :2] / ground[:, 2:3]
    return _fix_scale_sign(H, ground)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------
def decompose_homography(H, image_width: float, image_height: float) -> CameraParams:
    """Recover focal length, rotation and translation from a ground homography.

    Assumes zero skew, square pixels and the principal point at the image
    centre. The overall sign of H is free; the pose placing the camera above
    the ground is returned.
    """
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)) or abs(np.linalg.det(H / np.linalg.norm(H))) < 1e-14:
        raise DegenerateConfigurationError("homography is singular")
    cx, cy = image_width / 2.0, image_height / 2.0
    T_inv = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    A = T_inv @ H
    A = A / np.linalg.norm(A)
    (a11, a12, _), (a21, a22, _), (a31, a32, _) = A
    # unknown w = 1 / f^2:  w * c_k + d_k = 0
    c1 = a11 * a12 + a21 * a22
    d1 = a31 * a32
    c2 = a11 * a11 + a21 * a21 - a12 * a12 - a22 * a22
    d2 = a31 * a31 - a32 * a32
    denom = c1 * c1 + c2 * c2
    if denom <= 0.0:
        raise NoValidFocalError("focal constraints are indeterminate")
    w = -(c1 * d1 + c2 * d2) / denom
    if not np.isfinite(w) or w <= 0.0:
        raise NoValidFocalError("constraint system gives non-positive f^2")
    f = 1.0 / np.sqrt(w)
    if f > 1e4 * max(image_width, image_height):
        raise NoValidFocalError("focal length is indeterminate (near fronto-parallel view)")

    b = np.diag([1.0 / f, 1.0 / f, 1.0]) @ A
    lam = 1.0 / np.linalg.norm(b[:, 0])
    for sign in (1.0, -1.0):
        r1 = sign * lam * b[:, 0]
        r2 = sign * lam * b[:, 1]
        t = sign * lam * b[:, 2]
        R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
        cz = -(R.T @ t)[2]
        if cz > 0:
            break
    scale = max(1.0, float(np.linalg.norm(t)))
    if not cz > 1e-9 * scale:
        raise BehindGroundError("no sign choice puts the camera above the ground")
    return CameraParams(f, f, cx, cy, R, t)


def compose_homography(cam: CameraParams) -> np.ndarray:
    return cam.ground_homography


# ---------------------------------------------------------------------------
# point + line refinement
# ---------------------------------------------------------------------------
class _Problem:
    """Residual evaluation for a fixed observation set."""

    def __init__(self, kps, lines, pitch: PitchModel, image_size, cfg: LMConfig):
        self.cx = image_size[0] / 2.0
        self.cy = image_size[1] / 2.0
        positions = keypoint_positions(pitch)
        kps = [k for k in kps if k.id in positions]
        self.kp_ids = [k.id for k in kps]
        self.kp_world = np.array([positions[k.id] for k in kps]).reshape(-1, 3)
        self.kp_obs = np.array([[k.x, k.y] for k in kps], dtype=float).reshape(-1, 2)
        samples = sampled_elements(pitch, cfg.line_spacing)
        self.lines = []
        for obs in lines:
            if obs.name not in samples:
                continue
            pts = obs.pixels(image_size)
            if len(pts) > cfg.max_line_points:
                idx = np.unique(np.linspace(0, len(pts) - 1, cfg.max_line_points).round().astype(int))
                pts = pts[idx]
            geom = pitch.element(obs.name).geometry
            self.lines.append((obs.name, geom if isinstance(geom, Arc3) else None, len(samples[obs.name]), pts))
        self.n_obs = len(self.kp_ids) + sum(len(item[3]) for item in self.lines)
        # all line samples are projected in one pass per evaluation
        if self.lines:
            self.line_world = np.vstack([samples[name] for name, *_ in self.lines])
            self.line_offsets = np.cumsum([0] + [n for _, _, n, _ in self.lines])
        self.spacing = cfg.line_spacing

    def camera(self, x, R0) -> CameraParams:
        R = rodrigues(x[1:4]) @ R0
        return CameraParams(x[0], x[0], self.cx, self.cy, R, x[4:7])

    def residuals(self, cam: CameraParams) -> np.ndarray:
        out = []
        if len(self.kp_ids):
            Xc = self.kp_world @ cam.R.T + cam.t
            w = Xc[:, 2]
            good = w > 1e-9
            safe_w = np.where(good, w, 1.0)
            u = cam.fx * Xc[:, 0] / safe_w + cam.cx
            v = cam.fy * Xc[:, 1] / safe_w + cam.cy
            du = np.where(good, u - self.kp_obs[:, 0], _BIG_RESIDUAL)
            dv = np.where(good, v - self.kp_obs[:, 1], _BIG_RESIDUAL)
            out.append(np.column_stack([du, dv]).ravel())
        out += self.line_distances(cam)
        return np.concatenate(out) if out else np.empty(0)

    def line_distances(self, cam: CameraParams, signed: bool = True) -> list[np.ndarray]:
        if not self.lines:
            return []
        uv_all = project_points(cam, self.line_world)
        out = []
        for k, (_, arc, _, pts) in enumerate(self.lines):
            poly = uv_all[self.line_offsets[k]:self.line_offsets[k + 1]]
            if arc is None:
                d = kernels.polyline_distance(pts, poly, signed)
            else:
                d = arc_distance(cam, arc, pts, poly, signed=signed)
            out.append(np.where(np.isfinite(d), d, _BIG_RESIDUAL))
        return out

    def per_element(self, cam: CameraParams) -> dict:
        res = {}
        if len(self.kp_ids):
            uv = project_points(cam, self.kp_world)
            err = np.linalg.norm(uv - self.kp_obs, axis=1)
            for kid, e in zip(self.kp_ids, err):
                res[kid] = float(e) if np.isfinite(e) else float("inf")
        for (name, *_), d in zip(self.lines, self.line_distances(cam, signed=False)):
            res[name] = float(d.max())
        return res


def arc_distance(cam: CameraParams, arc: Arc3, pts: np.ndarray, poly: np.ndarray, iters: int = 4, signed: bool = False) -> np.ndarray:
    """Pixel distance from ``pts`` to the projected arc itself.

    The sampled polyline ``poly`` only seeds the search: each point starts at
    the foot on its nearest chord and takes a few Gauss-Newton steps on the
    arc parameter, so chord sagitta does not leak into the residual.
    With ``signed``, the sign is the side of the projected tangent.
    """
    if arc.is_full_circle:
        poly = np.vstack([poly, poly[:1]])
    P = cam.P
    M = np.column_stack([arc.radius * P[:, 0], arc.radius * P[:, 1], P @ np.append(np.asarray(arc.center, dtype=float), 1.0)])
    return kernels.arc_distance(pts, poly, M, arc.start, arc.sweep, arc.is_full_circle, iters, signed)


def _rms(cost: float, n: int) -> float:
    return float(np.sqrt(cost / max(n, 1)))


def _is_valid(cam: CameraParams, rms: float, image_size, vcfg: ValidityConfig) -> bool:
    W = image_size[0]
    if cam.problems():
        return False
    if not np.isfinite(rms) or rms > vcfg.max_rms_at_reference * W / REFERENCE_WIDTH:
        return False
    lo, hi = vcfg.focal_range
    if not lo * W <= cam.fx <= hi * W:
        return False
    h_lo, h_hi = vcfg.height_range
    return bool(h_lo <= cam.center[2] <= h_hi)


def refine_pnl(
    init: CameraParams,
    kps,
    lines,
    pitch: PitchModel,
    image_size,
    cfg: LMConfig = LMConfig(),
    validity: ValidityConfig = ValidityConfig(),
) -> CalibrationResult:
    """Levenberg-Marquardt over (f, local rotation, t) with a fixed centred principal point.

    Residuals are keypoint pixel offsets and, for every observed line point,
    the pixel distance to the projected element polyline. All residuals are
    weighted equally.
    """
    prob = _Problem(kps, lines, pitch, image_size, cfg)
    if prob.n_obs < 4:
        raise CalibrationError("at least 4 observations are required")
    R0 = np.asarray(init.R)
    x = np.concatenate([[init.fx], np.zeros(3), init.t])
    r = prob.residuals(prob.camera(x, R0))
    cost = float(r @ r)
    history = [cost]
    initial_rms = _rms(cost, prob.n_obs)
    lam = cfg.initial_damping
    iters = 0
    converged = False
    steps = np.array([1e-6, 1e-7, 1e-7, 1e-7, 1e-6, 1e-6, 1e-6])

    while iters < cfg.max_iters:
        if _rms(cost, prob.n_obs) < 1e-9:
            converged = True
            break
        h = steps * np.maximum(1.0, np.abs(x)) * np.array([1, 0, 0, 0, 1, 1, 1]) + steps * np.array([0, 1, 1, 1, 0, 0, 0])
        J = np.empty((len(r), 7))
        for k in range(7):
            xp = x.copy()
            xm = x.copy()
            xp[k] += h[k]
            xm[k] -= h[k]
            J[:, k] = (prob.residuals(prob.camera(xp, R0)) - prob.residuals(prob.camera(xm, R0))) / (2 * h[k])
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.damping_factor
                continue
            x_new = x + delta
            if x_new[0] <= 0:
                lam *= cfg.damping_factor
                continue
            r_new = prob.residuals(prob.camera(x_new, R0))
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= cfg.damping_factor
        iters += 1
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel = (cost - cost_new) / cost
        assert cost_new <= history[-1]
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / cfg.damping_factor, 1e-12)
        # fold the rotation increment into the base so x[1:4] stays small
        R0 = rodrigues(x[1:4]) @ R0
        x[1:4] = 0.0
        if rel < cfg.rel_tol:
            converged = True
            break

    cam = prob.camera(x, R0)
    cam = CameraParams(cam.fx, cam.fy, cam.cx, cam.cy, nearest_rotation(cam.R), cam.t)
    rms = _rms(cost, prob.n_obs)
    return CalibrationResult(
        params=cam,
        rms_reproj_error=rms,
        per_element_residuals=prob.per_element(cam),
        valid=_is_valid(cam, rms, image_size, validity),
        initial_rms=initial_rms,
        iterations=iters,
        cost_history=history,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# per-frame pipeline
# ---------------------------------------------------------------------------
def initial_camera(kps, lines, pitch: PitchModel, image_size, validity: ValidityConfig = ValidityConfig()):
    """DLT + decomposition on the usable ground correspondences.

    Raises :class:`CalibrationError` subclasses when under-determined.
    """
    positions = keypoint_positions(pitch)
    ground = [k for k in kps if k.id in positions and positions[k.id][2] == 0.0]
    world = np.array([positions[k.id][:2] for k in ground]).reshape(-1, 2)
    image = np.array([[k.x, k.y] for k in ground], dtype=float).reshape(-1, 2)

    if len(ground) >= validity.min_lines_for_fallback:
        try:
            H = estimate_homography_dlt(world, image)
            return decompose_homography(H, image_size[0], image_size[1])
        except DegenerateConfigurationError:
            # e.g. most points on one pitch line; retry with line constraints
            pass
    usable_lines = []
    for obs in lines:
        if obs.name not in pitch:
            continue
        e = pitch.element(obs.name)
        if e.is_straight and e.on_ground:
            usable_lines.append((obs, e))
    if len(ground) + len(usable_lines) < 4:
        raise DegenerateConfigurationError("fewer than 4 usable correspondences")
    if usable_lines:
        wl = [(e.geometry.a[:2], e.geometry.b[:2]) for _, e in usable_lines]
        il = [o.pixels(image_size) for o, _ in usable_lines]
        H = estimate_homography_points_lines(world, image, wl, il)
    else:
        H = estimate_homography_dlt(world, image)
    return decompose_homography(H, image_size[0], image_size[1])


def calibrate_frame(
    kps,
    lines,
    pitch: PitchModel,
    image_size,
    lm: LMConfig = LMConfig(),
    validity: ValidityConfig = ValidityConfig(),
) -> CalibrationResult | None:
    """Full calibration of one frame; ``None`` when no valid camera is found."""
    kps = [k for k in kps if k.p >= validity.min_confidence]
    lines = list(lines)
    try:
        init = initial_camera(kps, lines, pitch, image_size, validity)
    except CalibrationError as exc:
        log.debug("initialization failed: %s", exc)
        return None
    if init.problems():
        return None
    try:
        result = refine_pnl(init, kps, lines, pitch, image_size, lm, validity)
    except CalibrationError:
        return None
    if not result.valid:
        return None
    return result

"""Forward projection of the pitch into images and back-projection to the ground."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraParams
from .pitch import Arc3, PitchModel, Segment3, keypoint_catalogue

DEFAULT_SPACING = 0.25


@dataclass(frozen=True)
class PitchPosition:
    x: float
    y: float

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass
class ProjectedAnnotations:
    keypoints: dict[int, tuple[float, float]] = field(default_factory=dict)
    # name -> (k, 2) array of normalized image coordinates
    lines: dict[str, np.ndarray] = field(default_factory=dict)


def project_points(cam: CameraParams, X) -> np.ndarray:
    """Project (n, 3) world points; rows behind the camera come back as NaN."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    Xc = X @ cam.R.T + cam.t
    w = Xc[:, 2]
    out = np.full((len(X), 2), np.nan)
    ok = w > 0
    xn = Xc[ok, 0] / w[ok]
    yn = Xc[ok, 1] / w[ok]
    out[ok, 0] = cam.fx * xn + cam.skew * yn + cam.cx
    out[ok, 1] = cam.fy * yn + cam.cy
    return out


def project_point(cam: CameraParams, X) -> tuple[float, float] | None:
    uv = project_points(cam, X)[0]
    if np.isnan(uv[0]):
        return None
    return float(uv[0]), float(uv[1])


def in_frame(uv: np.ndarray, image_size) -> np.ndarray:
    W, H = image_size
    u = uv[..., 0]
    v = uv[..., 1]
    with np.errstate(invalid="ignore"):
        return (u >= 0) & (u < W) & (v >= 0) & (v < H)


def _params(g, spacing: float) -> np.ndarray:
    n = max(1, math.ceil(g.length / spacing - 1e-9))
    if isinstance(g, Arc3) and g.is_full_circle:
        return np.arange(n) / n
    return np.linspace(0.0, 1.0, n + 1)


def _segment_crossings(cam, g: Segment3, s_in, s_out, image_size) -> np.ndarray:
    # the image of a segment is straight: solve u(s) or v(s) = border exactly
    W, H = image_size
    a = np.asarray(g.a, dtype=float)
    P = cam.P
    x0 = P @ np.append(a, 1.0)
    dx = P @ np.append(np.asarray(g.b, dtype=float) - a, 0.0)
    out = np.empty((len(s_in), 2))
    for k, (si, so) in enumerate(zip(s_in, s_out)):
        best = so
        for axis, border in ((0, 0.0), (0, W), (1, 0.0), (1, H)):
            den = dx[axis] - border * dx[2]
            if den == 0.0:
                continue
            s = (border * x0[2] - x0[axis]) / den
            if min(si, so) <= s <= max(si, so) and x0[2] + s * dx[2] > 0 and abs(s - si) < abs(best - si):
                best = s
        X = a + best * (np.asarray(g.b, dtype=float) - a)
        uv = project_points(cam, X)[0]
        # snap onto the border the crossing lies on
        out[k] = np.clip(uv, 0.0, [W, H])
    return out


def _arc_crossings(cam, g, s_in, s_out, image_size, iters: int = 60) -> np.ndarray:
    # batched bisection for the last in-frame parameter
    s_in = np.array(s_in, dtype=float)
    s_out = np.array(s_out, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (s_in + s_out)
        ok = in_frame(project_points(cam, g.point_at(mid)), image_size)
        s_in = np.where(ok, mid, s_in)
        s_out = np.where(ok, s_out, mid)
    return project_points(cam, g.point_at(s_in))


def clip_element(cam: CameraParams, g, image_size, spacing: float = DEFAULT_SPACING) -> np.ndarray:
    """In-frame pixel polyline of one element, with exact border crossings.

    Separate visible pieces are concatenated in curve order.
    """
    s = _params(g, spacing)
    pts = g.point_at(s)
    if isinstance(g, Segment3):
        pts[0] = g.a
        pts[-1] = g.b
    uv = project_points(cam, pts)
    inside = in_frame(uv, image_size)
    n = len(s)
    if not inside.any():
        return np.empty((0, 2))
    closed = isinstance(g, Arc3) and g.is_full_circle
    if closed and inside.all():
        return uv
    order = list(range(n))
    if closed:
        k0 = int(np.flatnonzero(~inside)[0])
        order = [(k0 + k) % n for k in range(n + 1)]
    out = []
    cross_slots, cross_in, cross_out = [], [], []

    def crossing(a, b):
        cross_slots.append(len(out))
        cross_in.append(a)
        cross_out.append(b)
        out.append(None)

    prev = order[0]
    if inside[prev]:
        out.append(uv[prev])
    for cur in order[1:]:
        s_prev, s_cur = s[prev], s[cur]
        if closed and s_cur < s_prev:
            s_cur = s_cur + 1.0
        if inside[prev] and not inside[cur]:
            crossing(s_prev, s_cur)
        elif inside[cur] and not inside[prev]:
            crossing(s_cur, s_prev)
            out.append(uv[cur])
        elif inside[cur]:
            out.append(uv[cur])
        prev = cur
    if cross_slots:
        if isinstance(g, Segment3):
            pts_x = _segment_crossings(cam, g, cross_in, cross_out, image_size)
        else:
            pts_x = _arc_crossings(cam, g, cross_in, cross_out, image_size)
        for slot, p in zip(cross_slots, pts_x):
            out[slot] = p
    return np.asarray(out)


def project_pitch(cam: CameraParams, pitch: PitchModel, image_size, spacing: float = DEFAULT_SPACING) -> ProjectedAnnotations:
    """Keypoints (pixels) and clipped element polylines (normalized) visible under ``cam``."""
    W, H = image_size
    result = ProjectedAnnotations()
    cat = keypoint_catalogue(pitch)
    uv = project_points(cam, np.array([kp.position for kp in cat]))
    vis = in_frame(uv, image_size)
    for kp, p, ok in zip(cat, uv, vis):
        if ok:
            result.keypoints[kp.id] = (float(p[0]), float(p[1]))
    scale = np.array([W, H], dtype=float)
    for e in pitch.elements:
        poly = clip_element(cam, e.geometry, image_size, spacing)
        if len(poly):
            result.lines[e.name] = poly / scale
    return result


def element_polyline(cam: CameraParams, world_samples: np.ndarray) -> np.ndarray:
    """Unclipped pixel polyline of pre-sampled world points (NaN behind camera)."""
    return project_points(cam, world_samples)


def image_to_pitch_many(cam: CameraParams, uv) -> np.ndarray:
    """Ground-plane (x, y) for each pixel; NaN where the ray misses the ground ahead."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    Kinv = np.linalg.inv(cam.K)
    rays_cam = np.column_stack([uv, np.ones(len(uv))]) @ Kinv.T
    d = rays_cam @ cam.R  # R^T applied to each row
    C = cam.center
    out = np.full((len(uv), 2), np.nan)
    dz = d[:, 2]
    scale = np.linalg.norm(d, axis=1)
    ok = np.abs(dz) > 1e-12 * scale
    s = np.full(len(uv), np.nan)
    s[ok] = -C[2] / dz[ok]
    ok &= s > 0
    out[ok] = C[:2] + s[ok, None] * d[ok, :2]
    return out


def image_to_pitch(cam: CameraParams, p) -> PitchPosition | None:
    xy = image_to_pitch_many(cam, p)[0]
    if np.isnan(xy[0]):
        return None
    return PitchPosition(float(xy[0]), float(xy[1]))


def bbox_bottom_center(bbox_ltwh) -> tuple[float, float]:
    l, t, w, h = bbox_ltwh
    return l + w / 2.0, t + h


def athlete_pitch_position(cam: CameraParams, bbox_ltwh) -> PitchPosition | None:
    """Pitch position of the bottom-centre of an (l, t, w, h) box."""
    if not (bbox_ltwh[2] > 0 and bbox_ltwh[3] > 0):
        raise ValueError("bbox must have positive width and height")
    return image_to_pitch(cam, bbox_bottom_center(bbox_ltwh))

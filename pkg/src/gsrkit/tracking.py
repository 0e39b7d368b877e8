"""Online multi-athlete tracking: Kalman motion model plus ReID appearance.

Two association stages per frame. Confirmed tracks with an appearance vector
are matched to detections carrying embeddings on a blended appearance/motion
cost; leftovers (tentative tracks, tracks that just missed, detections without
embeddings) are matched on IoU. Both stages use the exact assignment solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .assignment import solve_assignment

ROLES = ("player", "goalkeeper", "referee", "unknown")

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
LOST = "lost"
REMOVED = "removed"

CHI2_95_4DOF = 9.4877


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class AthleteDetection:
    bbox_ltwh: tuple
    role: str = "unknown"
    jersey_number: Optional[int] = None
    legibility_score: float = 0.0
    embedding: Optional[np.ndarray] = None
    confidence: float = 1.0

    def __post_init__(self):
        box = tuple(float(v) for v in self.bbox_ltwh)
        if len(box) != 4:
            raise ValueError("bbox_ltwh needs 4 values")
        if not (box[2] > 0 and box[3] > 0):
            raise ValueError("bbox width and height must be positive")
        object.__setattr__(self, "bbox_ltwh", box)
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.jersey_number is not None:
            j = int(self.jersey_number)
            if not 0 <= j <= 99:
                raise ValueError("jersey number must be in 0..99")
            object.__setattr__(self, "jersey_number", j)
        if not 0.0 <= self.legibility_score <= 1.0:
            raise ValueError("legibility score must be in [0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")
        if self.embedding is not None:
            e = np.array(self.embedding, dtype=float).reshape(-1)
            if abs(np.linalg.norm(e) - 1.0) > 1e-6:
                raise ValueError("embedding must have unit norm")
            e.flags.writeable = False
            object.__setattr__(self, "embedding", e)

    def replace(self, **kw) -> "AthleteDetection":
        return replace(self, **kw)

    def __eq__(self, other):
        if not isinstance(other, AthleteDetection):
            return NotImplemented
        a, b = self.embedding, other.embedding
        same_emb = (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
        return same_emb and (
            (self.bbox_ltwh, self.role, self.jersey_number, self.legibility_score, self.confidence)
            == (other.bbox_ltwh, other.role, other.jersey_number, other.legibility_score, other.confidence)
        )

    __hash__ = None


@dataclass
class TrackerConfig:
    lambda_appearance: float = 0.75
    gating_mahalanobis: float = CHI2_95_4DOF
    iou_gate: float = 0.1
    max_age: int = 30
    n_init: int = 3
    ema_alpha: float = 0.9
    max_cosine_distance: float = 0.4
    # standard deviations relative to box height, per frame
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 80

    def __post_init__(self):
        for name in ("lambda_appearance", "ema_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError("iou_gate must be in [0, 1]")
        if self.n_init < 1 or self.max_age < 0:
            raise ValueError("n_init must be >= 1 and max_age >= 0")


# ---------------------------------------------------------------------------
# constant-velocity Kalman filter on (cx, cy, aspect, h)
# ---------------------------------------------------------------------------
_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_Hm = np.eye(4, 8)


def ltwh_to_xyah(b) -> np.ndarray:
    l, t, w, h = b
    return np.array([l + w / 2.0, t + h / 2.0, w / h, h])


def xyah_to_ltwh(m) -> tuple:
    cx, cy, a, h = m[:4]
    w = a * h
    return (float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h))


def kalman_initiate(z, cfg: TrackerConfig):
    h = z[3]
    wp, wv = cfg.std_weight_position, cfg.std_weight_velocity
    mean = np.concatenate([z, np.zeros(4)])
    std = np.array([2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h, 10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h])
    return mean, np.diag(std ** 2)


def kalman_predict_state(mean, cov, cfg: TrackerConfig):
    h = mean[3]
    wp, wv = cfg.std_weight_position, cfg.std_weight_velocity
    q = np.array([wp * h, wp * h, 1e-2, wp * h, wv * h, wv * h, 1e-5, wv * h]) ** 2
    return _F @ mean, _F @ cov @ _F.T + np.diag(q)


def _innovation(mean, cov, cfg: TrackerConfig):
    h = mean[3]
    wp = cfg.std_weight_position
    r = np.array([wp * h, wp * h, 1e-1, wp * h]) ** 2
    return _Hm @ mean, _Hm @ cov @ _Hm.T + np.diag(r)


def kalman_update_state(mean, cov, z, cfg: TrackerConfig):
    zm, S = _innovation(mean, cov, cfg)
    gain = np.linalg.solve(S, (cov @ _Hm.T).T).T
    mean = mean + gain @ (np.asarray(z, dtype=float) - zm)
    cov = cov - gain @ S @ gain.T
    return mean, 0.5 * (cov + cov.T)


def mahalanobis_sq(mean, cov, zs, cfg: TrackerConfig) -> np.ndarray:
    """Squared Mahalanobis distance of measurements (n, 4) to the predicted box."""
    zm, S = _innovation(mean, cov, cfg)
    L = np.linalg.cholesky(S)
    d = np.linalg.solve(L, (np.asarray(zs, dtype=float).reshape(-1, 4) - zm).T)
    return np.sum(d * d, axis=0)


@dataclass(eq=False)
class Track:
    track_id: int
    mean: np.ndarray
    cov: np.ndarray
    appearance: Optional[np.ndarray] = None
    state: str = TENTATIVE
    hits: int = 1
    time_since_update: int = 0
    history: dict = field(default_factory=dict)  # frame -> detection index

    @property
    def bbox(self) -> tuple:
        return xyah_to_ltwh(self.mean)


def kalman_predict(track: Track, cfg: TrackerConfig | None = None) -> tuple:
    """Advance ``track`` one frame and return its predicted ltwh box."""
    if track.state == REMOVED:
        raise ValueError("cannot predict a removed track")
    cfg = cfg or TrackerConfig()
    track.mean, track.cov = kalman_predict_state(track.mean, track.cov, cfg)
    return track.bbox


def _blend_appearance(old, new, alpha):
    if new is None:
        return old
    if old is None:
        return np.array(new, dtype=float)
    return _unit(alpha * old + (1.0 - alpha) * new)


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------
def appearance_motion_cost(tracks, detections, cfg: TrackerConfig) -> np.ndarray:
    """Blended cost; entries failing the cosine or Mahalanobis gate are inf."""
    cost = np.full((len(tracks), len(detections)), np.inf)
    if not tracks or not detections:
        return cost
    emb = np.stack([d.embedding for d in detections])
    zs = np.stack([ltwh_to_xyah(d.bbox_ltwh) for d in detections])
    lam = cfg.lambda_appearance
    for i, t in enumerate(tracks):
        cos_d = 1.0 - emb @ t.appearance
        maha = mahalanobis_sq(t.mean, t.cov, zs, cfg)
        c = lam * cos_d + (1.0 - lam) * (maha / cfg.gating_mahalanobis)
        bad = (maha > cfg.gating_mahalanobis) | (cos_d > cfg.max_cosine_distance)
        cost[i] = np.where(bad, np.inf, c)
    return cost


def iou_cost(tracks, detections, cfg: TrackerConfig) -> np.ndarray:
    if not tracks or not detections:
        return np.full((len(tracks), len(detections)), np.inf)
    iou = kernels.iou_matrix(np.array([t.bbox for t in tracks]), np.array([d.bbox_ltwh for d in detections]))
    return np.where(iou >= cfg.iou_gate, 1.0 - iou, np.inf)


def associate(tracks, detections, cfg: TrackerConfig | None = None):
    """Match predicted ``tracks`` to ``detections``.

    Returns ``(matches, unmatched_tracks, unmatched_detections)`` with matches
    as (track index, detection index) pairs into the given lists.
    """
    cfg = cfg or TrackerConfig()
    t_all = range(len(tracks))
    stage1_t = [i for i in t_all if tracks[i].state in (CONFIRMED, LOST) and tracks[i].appearance is not None]
    stage1_d = [j for j, d in enumerate(detections) if d.embedding is not None]
    matches = []
    if stage1_t and stage1_d:
        cost = appearance_motion_cost([tracks[i] for i in stage1_t], [detections[j] for j in stage1_d], cfg)
        matches = [(stage1_t[a], stage1_d[b]) for a, b in solve_assignment(cost)]
    used_t = {i for i, _ in matches}
    used_d = {j for _, j in matches}

    stage2_t = [
        i for i in t_all
        if i not in used_t and (tracks[i].state == TENTATIVE or tracks[i].time_since_update <= 1)
    ]
    stage2_d = [j for j in range(len(detections)) if j not in used_d]
    if stage2_t and stage2_d:
        cost = iou_cost([tracks[i] for i in stage2_t], [detections[j] for j in stage2_d], cfg)
        matches += [(stage2_t[a], stage2_d[b]) for a, b in solve_assignment(cost)]
    matches.sort()
    used_t = {i for i, _ in matches}
    used_d = {j for _, j in matches}
    return (
        matches,
        [i for i in t_all if i not in used_t],
        [j for j in range(len(detections)) if j not in used_d],
    )


# ---------------------------------------------------------------------------
# tracker state
# ---------------------------------------------------------------------------
@dataclass
class TrackerState:
    cfg: TrackerConfig = field(default_factory=TrackerConfig)
    tracks: list = field(default_factory=list)  # live tracks only
    next_id: int = 1
    frame: int = 0
    finished: list = field(default_factory=list)  # removed tracks, in removal order


def tracker_step(state: TrackerState, detections, cfg: TrackerConfig | None = None) -> list[tuple[int, int]]:
    """Process one frame; returns (detection index, track id) for every detection."""
    cfg = cfg or state.cfg
    frame = state.frame
    for t in state.tracks:
        kalman_predict(t, cfg)
    matches, unmatched_t, unmatched_d = associate(state.tracks, detections, cfg)

    out = []
    for ti, di in matches:
        t = state.tracks[ti]
        d = detections[di]
        t.mean, t.cov = kalman_update_state(t.mean, t.cov, ltwh_to_xyah(d.bbox_ltwh), cfg)
        t.appearance = _blend_appearance(t.appearance, d.embedding, cfg.ema_alpha)
        t.hits += 1
        t.time_since_update = 0
        if t.state == TENTATIVE and t.hits >= cfg.n_init:
            t.state = CONFIRMED
        elif t.state == LOST:
            t.state = CONFIRMED
        t.history[frame] = di
        out.append((di, t.track_id))

    for ti in unmatched_t:
        t = state.tracks[ti]
        t.time_since_update += 1
        if t.state == TENTATIVE:
            t.state = REMOVED
        elif t.time_since_update > cfg.max_age:
            t.state = REMOVED
        else:
            t.state = LOST

    for di in unmatched_d:
        d = detections[di]
        mean, cov = kalman_initiate(ltwh_to_xyah(d.bbox_ltwh), cfg)
        t = Track(state.next_id, mean, cov, appearance=None if d.embedding is None else np.array(d.embedding))
        if cfg.n_init <= 1:
            t.state = CONFIRMED
        t.history[frame] = di
        state.next_id += 1
        state.tracks.append(t)
        out.append((di, t.track_id))

    state.finished.extend(t for t in state.tracks if t.state == REMOVED)
    state.tracks = [t for t in state.tracks if t.state != REMOVED]
    state.frame += 1
    out.sort()
    return out


# ---------------------------------------------------------------------------
# tracklets
# ---------------------------------------------------------------------------
class TrackletEntry(NamedTuple):
    frame: int
    detection: AthleteDetection
    index: int = -1  # position of the detection within its frame


@dataclass(eq=False)
class Tracklet:
    track_id: int
    entries: list = field(default_factory=list)
    voted_role: str = "unknown"
    voted_jersey: Optional[int] = None
    mean_embedding: Optional[np.ndarray] = None
    team: Optional[str] = None

    def __post_init__(self):
        self.entries = sorted((TrackletEntry(*e) for e in self.entries), key=lambda e: e.frame)
        frames = [e.frame for e in self.entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("tracklet frame indices must be strictly increasing")
        if self.mean_embedding is None:
            self.mean_embedding = mean_embedding(e.detection for e in self.entries)

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    @property
    def start(self) -> int:
        return self.entries[0].frame

    @property
    def end(self) -> int:
        return self.entries[-1].frame

    def __len__(self):
        return len(self.entries)


def mean_embedding(detections) -> Optional[np.ndarray]:
    embs = [d.embedding for d in detections if d.embedding is not None]
    if not embs:
        return None
    m = np.mean(embs, axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else None


def run_sequence(frames, cfg: TrackerConfig | None = None, keep_unconfirmed: bool = False) -> list[Tracklet]:
    """Track a whole sequence; ``frames`` is a list of per-frame detection lists.

    Tracks that never reached the confirmed state are dropped unless
    ``keep_unconfirmed`` is set. Output is sorted by track id.
    """
    cfg = cfg or TrackerConfig()
    state = TrackerState(cfg=cfg)
    for dets in frames:
        tracker_step(state, dets, cfg)
    out = []
    for t in state.finished + state.tracks:
        if t.hits < cfg.n_init and not keep_unconfirmed:
            continue
        entries = [TrackletEntry(f, frames[f][i], i) for f, i in sorted(t.history.items())]
        out.append(Tracklet(t.track_id, entries))
    out.sort(key=lambda tl: tl.track_id)
    return out

"""Tracklet refinement: legibility gating, attribute voting, merging, teams."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .camera import CameraParams
from .projection import athlete_pitch_position
from .tracking import ROLES, AthleteDetection, Tracklet, TrackletEntry, mean_embedding

__all__ = [
    "InsufficientDataError", "MergeConfig", "TeamConfig", "Tracklet",
    "filter_legibility", "vote_attributes", "revote", "merge_tracklets",
    "kmeans", "tracklet_pitch_position", "assign_teams",
]


class InsufficientDataError(ValueError):
    pass


def filter_legibility(dets, threshold: float = 0.5) -> list[AthleteDetection]:
    """Null the jersey of every detection whose legibility is below ``threshold``."""
    return [
        d if d.jersey_number is None or d.legibility_score >= threshold else d.replace(jersey_number=None)
        for d in dets
    ]


def _vote(labels_conf, order_key):
    tally = defaultdict(lambda: [0, 0.0])
    for label, conf in labels_conf:
        tally[label][0] += 1
        tally[label][1] += conf
    if not tally:
        return None
    # most votes, then larger summed confidence, then natural order
    return min(tally, key=lambda k: (-tally[k][0], -tally[k][1], order_key(k)))


def vote_attributes(tracklet) -> tuple[str, Optional[int]]:
    """Majority role and jersey of a tracklet (or of an iterable of detections).

    ``unknown`` roles only win when no detection has a known role.
    """
    dets = [e.detection for e in tracklet.entries] if isinstance(tracklet, Tracklet) else list(tracklet)
    if not dets:
        raise ValueError("cannot vote on an empty tracklet")
    known = [(d.role, d.confidence) for d in dets if d.role != "unknown"]
    role = _vote(known, ROLES.index) if known else "unknown"
    jersey = _vote([(d.jersey_number, d.confidence) for d in dets if d.jersey_number is not None], int)
    return role, jersey


def revote(tracklet: Tracklet) -> Tracklet:
    role, jersey = vote_attributes(tracklet)
    return replace(tracklet, voted_role=role, voted_jersey=jersey,
                   mean_embedding=mean_embedding(e.detection for e in tracklet.entries))


@dataclass
class MergeConfig:
    cosine_min: float = 0.7
    max_gap: int = 150
    require_jersey_consistency: bool = True


def _mergeable(a: Tracklet, b: Tracklet, cfg: MergeConfig) -> bool:
    if a.mean_embedding is None or b.mean_embedding is None:
        return False
    if not (a.end < b.start or b.end < a.start):
        return False
    gap = b.start - a.end if a.end < b.start else a.start - b.end
    if gap > cfg.max_gap:
        return False
    if cfg.require_jersey_consistency and None not in (a.voted_jersey, b.voted_jersey):
        if a.voted_jersey != b.voted_jersey:
            return False
    return float(a.mean_embedding @ b.mean_embedding) >= cfg.cosine_min


def merge_tracklets(tracklets, cfg: MergeConfig | None = None) -> list[Tracklet]:
    """Greedy agglomeration of temporally disjoint fragments.

    At each step the mergeable pair with the highest embedding cosine is
    joined (ties go to the smallest index pair); the merged tracklet keeps the
    smaller id and is re-voted before the next step.
    """
    cfg = cfg or MergeConfig()
    groups = [revote(t) for t in tracklets]
    alive = [True] * len(groups)
    while True:
        best = None
        for i in range(len(groups)):
            if not alive[i]:
                continue
            for j in range(i + 1, len(groups)):
                if alive[j] and _mergeable(groups[i], groups[j], cfg):
                    c = float(groups[i].mean_embedding @ groups[j].mean_embedding)
                    if best is None or c > best[0]:
                        best = (c, i, j)
        if best is None:
            break
        _, i, j = best
        a, b = groups[i], groups[j]
        merged = Tracklet(min(a.track_id, b.track_id), list(a.entries) + list(b.entries), team=a.team or b.team)
        groups[i] = revote(merged)
        alive[j] = False
    out = [g for g, ok in zip(groups, alive) if ok]
    out.sort(key=lambda t: t.track_id)
    return out


# ---------------------------------------------------------------------------
# team affiliation
# ---------------------------------------------------------------------------
@dataclass
class TeamConfig:
    # standardized pitch coordinates only break near-ties between embeddings;
    # at weight 1 they outvote kit appearance when the squads are intermixed
    pitch_weight: float = 0.1
    seed: int = 0
    restarts: int = 50
    max_iter: int = 300


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def kmeans(X, k: int = 2, seed: int = 0, restarts: int = 50, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        C = _kmeanspp(X, k, rng)
        labels = None
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for c in range(k):
                if np.any(labels == c):
                    C[c] = X[labels == c].mean(axis=0)
        inertia = float(((X - C[labels]) ** 2).sum())
        if best is None or inertia < best[0] - 1e-12:
            best = (inertia, labels.copy(), C.copy())
    return best[1], best[2]


def _camera_for(calibrations, frame):
    if isinstance(calibrations, dict):
        cam = calibrations.get(frame)
    else:
        cam = calibrations[frame] if 0 <= frame < len(calibrations) else None
    if cam is not None and not isinstance(cam, CameraParams):
        cam = cam.params if getattr(cam, "valid", True) else None
    return cam


def tracklet_positions(tracklet: Tracklet, calibrations) -> np.ndarray:
    pts = []
    for e in tracklet.entries:
        cam = _camera_for(calibrations, e.frame)
        if cam is None:
            continue
        p = athlete_pitch_position(cam, e.detection.bbox_ltwh)
        if p is not None:
            pts.append((p.x, p.y))
    return np.array(pts, dtype=float).reshape(-1, 2)


def tracklet_pitch_position(tracklet: Tracklet, calibrations) -> Optional[np.ndarray]:
    pts = tracklet_positions(tracklet, calibrations)
    return pts.mean(axis=0) if len(pts) else None


def assign_teams(tracklets, calibrations, cfg: TeamConfig | None = None) -> list[Tracklet]:
    """Label player and goalkeeper tracklets ``left`` / ``right``.

    ``calibrations`` maps frame index to a camera (``None`` when the frame has
    no valid calibration); a list indexed by frame works too.
    """
    cfg = cfg or TeamConfig()
    tracklets = [t if t.voted_role != "unknown" or not t.entries else revote(t) for t in tracklets]
    players, feats_e, feats_p = [], [], []
    for i, t in enumerate(tracklets):
        if t.voted_role != "player" or t.mean_embedding is None:
            continue
        pos = tracklet_pitch_position(t, calibrations)
        if pos is None:
            continue
        players.append(i)
        feats_e.append(t.mean_embedding)
        feats_p.append(pos)
    if len(players) < 2:
        raise InsufficientDataError("need at least two calibrated player tracklets with embeddings")
    P = np.array(feats_p)
    sd = P.std(axis=0)
    sd[sd == 0] = 1.0
    X = np.hstack([np.array(feats_e), cfg.pitch_weight * (P - P.mean(axis=0)) / sd])
    labels, _ = kmeans(X, 2, cfg.seed, cfg.restarts, cfg.max_iter)
    mean_x = [P[labels == c, 0].mean() if np.any(labels == c) else np.inf for c in range(2)]
    left = int(np.argmin(mean_x))
    team_of = {i: ("left" if labels[k] == left else "right") for k, i in enumerate(players)}

    out = []
    for i, t in enumerate(tracklets):
        team = team_of.get(i)
        if t.voted_role == "goalkeeper":
            pts = tracklet_positions(t, calibrations)
            if len(pts):
                team = "left" if np.median(pts[:, 0]) < 0 else "right"
        elif t.voted_role != "player":
            team = None
        out.append(replace(t, team=team))
    return out


def relabel_entries(tracklet: Tracklet, **det_changes) -> Tracklet:
    """Copy of ``tracklet`` with every detection updated by ``det_changes``."""
    entries = [TrackletEntry(e.frame, e.detection.replace(**det_changes), e.index) for e in tracklet.entries]
    return replace(tracklet, entries=entries)

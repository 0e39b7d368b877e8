"""Evaluation: calibration Jaccard / completeness / final score and MOT metrics.

Tracking inputs are per-frame lists of ``(track_id, bbox_ltwh)`` pairs, one
list per frame, aligned between ground truth and prediction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .assignment import solve_assignment
from .camera import CameraParams
from .pitch import PitchModel, sampled_elements
from .projection import DEFAULT_SPACING, in_frame, project_points

DEFAULT_GAMMAS = (5.0, 10.0, 20.0)
HOTA_ALPHAS = tuple(np.arange(1, 20) * 0.05)
_EPS = np.finfo(float).eps


class EmptyDatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class JaccardCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "JaccardCounts") -> "JaccardCounts":
        return JaccardCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def jaccard(self) -> float:
        denom = self.tp + self.fn + self.fp
        return self.tp / denom if denom else float("nan")


def _camera_of(pred):
    if pred is None:
        return None
    if isinstance(pred, CameraParams):
        return pred
    if not getattr(pred, "valid", True):
        return None
    return pred.params


def element_errors(pred_cam, gt: CameraParams, pitch: PitchModel, image_size, spacing=DEFAULT_SPACING):
    """Per element: visibility under gt, visibility under pred, max pixel error.

    The max error is taken over the element's world samples that are in frame
    under ``gt``; points behind the predicted camera count as infinite error.
    """
    out = {}
    for name, world in sampled_elements(pitch, spacing).items():
        uv_gt = project_points(gt, world)
        vis_gt = in_frame(uv_gt, image_size)
        vis_pred = False
        err = float("inf")
        if pred_cam is not None:
            uv_pred = project_points(pred_cam, world)
            vis_pred = bool(in_frame(uv_pred, image_size).any())
            if vis_gt.any():
                d = np.linalg.norm(uv_pred[vis_gt] - uv_gt[vis_gt], axis=1)
                err = float(np.max(np.where(np.isfinite(d), d, np.inf)))
        out[name] = (bool(vis_gt.any()), vis_pred, err)
    return out


def jaccard_from_errors(errors: dict, gamma: float) -> JaccardCounts:
    tp = fp = fn = 0
    for vis_gt, vis_pred, err in errors.values():
        if vis_gt:
            if err < gamma:
                tp += 1
            else:
                fn += 1
        elif vis_pred:
            fp += 1
    return JaccardCounts(tp, fp, fn)


def jaccard_calibration(pred, gt: CameraParams, pitch: PitchModel, image_size, gamma: float,
                        spacing: float = DEFAULT_SPACING) -> JaccardCounts:
    """Per-frame TP / FP / FN over pitch elements at pixel threshold ``gamma``.

    ``pred`` may be a :class:`CameraParams`, a calibration result, or ``None``.
    """
    errors = element_errors(_camera_of(pred), gt, pitch, image_size, spacing)
    return jaccard_from_errors(errors, gamma)


def jaccard_from_polylines(pred, gt_lines: dict, pitch: PitchModel, image_size, gamma: float,
                           spacing: float = DEFAULT_SPACING) -> JaccardCounts:
    """Jaccard counts against annotated 2D polylines (pixel coordinates).

    An annotated element is a TP when every annotated point lies within
    ``gamma`` of the element's projection under ``pred``.
    """
    cam = _camera_of(pred)
    samples = sampled_elements(pitch, spacing)
    tp = fp = fn = 0
    for name, world in samples.items():
        pts = gt_lines.get(name)
        uv = project_points(cam, world) if cam is not None else None
        if pts is not None and len(pts):
            if uv is None:
                fn += 1
                continue
            d = kernels.polyline_distance(np.asarray(pts, dtype=float), uv)
            if np.all(d < gamma):
                tp += 1
            else:
                fn += 1
        elif uv is not None and in_frame(uv, image_size).any():
            fp += 1
    return JaccardCounts(tp, fp, fn)


def completion_rate(results) -> float:
    results = list(results)
    if not results:
        raise EmptyDatasetError("completion rate of an empty dataset")
    ok = sum(1 for r in results if _camera_of(r) is not None)
    return ok / len(results)


def final_score(jac5: float, cr: float) -> float:
    """FS = CR x JaC_5, both given as fractions; returned in percent."""
    return 100.0 * cr * jac5


@dataclass
class CalibrationEvalReport:
    jac: dict = field(default_factory=dict)  # gamma -> fraction
    cr: float = 0.0
    fs: float = 0.0  # percent
    counts: dict = field(default_factory=dict)
    n_frames: int = 0

    def to_dict(self) -> dict:
        return {
            "jac": {f"{g:g}": v for g, v in self.jac.items()},
            "cr": self.cr,
            "fs": self.fs,
            "counts": {f"{g:g}": asdict(c) for g, c in self.counts.items()},
            "n_frames": self.n_frames,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        gammas = sorted(self.jac)
        head = [f"JaC{g:g}" for g in gammas] + ["CR", "FS"]
        vals = [f"{100 * self.jac[g]:.1f}" for g in gammas] + [f"{100 * self.cr:.1f}", f"{self.fs:.1f}"]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(head, widths))
        line2 = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"{line1}\n{line2}"


def evaluate_calibration(preds, gts, pitch: PitchModel, image_size, gammas=DEFAULT_GAMMAS,
                         spacing: float = DEFAULT_SPACING) -> CalibrationEvalReport:
    """Dataset-level JaC per gamma, CR and FS over aligned frame lists."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth lists differ in length")
    if not gts:
        raise EmptyDatasetError("no frames to evaluate")
    totals = {float(g): JaccardCounts() for g in gammas}
    for pred, gt in zip(preds, gts):
        errors = element_errors(_camera_of(pred), gt, pitch, image_size, spacing)
        for g in totals:
            totals[g] = totals[g] + jaccard_from_errors(errors, g)
    return report_from_counts(totals, completion_rate(preds), len(gts))


def report_from_counts(totals: dict, cr: float, n_frames: int = 0) -> CalibrationEvalReport:
    jac = {g: c.jaccard for g, c in totals.items()}
    g5 = min(jac, key=lambda g: abs(g - 5.0))
    return CalibrationEvalReport(jac=jac, cr=cr, fs=final_score(jac[g5], cr), counts=dict(totals), n_frames=n_frames)


# ---------------------------------------------------------------------------
# tracking
# ---------------------------------------------------------------------------
def _split(frame):
    if len(frame) == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 4))
    ids = np.array([int(i) for i, _ in frame], dtype=np.int64)
    boxes = np.array([b for _, b in frame], dtype=float).reshape(-1, 4)
    return ids, boxes


def _index_ids(frames):
    ids = sorted({int(i) for f in frames for i, _ in f})
    return {i: k for k, i in enumerate(ids)}


@dataclass
class TrackingEvalReport:
    hota: float = 0.0
    detA: float = 0.0
    assA: float = 0.0
    mota: float = 0.0
    idf1: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        head = ["HOTA", "DetA", "AssA", "MOTA", "IDF1"]
        vals = [f"{100 * v:.1f}" for v in (self.hota, self.detA, self.assA, self.mota, self.idf1)]
        return "  ".join(h.rjust(6) for h in head) + "\n" + "  ".join(v.rjust(6) for v in vals)


def hota(gt_frames, pred_frames, alphas=HOTA_ALPHAS) -> tuple[float, float, float]:
    """HOTA, DetA, AssA averaged over the IoU thresholds ``alphas``.

    For each alpha and frame, pairs with IoU >= alpha are matched by
    Hungarian maximization of IoU weighted by the sequence-level alignment
    score of the two ids.
    """
    if len(gt_frames) != len(pred_frames):
        raise ValueError("gt and pred must have the same number of frames")
    gmap = _index_ids(gt_frames)
    pmap = _index_ids(pred_frames)
    ng, npr = len(gmap), len(pmap)
    alphas = np.asarray(alphas, dtype=float)
    n_gt_dets = sum(len(f) for f in gt_frames)
    n_pred_dets = sum(len(f) for f in pred_frames)
    if n_gt_dets == 0 or n_pred_dets == 0:
        if n_gt_dets == 0 and n_pred_dets == 0:
            return 1.0, 1.0, 1.0
        return 0.0, 0.0, 0.0

    # pass 1: global alignment score between every gt / pred id pair
    potential = np.zeros((ng, npr))
    gt_count = np.zeros(ng)
    pred_count = np.zeros(npr)
    sims = []
    for gf, pf in zip(gt_frames, pred_frames):
        gids, gboxes = _split(gf)
        pids, pboxes = _split(pf)
        gi = np.array([gmap[i] for i in gids], dtype=np.int64)
        pi = np.array([pmap[i] for i in pids], dtype=np.int64)
        sim = kernels.iou_matrix(gboxes, pboxes)
        sims.append((gi, pi, sim))
        gt_count[gi] += 1
        pred_count[pi] += 1
        if len(gi) and len(pi):
            denom = sim.sum(axis=0)[None, :] + sim.sum(axis=1)[:, None] - sim
            with np.errstate(invalid="ignore", divide="ignore"):
                norm = np.where(denom > _EPS, sim / denom, 0.0)
            potential[np.ix_(gi, pi)] += norm
    global_score = potential / (gt_count[:, None] + pred_count[None, :] - potential)

    # pass 2: per frame and alpha, gated matching maximizing alignment x IoU
    tp = np.zeros(len(alphas))
    matches = np.zeros((len(alphas), ng, npr))
    for gi, pi, sim in sims:
        if not len(gi) or not len(pi):
            continue
        score = global_score[np.ix_(gi, pi)] * sim
        for a, alpha in enumerate(alphas):
            # gated pairs score zero, so the optimum maximizes total score
            # rather than the number of pairs; they are dropped afterwards
            gate = sim >= alpha - _EPS
            pairs = [p for p in solve_assignment(np.where(gate, -score, 0.0)) if gate[p]]
            if not pairs:
                continue
            r = np.array([p[0] for p in pairs])
            c = np.array([p[1] for p in pairs])
            tp[a] += len(pairs)
            np.add.at(matches[a], (gi[r], pi[c]), 1)

    fn = n_gt_dets - tp
    fp = n_pred_dets - tp
    det_a = tp / np.maximum(1.0, tp + fn + fp)
    ass_a = np.zeros(len(alphas))
    for a in range(len(alphas)):
        m = matches[a]
        ass = m / np.maximum(1.0, gt_count[:, None] + pred_count[None, :] - m)
        ass_a[a] = (m * ass).sum() / max(1.0, tp[a])
    hota_a = np.sqrt(det_a * ass_a)
    return float(hota_a.mean()), float(det_a.mean()), float(ass_a.mean())


def clear_mot(gt_frames, pred_frames, iou_threshold: float = 0.5) -> dict:
    """CLEAR counts and MOTA. Previous correspondences are kept while IoU allows."""
    if len(gt_frames) != len(pred_frames):
        raise ValueError("gt and pred must have the same number of frames")
    last_match: dict[int, int] = {}  # gt id -> last matched pred id (ever)
    prev_frame: dict[int, int] = {}
    n_gt = tp = fp = fn = idsw = 0
    for gf, pf in zip(gt_frames, pred_frames):
        gids, gboxes = _split(gf)
        pids, pboxes = _split(pf)
        n_gt += len(gids)
        if not len(gids):
            fp += len(pids)
            prev_frame = {}
            continue
        if not len(pids):
            fn += len(gids)
            prev_frame = {}
            continue
        sim = kernels.iou_matrix(gboxes, pboxes)
        score = sim.copy()
        # bonus larger than any IoU sum keeps last frame's pairs when possible
        bonus = float(min(len(gids), len(pids)) + 1)
        for a, g in enumerate(gids):
            if g in prev_frame:
                hits = np.flatnonzero(pids == prev_frame[g])
                score[a, hits] += bonus
        cost = np.where(sim >= iou_threshold - _EPS, -score, np.inf)
        pairs = solve_assignment(cost)
        current = {}
        for a, b in pairs:
            g, p = int(gids[a]), int(pids[b])
            if g in last_match and last_match[g] != p:
                idsw += 1
            last_match[g] = p
            current[g] = p
        tp += len(pairs)
        fn += len(gids) - len(pairs)
        fp += len(pids) - len(pairs)
        prev_frame = current
    mota = 1.0 - (fn + fp + idsw) / n_gt if n_gt else float("nan")
    return {"mota": mota, "tp": tp, "fp": fp, "fn": fn, "idsw": idsw, "n_gt": n_gt}


def mota(gt_frames, pred_frames, iou_threshold: float = 0.5) -> float:
    return clear_mot(gt_frames, pred_frames, iou_threshold)["mota"]


def identity_counts(gt_frames, pred_frames, iou_threshold: float = 0.5) -> dict:
    """IDTP / IDFP / IDFN under the best one-to-one gt-to-pred identity mapping."""
    gmap = _index_ids(gt_frames)
    pmap = _index_ids(pred_frames)
    overlap = np.zeros((len(gmap), len(pmap)))
    n_gt = n_pred = 0
    for gf, pf in zip(gt_frames, pred_frames):
        gids, gboxes = _split(gf)
        pids, pboxes = _split(pf)
        n_gt += len(gids)
        n_pred += len(pids)
        if len(gids) and len(pids):
            sim = kernels.iou_matrix(gboxes, pboxes)
            a, b = np.nonzero(sim >= iou_threshold - _EPS)
            np.add.at(overlap, (np.array([gmap[i] for i in gids[a]], dtype=np.int64),
                                np.array([pmap[i] for i in pids[b]], dtype=np.int64)), 1)
    idtp = 0.0
    if overlap.size:
        pairs = solve_assignment(-overlap)
        idtp = float(sum(overlap[i, j] for i, j in pairs))
    return {"idtp": idtp, "idfp": n_pred - idtp, "idfn": n_gt - idtp}


def idf1(gt_frames, pred_frames, iou_threshold: float = 0.5) -> float:
    c = identity_counts(gt_frames, pred_frames, iou_threshold)
    denom = 2 * c["idtp"] + c["idfp"] + c["idfn"]
    return 2 * c["idtp"] / denom if denom else 1.0


def evaluate_tracking(gt_frames, pred_frames) -> TrackingEvalReport:
    h, d, a = hota(gt_frames, pred_frames)
    return TrackingEvalReport(hota=h, detA=d, assA=a, mota=mota(gt_frames, pred_frames),
                              idf1=idf1(gt_frames, pred_frames))

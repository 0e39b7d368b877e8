"""Batch command line: synth, calibrate, annotate, track, postprocess, eval.

Every command works on directories of per-clip JSON files and writes files
with the same names to the output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .calibration import KeypointObservation, LineObservation, LMConfig, ValidityConfig, calibrate_frame
from .formats import Clip, FrameAnnotation, KeypointRecord, SchemaError
from .metrics import (
    DEFAULT_GAMMAS,
    EmptyDatasetError,
    JaccardCounts,
    element_errors,
    evaluate_tracking,
    jaccard_from_errors,
    report_from_counts,
)
from .pitch import PitchDimensions, build_pitch
from .postprocess import InsufficientDataError, MergeConfig, TeamConfig, assign_teams, filter_legibility, merge_tracklets
from .projection import project_pitch
from .synth import NoiseModel, observation_annotation, render_observations, simulate_match
from .tracking import AthleteDetection, TrackerConfig, run_sequence

log = logging.getLogger("gsrkit")


def _pitch(args):
    return build_pitch(PitchDimensions(length=args.pitch_length, width=args.pitch_width))


def _clips(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"input directory {d} does not exist")
    return sorted(p for p in d.glob("*.json"))


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_summary(args, summary: dict):
    if getattr(args, "summary", None):
        Path(args.summary).write_text(formats.dumps(summary), encoding="utf-8")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------
def _synth_clip(job):
    args, k = job
    rng = np.random.default_rng([args.seed, k])
    pitch = _pitch(args)
    size = (args.image_width, args.image_height)
    scene = simulate_match(rng, n_players=args.players, n_frames=args.frames, image_size=size,
                           embedding_dim=args.embedding_dim, n_referees=args.referees, pitch=pitch)
    noise = NoiseModel(args.keypoint_sigma, args.dropout, args.fp_rate, args.embedding_sigma, args.bbox_jitter)
    frames = render_observations(scene, noise, size, rng)
    name = f"clip_{k:03d}.json"
    out = Path(args.out)
    obs = Clip(size, {i: observation_annotation(f, size) for i, f in enumerate(frames)})
    gt = Clip(size, {i: f.gt for i, f in enumerate(frames)})
    formats.write_clip(obs, out / "observations" / name)
    formats.write_clip(gt, out / "ground_truth" / name)
    embs = [np.array([d.embedding for d in f.detections]).reshape(len(f.detections), -1) for f in frames]
    formats.write_embeddings(embs, out / "embeddings" / f"clip_{k:03d}.bin")
    return name, len(frames)


def cmd_synth(args) -> int:
    out = Path(args.out)
    for sub in ("observations", "ground_truth", "embeddings"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    results = _map(_synth_clip, [(args, k) for k in range(args.clips)], args.jobs)
    total = sum(n for _, n in results)
    log.info("wrote %d clips, %d frames to %s", len(results), total, out)
    _write_summary(args, {"clips": len(results), "frames": total})
    return 0


# ---------------------------------------------------------------------------
# calibrate / annotate
# ---------------------------------------------------------------------------
def frame_observations(ann: FrameAnnotation):
    kps = [KeypointObservation(k, kp.x, kp.y, min(max(kp.p, 0.0), 1.0)) for k, kp in ann.keypoints.items()]
    lines = [LineObservation(n, np.array(pts)) for n, pts in ann.lines.items() if len(pts) >= 2]
    return kps, lines


def _calibrate_clip(job):
    args, path = job
    pitch = _pitch(args)
    clip = formats.read_clip(path)
    lm = LMConfig()
    validity = ValidityConfig(min_confidence=args.min_confidence)
    frames = {}
    n_valid = 0
    for i, ann in clip.frames.items():
        kps, lines = frame_observations(ann)
        res = calibrate_frame(kps, lines, pitch, clip.image_size, lm, validity)
        if res is not None:
            n_valid += 1
            frames[i] = ann.with_camera(res.params)
        else:
            frames[i] = ann.with_camera(None)
    formats.write_clip(Clip(clip.image_size, frames, clip.extras), Path(args.out) / path.name)
    return n_valid, len(frames)


def cmd_calibrate(args) -> int:
    paths = _clips(args.input)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    ok = total = 0
    t0 = time.perf_counter()
    for res in _map(_safe(_calibrate_clip), [(args, p) for p in paths], args.jobs):
        if isinstance(res, str):
            log.error(res)
            status = 1
            continue
        ok += res[0]
        total += res[1]
    cr = ok / total if total else 0.0
    log.info("calibrated %d/%d frames in %.1fs", ok, total, time.perf_counter() - t0)
    print(f"CR = {cr:.3f}")
    _write_summary(args, {"cr": cr, "frames": total, "valid": ok})
    return status


class _safe:
    """Picklable wrapper turning schema errors into messages."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, job):
        try:
            return self.fn(job)
        except SchemaError as exc:
            return f"{job[1].name}: schema error: {exc}"


def _annotate_clip(job):
    args, path = job
    pitch = _pitch(args)
    clip = formats.read_clip(path)
    frames = {}
    for i, ann in clip.frames.items():
        cam = ann.camera()
        if cam is not None:
            proj = project_pitch(cam, pitch, clip.image_size)
            ann = replace(
                ann,
                keypoints={k: KeypointRecord(x, y, 1.0) for k, (x, y) in sorted(proj.keypoints.items())},
                lines={n: tuple((float(x), float(y)) for x, y in pts) for n, pts in sorted(proj.lines.items())},
            )
        frames[i] = ann
    formats.write_clip(Clip(clip.image_size, frames, clip.extras), Path(args.out) / path.name)
    return len(frames)


def cmd_annotate(args) -> int:
    paths = _clips(args.input)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    for res in _map(_safe(_annotate_clip), [(args, p) for p in paths], args.jobs):
        if isinstance(res, str):
            log.error(res)
            status = 1
    return status


# ---------------------------------------------------------------------------
# track / postprocess
# ---------------------------------------------------------------------------
def _embedding_file(args, clip_path: Path):
    if not getattr(args, "embeddings", None):
        return None
    d = Path(args.embeddings)
    for ext in (".bin", ".json"):
        p = d / (clip_path.stem + ext)
        if p.exists():
            return p
    return None


def clip_detections(clip: Clip, embeddings=None) -> list[list[AthleteDetection]]:
    frames = clip.ordered()
    out = []
    for i, ann in enumerate(frames):
        embs = embeddings[i] if embeddings is not None and i < len(embeddings) else None
        dets = []
        for j, a in enumerate(ann.athletes):
            e = None
            if embs is not None and j < len(embs):
                e = embs[j] / np.linalg.norm(embs[j])
            role = a.role if a.role in ("player", "goalkeeper", "referee") else "unknown"
            conf = a.extras.get("confidence", 1.0)
            dets.append(AthleteDetection(a.bbox_ltwh, role, a.jersey_number, a.legibility_score or 0.0, e,
                                         float(min(max(conf, 0.0), 1.0))))
        out.append(dets)
    return out


def _track_clip(job):
    args, path = job
    clip = formats.read_clip(path)
    emb_path = _embedding_file(args, path)
    embs = formats.read_embeddings(emb_path) if emb_path else None
    dets = clip_detections(clip, embs)
    cfg = TrackerConfig(lambda_appearance=args.lambda_appearance, max_age=args.max_age, n_init=args.n_init)
    tracklets = run_sequence(dets, cfg)
    ids = {(e.frame, e.index): t.track_id for t in tracklets for e in t.entries}
    frames = {}
    for i, ann in enumerate(clip.ordered()):
        athletes = tuple(replace(a, track_id=ids.get((i, j))) for j, a in enumerate(ann.athletes))
        frames[i] = replace(ann, athletes=athletes)
    formats.write_clip(Clip(clip.image_size, frames, clip.extras), Path(args.out) / path.name)
    return len(tracklets)


def cmd_track(args) -> int:
    paths = _clips(args.input)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    for path, res in zip(paths, _map(_safe(_track_clip), [(args, p) for p in paths], args.jobs)):
        if isinstance(res, str):
            log.error(res)
            status = 1
        else:
            log.info("%s: %d tracklets", path.name, res)
    return status


def _postprocess_clip(job):
    from .tracking import Tracklet, TrackletEntry

    args, path = job
    clip = formats.read_clip(path)
    emb_path = _embedding_file(args, path)
    embs = formats.read_embeddings(emb_path) if emb_path else None
    frames = clip.ordered()
    dets = clip_detections(clip, embs)
    by_id: dict = {}
    for i, ann in enumerate(frames):
        filtered = filter_legibility(dets[i], args.legibility)
        for j, a in enumerate(ann.athletes):
            if a.track_id is not None:
                by_id.setdefault(a.track_id, []).append(TrackletEntry(i, filtered[j], j))
    tracklets = [Tracklet(tid, entries) for tid, entries in sorted(by_id.items())]
    merged = merge_tracklets(tracklets, MergeConfig(args.cosine_min, args.max_gap))
    cams = {i: ann.camera() for i, ann in enumerate(frames)}
    try:
        merged = assign_teams(merged, cams, TeamConfig(seed=args.seed))
    except InsufficientDataError as exc:
        log.warning("%s: team assignment skipped (%s)", path.name, exc)
    label = {}
    for t in merged:
        for e in t.entries:
            label[(e.frame, e.index)] = t
    out = {}
    for i, ann in enumerate(frames):
        athletes = []
        for j, a in enumerate(ann.athletes):
            t = label.get((i, j))
            if t is not None:
                a = replace(a, track_id=t.track_id, jersey_number=t.voted_jersey, role=t.voted_role, team=t.team)
            athletes.append(a)
        out[i] = replace(ann, athletes=tuple(athletes))
    formats.write_clip(Clip(clip.image_size, out, clip.extras), Path(args.out) / path.name)
    return len(merged)


def cmd_postprocess(args) -> int:
    paths = _clips(args.input)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    for path, res in zip(paths, _map(_safe(_postprocess_clip), [(args, p) for p in paths], args.jobs)):
        if isinstance(res, str):
            log.error(res)
            status = 1
        else:
            log.info("%s: %d tracklets after merging", path.name, res)
    return status


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
def _tracks(ann: FrameAnnotation):
    return [(a.track_id, a.bbox_ltwh) for a in ann.athletes if a.track_id is not None]


def _eval_calibration_clip(job):
    args, pred_path, gt_path = job
    pitch = _pitch(args)
    pred = formats.read_clip(pred_path)
    gt = formats.read_clip(gt_path)
    gammas = [float(g) for g in args.gamma]
    totals = {g: JaccardCounts() for g in gammas}
    ok = n = 0
    for i, g_ann in gt.frames.items():
        gcam = g_ann.camera()
        if gcam is None:
            continue
        n += 1
        p_ann = pred.frames.get(i)
        pcam = p_ann.camera() if p_ann is not None else None
        ok += pcam is not None
        errors = element_errors(pcam, gcam, pitch, gt.image_size)
        for g in gammas:
            totals[g] = totals[g] + jaccard_from_errors(errors, g)
    return totals, ok, n


def cmd_eval(args) -> int:
    gt_paths = _clips(args.gt)
    pred_dir = Path(args.pred)
    jobs = []
    status = 0
    for gp in gt_paths:
        pp = pred_dir / gp.name
        if not pp.exists():
            log.error("%s: no prediction file", gp.name)
            status = 1
            continue
        jobs.append((args, pp, gp))
    try:
        if args.mode == "calibration":
            totals = {float(g): JaccardCounts() for g in args.gamma}
            ok = n = 0
            for res in _map(_safe(_eval_calibration_clip), jobs, args.jobs):
                if isinstance(res, str):
                    log.error(res)
                    status = 1
                    continue
                t, o, k = res
                for g in totals:
                    totals[g] = totals[g] + t[g]
                ok += o
                n += k
            if n == 0:
                raise EmptyDatasetError("no ground-truth frames with cameras")
            report = report_from_counts(totals, ok / n, n)
        else:
            gt_frames, pred_frames = [], []
            for _, pp, gp in jobs:
                pred = formats.read_clip(pp).ordered()
                gt = formats.read_clip(gp).ordered()
                m = max(len(pred), len(gt))
                pred += [FrameAnnotation()] * (m - len(pred))
                gt += [FrameAnnotation()] * (m - len(gt))
                # ids are clip-local; offset them so clips never share identities
                off = len(gt_frames) * 1_000_000
                gt_frames += [[(off + t, b) for t, b in _tracks(f)] for f in gt]
                pred_frames += [[(off + t, b) for t, b in _tracks(f)] for f in pred]
            report = evaluate_tracking(gt_frames, pred_frames)
    except SchemaError as exc:
        log.error("schema error: %s", exc)
        return 1
    except EmptyDatasetError as exc:
        log.error("%s", exc)
        return 1
    text = report.to_json() if args.format == "json" else report.to_table()
    print(text)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    _write_summary(args, report.to_dict())
    return status


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def _common(p):
    p.add_argument("--pitch-length", type=float, default=105.0)
    p.add_argument("--pitch-width", type=float, default=68.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes over clips")
    p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    p.add_argument("--summary", help="write a machine-readable JSON summary here")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsrkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic clips with ground truth")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=1)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--players", type=int, default=22)
    p.add_argument("--referees", type=int, default=0)
    p.add_argument("--embedding-dim", type=int, default=128)
    p.add_argument("--image-width", type=int, default=1920)
    p.add_argument("--image-height", type=int, default=1080)
    p.add_argument("--keypoint-sigma", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--embedding-sigma", type=float, default=0.0)
    p.add_argument("--bbox-jitter", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="estimate cameras from keypoints and lines")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("annotate", help="replace keypoints/lines by projections of the pitch")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("track", help="link detections into tracklets")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--embeddings", help="directory of per-clip embedding sidecars")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-appearance", type=float, default=0.75)
    p.add_argument("--max-age", type=int, default=30)
    p.add_argument("--n-init", type=int, default=3)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("postprocess", help="legibility filter, voting, merging, teams")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--embeddings", help="directory of per-clip embedding sidecars")
    p.add_argument("--out", required=True)
    p.add_argument("--legibility", type=float, default=0.5)
    p.add_argument("--cosine-min", type=float, default=0.7)
    p.add_argument("--max-gap", type=int, default=150)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("calibration", "tracking"), required=True)
    p.add_argument("--gamma", type=float, nargs="+", default=list(DEFAULT_GAMMAS))
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if getattr(args, "gamma", None) and any(g <= 0 for g in args.gamma):
        parser.error("--gamma values must be positive")
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        status = args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        status = 2 if isinstance(exc, FileNotFoundError) else 1
    log.info("%s finished in %.2fs (exit %d)", args.command, time.perf_counter() - t0, status)
    return status


if __name__ == "__main__":
    sys.exit(main())

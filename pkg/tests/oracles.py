"""Slow, independent reference implementations used as test oracles."""
import itertools

import numpy as np


def brute_force_assignment(cost):
    """Max cardinality over finite entries, then min cost, then lexicographic."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    size = max(n, m)
    best = None
    for perm in itertools.permutations(range(size)):
        pairs = [(i, perm[i]) for i in range(n) if perm[i] < m and np.isfinite(cost[i, perm[i]])]
        key = (-len(pairs), sum(cost[i, j] for i, j in pairs), pairs)
        if best is None or key < best:
            best = key
    return best


def box_iou(a, b):
    al, at, aw, ah = a
    bl, bt, bw, bh = b
    iw = max(0.0, min(al + aw, bl + bw) - max(al, bl))
    ih = max(0.0, min(at + ah, bt + bh) - max(at, bt))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def hota_oracle(gt_frames, pred_frames, alphas=None):
    """HOTA / DetA / AssA straight from the definitions.

    Per frame and threshold, every injective gt-to-pred matching is
    enumerated and the one with the largest summed alignment x IoU over
    pairs with IoU >= alpha is kept.
    """
    if alphas is None:
        alphas = [0.05 * k for k in range(1, 20)]
    n_gt = sum(len(f) for f in gt_frames)
    n_pred = sum(len(f) for f in pred_frames)
    if n_gt == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0, 0.0, 0.0

    gt_count, pred_count, potential = {}, {}, {}
    ious = []
    for gf, pf in zip(gt_frames, pred_frames):
        sim = [[box_iou(gb, pb) for _, pb in pf] for _, gb in gf]
        ious.append(sim)
        for g, _ in gf:
            gt_count[g] = gt_count.get(g, 0) + 1
        for p, _ in pf:
            pred_count[p] = pred_count.get(p, 0) + 1
        for a, (g, _) in enumerate(gf):
            row = sum(sim[a])
            for b, (p, _) in enumerate(pf):
                col = sum(sim[k][b] for k in range(len(gf)))
                denom = row + col - sim[a][b]
                if denom > 0:
                    potential[g, p] = potential.get((g, p), 0.0) + sim[a][b] / denom
    align = {
        (g, p): v / (gt_count[g] + pred_count[p] - v) for (g, p), v in potential.items()
    }

    det, ass = [], []
    for alpha in alphas:
        tp = 0
        matched = {}
        for gf, pf, sim in zip(gt_frames, pred_frames, ious):
            n, m = len(gf), len(pf)
            if not n or not m:
                continue
            size = max(n, m)
            best, best_pairs = -1.0, []
            for perm in itertools.permutations(range(size)):
                pairs = [(a, perm[a]) for a in range(n)
                         if perm[a] < m and sim[a][perm[a]] >= alpha - 1e-15]
                s = sum(align.get((gf[a][0], pf[b][0]), 0.0) * sim[a][b] for a, b in pairs)
                if s > best + 1e-12:
                    best, best_pairs = s, pairs
            tp += len(best_pairs)
            for a, b in best_pairs:
                key = (gf[a][0], pf[b][0])
                matched[key] = matched.get(key, 0) + 1
        det_a = tp / max(1, n_gt + n_pred - tp)
        total = 0.0
        for (g, p), c in matched.items():
            total += c * c / (gt_count[g] + pred_count[p] - c)
        ass.append(total / max(1, tp))
        det.append(det_a)
    h = [np.sqrt(d * a) for d, a in zip(det, ass)]
    return float(np.mean(h)), float(np.mean(det)), float(np.mean(ass))


def idf1_oracle(gt_frames, pred_frames, threshold=0.5):
    """IDF1 by enumerating every injective gt-to-pred identity mapping."""
    gids = sorted({g for f in gt_frames for g, _ in f})
    pids = sorted({p for f in pred_frames for p, _ in f})
    n_gt = sum(len(f) for f in gt_frames)
    n_pred = sum(len(f) for f in pred_frames)
    overlap = {}
    for gf, pf in zip(gt_frames, pred_frames):
        for g, gb in gf:
            for p, pb in pf:
                if box_iou(gb, pb) >= threshold:
                    overlap[g, p] = overlap.get((g, p), 0) + 1
    best = 0
    slots = pids + [None] * len(gids)
    for perm in itertools.permutations(slots, len(gids)):
        best = max(best, sum(overlap.get((g, p), 0) for g, p in zip(gids, perm) if p is not None))
    denom = 2 * best + (n_pred - best) + (n_gt - best)
    return 2 * best / denom if denom else 1.0


def random_tracking_instance(rng, max_tracks=5, n_frames=20):
    """Small gt / pred sequences with overlaps, misses, false positives and id swaps."""
    n_gt = int(rng.integers(1, max_tracks + 1))
    gt_frames = [[] for _ in range(n_frames)]
    pred_frames = [[] for _ in range(n_frames)]
    # a compact arena so boxes often overlap several others
    for g in range(n_gt):
        start = int(rng.integers(0, n_frames))
        end = int(rng.integers(start, n_frames)) + 1
        pos = rng.uniform(0, 60, 2)
        size = rng.uniform(15, 30, 2)
        vel = rng.normal(0, 2, 2)
        pid = int(rng.integers(1, max_tracks + 1))
        for f in range(start, end):
            pos = pos + vel
            box = (float(pos[0]), float(pos[1]), float(size[0]), float(size[1]))
            gt_frames[f].append((g + 1, box))
            if rng.uniform() < 0.1:
                pid = int(rng.integers(1, max_tracks + 1))
            if rng.uniform() < 0.85 and pid not in [p for p, _ in pred_frames[f]]:
                jit = rng.normal(0, 3, 4)
                pb = (box[0] + jit[0], box[1] + jit[1], max(2.0, box[2] + jit[2]), max(2.0, box[3] + jit[3]))
                pred_frames[f].append((pid, tuple(float(v) for v in pb)))
    for f in range(n_frames):
        if rng.uniform() < 0.15:
            free = [p for p in range(1, max_tracks + 1) if p not in [q for q, _ in pred_frames[f]]]
            if free:
                xy = rng.uniform(0, 80, 2)
                pred_frames[f].append((int(free[0]), (float(xy[0]), float(xy[1]), 20.0, 25.0)))
    return gt_frames, pred_frames


def random_annotation(rng):
    """A random full-format annotation (as a FrameAnnotation)."""
    from gsrkit.formats import AthleteRecord, FrameAnnotation, KeypointRecord

    roles = ["player", "goalkeeper", "referee", "unknown", None]
    teams = ["left", "right", None]
    athletes = []
    for _ in range(int(rng.integers(0, 6))):
        box = tuple(float(v) for v in np.round(rng.uniform([0, 0, 1, 1], [1900, 1000, 120, 300]), int(rng.integers(0, 4))))
        athletes.append(AthleteRecord(
            box,
            None if rng.uniform() < 0.2 else int(rng.integers(0, 1000)),
            None if rng.uniform() < 0.3 else int(rng.integers(0, 100)),
            None if rng.uniform() < 0.2 else float(rng.uniform()),
            roles[int(rng.integers(len(roles)))],
            teams[int(rng.integers(len(teams)))],
            {"confidence": float(rng.uniform())} if rng.uniform() < 0.3 else {},
        ))
    keypoints = {
        int(k): KeypointRecord(float(rng.uniform(0, 1920)), float(rng.uniform(0, 1080)), float(rng.uniform()))
        for k in rng.choice(60, size=int(rng.integers(0, 10)), replace=False)
    }
    names = ["Circle central", "Middle line", "Side line top", "Big rect. left main", "Goal left crossbar"]
    lines = {
        str(n): tuple((float(x), float(y)) for x, y in rng.uniform(0, 1, (int(rng.integers(1, 6)), 2)))
        for n in rng.choice(names, size=int(rng.integers(0, len(names) + 1)), replace=False)
    }
    ann = FrameAnnotation(tuple(athletes), dict(sorted(keypoints.items())), dict(sorted(lines.items())))
    if rng.uniform() < 0.6:
        K = ((float(rng.uniform(500, 3000)), 0.0, 960.0), (0.0, float(rng.uniform(500, 3000)), 540.0), (0.0, 0.0, 1.0))
        Rt = tuple(tuple(float(v) for v in row) for row in rng.normal(size=(3, 4)))
        ann = FrameAnnotation(ann.athletes, ann.keypoints, ann.lines, K, Rt, bool(rng.uniform() < 0.8))
    return ann

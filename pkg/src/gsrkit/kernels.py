"""Hot inner loops: point-to-polyline distance, box IoU, min-cost assignment.

Every kernel exists twice. ``*_numba`` is compiled with ``numba.njit``;
``*_numpy`` is a vectorized numpy version (or, for the assignment solver,
the same loop run by the interpreter). The unsuffixed names dispatch on
:data:`gsrkit._accel.USE_NUMBA`.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# point -> polyline distance
# ---------------------------------------------------------------------------
def _polyline_distance_loops(points, verts, signed):
    n = points.shape[0]
    m = verts.shape[0]
    out = np.empty(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        best = np.inf
        side = 0.0
        for k in range(m - 1):
            ax = verts[k, 0]
            ay = verts[k, 1]
            bx = verts[k + 1, 0]
            by = verts[k + 1, 1]
            if not (np.isfinite(ax) and np.isfinite(ay) and np.isfinite(bx) and np.isfinite(by)):
                continue
            dx = bx - ax
            dy = by - ay
            ll = dx * dx + dy * dy
            s = 0.0
            if ll > 0.0:
                s = ((px - ax) * dx + (py - ay) * dy) / ll
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
            qx = ax + s * dx - px
            qy = ay + s * dy - py
            d = qx * qx + qy * qy
            if d < best:
                best = d
                side = dx * (py - ay) - dy * (px - ax)
        if best == np.inf:
            # no usable segment: fall back to isolated finite vertices
            for k in range(m):
                if np.isfinite(verts[k, 0]) and np.isfinite(verts[k, 1]):
                    qx = verts[k, 0] - px
                    qy = verts[k, 1] - py
                    d = qx * qx + qy * qy
                    if d < best:
                        best = d
        out[i] = np.sqrt(best)
        if signed and side < 0.0:
            out[i] = -out[i]
    return out


_polyline_distance_jit = njit(cache=True, fastmath=False, nogil=True)(_polyline_distance_loops)


def polyline_distance_numba(points, verts, signed=False):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    verts = np.ascontiguousarray(verts, dtype=np.float64).reshape(-1, 2)
    return _polyline_distance_jit(points, verts, bool(signed))


def polyline_distance_numpy(points, verts, signed=False):
    """Distance from each of ``points`` (n, 2) to the polyline ``verts`` (m, 2).

    Segments touching a non-finite vertex are skipped, which lets callers mark
    samples behind the camera with NaN to split the curve. With ``signed``,
    points left of the nearest segment (in travel order, image axes) get a
    positive sign.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 2)
    n = points.shape[0]
    if n == 0:
        return np.empty(0)
    finite = np.isfinite(verts).all(axis=1)
    best = np.full(n, np.inf)
    side = np.zeros(n)
    if verts.shape[0] >= 2:
        ok = finite[:-1] & finite[1:]
        a = verts[:-1][ok]
        b = verts[1:][ok]
        if len(a):
            d = b - a
            ll = np.einsum("ij,ij->i", d, d)
            rel = points[:, None, :] - a[None, :, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.einsum("nkj,kj->nk", rel, d) / ll[None, :]
            s = np.where(ll[None, :] > 0.0, np.clip(s, 0.0, 1.0), 0.0)
            q = a[None, :, :] + s[..., None] * d[None, :, :] - points[:, None, :]
            dist2 = np.einsum("nkj,nkj->nk", q, q)
            k = np.argmin(dist2, axis=1)
            rows = np.arange(n)
            best = dist2[rows, k]
            side = d[k, 0] * rel[rows, k, 1] - d[k, 1] * rel[rows, k, 0]
    if np.isinf(best).any() and finite.any():
        v = verts[finite]
        dv = ((points[:, None, :] - v[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        best = np.where(np.isinf(best), dv, best)
    out = np.sqrt(best)
    if signed:
        out = np.where(side < 0.0, -out, out)
    return out


# ---------------------------------------------------------------------------
# point -> projected circular arc distance
# ---------------------------------------------------------------------------
# The arc pixel at parameter s in [0, 1] is M @ (cos th, sin th, 1) with
# th = start + s * sweep. ``poly`` (projected samples, closing point appended
# for full circles) seeds each point at the foot on its nearest chord, then
# Gauss-Newton steps on s finish the job.
@njit(cache=True, nogil=True)
def _arc_eval(M, th, sweep):
    cs = np.cos(th)
    sn = np.sin(th)
    x0 = M[0, 0] * cs + M[0, 1] * sn + M[0, 2]
    x1 = M[1, 0] * cs + M[1, 1] * sn + M[1, 2]
    x2 = M[2, 0] * cs + M[2, 1] * sn + M[2, 2]
    d0 = sweep * (-M[0, 0] * sn + M[0, 1] * cs)
    d1 = sweep * (-M[1, 0] * sn + M[1, 1] * cs)
    d2 = sweep * (-M[2, 0] * sn + M[2, 1] * cs)
    if not x2 > 0.0:
        return np.nan, np.nan, np.nan, np.nan
    u = x0 / x2
    v = x1 / x2
    return u, v, (d0 * x2 - x0 * d2) / (x2 * x2), (d1 * x2 - x1 * d2) / (x2 * x2)


def _arc_distance_loops(points, poly, M, start, sweep, closed, iters, signed):
    n = points.shape[0]
    n_seg = poly.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        best = np.inf
        par = 0.0
        for k in range(n_seg):
            ax = poly[k, 0]
            ay = poly[k, 1]
            dx = poly[k + 1, 0] - ax
            dy = poly[k + 1, 1] - ay
            ll = dx * dx + dy * dy
            s = 0.0
            if ll > 0.0:
                s = ((px - ax) * dx + (py - ay) * dy) / ll
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
            qx = ax + s * dx - px
            qy = ay + s * dy - py
            d = qx * qx + qy * qy
            if d < best:
                best = d
                par = (k + s) / n_seg
        if not best < np.inf:
            out[i] = np.inf
            continue
        for _ in range(iters):
            u, v, du, dv = _arc_eval(M, start + par * sweep, sweep)
            jj = du * du + dv * dv
            step = (du * (u - px) + dv * (v - py)) / jj
            if np.isfinite(step):
                par -= step
                if not closed:
                    if par < 0.0:
                        par = 0.0
                    elif par > 1.0:
                        par = 1.0
        u, v, du, dv = _arc_eval(M, start + par * sweep, sweep)
        ex = u - px
        ey = v - py
        dist = np.sqrt(ex * ex + ey * ey)
        if signed and du * (-ey) - dv * (-ex) < 0.0:
            dist = -dist
        out[i] = dist
    return out


_arc_distance_jit = njit(cache=True, nogil=True)(_arc_distance_loops)


def arc_distance_numba(points, poly, M, start, sweep, closed, iters=4, signed=False):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.ascontiguousarray(poly, dtype=np.float64).reshape(-1, 2)
    M = np.ascontiguousarray(M, dtype=np.float64)
    return _arc_distance_jit(points, poly, M, float(start), float(sweep), bool(closed), int(iters), bool(signed))


def arc_distance_numpy(points, poly, M, start, sweep, closed, iters=4, signed=False):
    """Distance from ``points`` to the projected arc ``M (cos, sin, 1)``.

    With ``signed``, points left of the arc's travel direction are positive.
    Points whose nearest sample is missing get ``inf``; points whose foot
    lands behind the camera get NaN.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    M = np.asarray(M, dtype=np.float64)
    n_seg = len(poly) - 1
    if len(pts) == 0:
        return np.empty(0)
    a = poly[:-1]
    d = poly[1:] - a
    ll = np.einsum("ij,ij->i", d, d)
    rel = pts[:, None, :] - a[None]
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(ll > 0, np.clip(np.einsum("nkj,kj->nk", rel, d) / ll, 0.0, 1.0), 0.0)
    q = a[None] + s[..., None] * d[None] - pts[:, None, :]
    dist2 = np.einsum("nkj,nkj->nk", q, q)
    dist2 = np.where(np.isfinite(dist2), dist2, np.inf)
    k = np.argmin(dist2, axis=1)
    rows = np.arange(len(k))
    seeded = np.isfinite(dist2[rows, k])
    param = (k + s[rows, k]) / n_seg

    def curve(par):
        th = start + par * sweep
        cs, sn = np.cos(th), np.sin(th)
        x = np.outer(cs, M[:, 0]) + np.outer(sn, M[:, 1]) + M[:, 2]
        dx = sweep * (np.outer(-sn, M[:, 0]) + np.outer(cs, M[:, 1]))
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(x[:, 2] > 0, x[:, 2], np.nan)
            uv = x[:, :2] / w[:, None]
            duv = (dx[:, :2] * w[:, None] - x[:, :2] * dx[:, 2:3]) / (w * w)[:, None]
        return uv, duv

    for _ in range(iters):
        uv, duv = curve(param)
        e = uv - pts
        with np.errstate(invalid="ignore", divide="ignore"):
            step = np.einsum("ij,ij->i", duv, e) / np.einsum("ij,ij->i", duv, duv)
        param = param - np.where(np.isfinite(step), step, 0.0)
        if not closed:
            param = np.clip(param, 0.0, 1.0)
    uv, tan = curve(param)
    e = uv - pts
    dist = np.sqrt(np.einsum("ij,ij->i", e, e))
    if signed:
        side = tan[:, 0] * (-e[:, 1]) - tan[:, 1] * (-e[:, 0])
        dist = np.where(side < 0.0, -dist, dist)
    return np.where(seeded, dist, np.inf)


# ---------------------------------------------------------------------------
# IoU between two sets of ltwh boxes
# ---------------------------------------------------------------------------
def _iou_loops(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        al = a[i, 0]
        at = a[i, 1]
        ar = al + a[i, 2]
        ab = at + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bl = b[j, 0]
            bt = b[j, 1]
            br = bl + b[j, 2]
            bb = bt + b[j, 3]
            iw = min(ar, br) - max(al, bl)
            ih = min(ab, bb) - max(at, bt)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + b[j, 2] * b[j, 3] - inter
            if union > 0.0:
                # (l + w) - l can exceed w by an ulp; keep IoU within [0, 1]
                out[i, j] = min(inter / union, 1.0)
    return out


_iou_jit = njit(cache=True, nogil=True)(_iou_loops)


def iou_matrix_numba(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _iou_jit(a, b)


def iou_matrix_numpy(a, b):
    """Pairwise IoU of boxes given as (left, top, width, height)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    l = np.maximum(a[:, None, 0], b[None, :, 0])
    t = np.maximum(a[:, None, 1], b[None, :, 1])
    r = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
    btm = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
    inter = np.clip(r - l, 0.0, None) * np.clip(btm - t, 0.0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where((inter > 0) & (union > 0), np.minimum(inter / union, 1.0), 0.0)
    return out


# ---------------------------------------------------------------------------
# Square min-cost assignment (shortest augmenting path, O(n^3))
# ---------------------------------------------------------------------------
def _hungarian_loops(cost):
    # cost: (n, m) finite, n <= m. Returns row->col and dual potentials with
    # cost[i, j] - u[i] - v[j] >= 0, equality on assigned pairs.
    n = cost.shape[0]
    m = cost.shape[1]
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    minv = np.empty(m + 1)
    used = np.zeros(m + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:].copy(), v[1:].copy()


_hungarian_jit = njit(cache=True, nogil=True)(_hungarian_loops)


def hungarian_numba(cost):
    return _hungarian_jit(np.ascontiguousarray(cost, dtype=np.float64))


def hungarian_numpy(cost):
    return _hungarian_loops(np.ascontiguousarray(cost, dtype=np.float64))


if USE_NUMBA:
    polyline_distance = polyline_distance_numba
    arc_distance = arc_distance_numba
    iou_matrix = iou_matrix_numba
    hungarian = hungarian_numba
else:
    polyline_distance = polyline_distance_numpy
    arc_distance = arc_distance_numpy
    iou_matrix = iou_matrix_numpy
    hungarian = hungarian_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"

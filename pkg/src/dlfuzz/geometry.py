"""Planar primitives: segment crossing tests and polyline arc-length helpers."""
from __future__ import annotations

import numpy as np


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segment_intersection(a, b):
    """Return the proper crossing point of segments ``a`` and ``b`` or None.

    Only crossings interior to both segments count. Touching endpoints,
    parallel segments and collinear overlap all return None.
    """
    (p1, p2), (q1, q2) = a, b
    p1, p2, q1, q2 = (tuple(map(float, x)) for x in (p1, p2, q1, q2))
    if p1 == p2 or q1 == q2:
        raise ValueError("segments must have positive length")
    # canonical order makes the returned point bit-identical for (a, b) and (b, a)
    if (p1, p2) > (q1, q2):
        p1, p2, q1, q2 = q1, q2, p1, p2
    d1 = _orient(*q1, *q2, *p1)
    d2 = _orient(*q1, *q2, *p2)
    d3 = _orient(*p1, *p2, *q1)
    d4 = _orient(*p1, *p2, *q2)
    if not (d1 * d2 < 0 and d3 * d4 < 0):
        return None
    t = d1 / (d1 - d2)
    return (p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]))


def crossing_pairs(pa, pb):
    """Vectorised proper crossings between two polylines.

    Returns ``(k, m, points)``: segment indices into ``pa`` and ``pb`` and the
    (n, 2) crossing points, sorted by (k, m). Same predicate as
    :func:`segment_intersection`.
    """
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    empty = (np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)))
    if len(pa) < 2 or len(pb) < 2:
        return empty
    a0, a1 = pa[:-1], pa[1:]
    b0, b1 = pb[:-1], pb[1:]
    # bounding-box prefilter
    amin = np.minimum(a0, a1)
    amax = np.maximum(a0, a1)
    bmin = np.minimum(b0, b1)
    bmax = np.maximum(b0, b1)
    cand = (
        (amin[:, None, 0] <= bmax[None, :, 0])
        & (bmin[None, :, 0] <= amax[:, None, 0])
        & (amin[:, None, 1] <= bmax[None, :, 1])
        & (bmin[None, :, 1] <= amax[:, None, 1])
    )
    k, m = np.nonzero(cand)
    if len(k) == 0:
        return empty
    out_k, out_m, out_p = [], [], []
    for kk, mm in zip(k.tolist(), m.tolist()):
        p = segment_intersection((pa[kk], pa[kk + 1]), (pb[mm], pb[mm + 1]))
        if p is not None:
            out_k.append(kk)
            out_m.append(mm)
            out_p.append(p)
    if not out_k:
        return empty
    return np.array(out_k), np.array(out_m), np.array(out_p, dtype=float)


def cumulative_length(points):
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return np.zeros(len(pts))
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_length(points):
    return float(cumulative_length(points)[-1]) if len(points) else 0.0


def point_at(points, cum, s):
    """Point and unit tangent at arc length ``s`` (clamped to the polyline)."""
    n = len(points)
    if n == 1:
        return points[0].copy(), np.array([1.0, 0.0])
    s = min(max(s, 0.0), cum[-1])
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(max(k, 0), n - 2)
    seg = cum[k + 1] - cum[k]
    t = 0.0 if seg <= 0 else (s - cum[k]) / seg
    d = points[k + 1] - points[k]
    norm = float(np.hypot(d[0], d[1])) or 1.0
    return points[k] + t * d, d / norm


def resample(points, spacing=1.0):
    """Resample a polyline at fixed arc spacing, always keeping the end point."""
    pts = np.asarray(points, dtype=float)
    cum = cumulative_length(pts)
    total = cum[-1]
    targets = np.arange(0.0, total, spacing)
    if len(targets) == 0 or total - targets[-1] > 1e-9:
        targets = np.append(targets, total)
    x = np.interp(targets, cum, pts[:, 0])
    y = np.interp(targets, cum, pts[:, 1])
    return np.column_stack([x, y]), targets


def project(points, cum, q):
    """Closest point on a polyline to ``q``: returns (distance, arc length)."""
    pts = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(pts) == 1:
        return float(np.hypot(*(q - pts[0]))), 0.0
    a = pts[:-1]
    d = pts[1:] - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", q - a, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    foot = a + t[:, None] * d
    dist = np.hypot(*(foot - q).T)
    k = int(np.argmin(dist))
    return float(dist[k]), float(cum[k] + t[k] * np.sqrt(dd[k]))


def heading_of(v):
    return float(np.arctan2(v[1], v[0]))


def angle_diff(a, b):
    """Absolute difference of two headings, in [0, pi]."""
    d = (a - b + np.pi) % (2 * np.pi) - np.pi
    return abs(float(d))

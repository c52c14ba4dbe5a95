"""Spatial and temporal conflict scores over executed AV trajectories.

Lower scores mean more contention: many trajectory crossings (spatial) or
crossings reached at nearly the same time and at low speed (temporal).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTrajectories
from .geometry import crossing_pairs
from .scenario import trajectory_points

R_MERGE = 4.0
N_TI = 30.0
ALPHA = 0.5
COS_PARALLEL = math.cos(math.radians(10.0))


@dataclass
class ConflictRegion:
    point: tuple
    involved: frozenset
    arrivals: dict  # AV id -> (t_R, v_R)
    sources: list = field(default_factory=list)  # (agent, segment index)

    def to_dict(self):
        return {
            "point": [float(self.point[0]), float(self.point[1])],
            "involved": sorted(self.involved),
            "arrivals": {str(k): [float(t), float(v)] for k, (t, v) in sorted(self.arrivals.items())},
        }


@dataclass
class FeedbackScore:
    spatial: float
    temporal: float
    combined: float
    regions: list
    raw_count: int = 0

    def to_dict(self):
        return {
            "spatial": self.spatial,
            "temporal": self.temporal,
            "combined": self.combined,
            "raw_count": self.raw_count,
            "regions": [r.to_dict() for r in self.regions],
        }


def pair_crossings(pa, pb, lanes_a=None, lanes_b=None):
    """Proper crossings between two polylines as (k, m, point) tuples.

    With per-segment lane labels, crossings between segments carrying the
    same label are dropped (same-lane overlap is following, not conflict),
    and so are near-parallel crossings: where lanes branch or merge the
    nearest-lane label is ambiguous, and chords of one curve sampled at
    different phases cross each other at a few degrees.
    """
    k, m, pts = crossing_pairs(pa, pb)
    out = []
    for kk, mm, p in zip(k.tolist(), m.tolist(), pts.tolist()):
        if lanes_a is not None:
            if lanes_a[kk] == lanes_b[mm]:
                continue
            da = pa[kk + 1] - pa[kk]
            db = pb[mm + 1] - pb[mm]
            cos = float(np.dot(da, db)) / float(np.hypot(*da) * np.hypot(*db))
            if cos > COS_PARALLEL:
                continue
        out.append((kk, mm, (p[0], p[1])))
    return out


def score_from_counts(raw_count, segment_counts):
    """1 - |C_S| / sum of segment counts, clamped to [0, 1]."""
    denom = sum(n for n in segment_counts if n > 0)
    if denom == 0:
        raise DegenerateTrajectories("no AV trajectory has a segment")
    return min(1.0, max(0.0, 1.0 - raw_count / denom))


def polyline_spatial_score(polylines, lanes=None):
    """Spatial score of a set of polylines; returns (score, raw crossing count)."""
    raw = 0
    for a, b in itertools.combinations(range(len(polylines)), 2):
        la = lanes[a] if lanes is not None else None
        lb = lanes[b] if lanes is not None else None
        raw += len(pair_crossings(polylines[a], polylines[b], la, lb))
    return score_from_counts(raw, [len(p) - 1 for p in polylines]), raw


def segment_lanes(graph, points):
    if len(points) < 2:
        return []
    mids = 0.5 * (points[:-1] + points[1:])
    return graph.nearest_lane_ids(mids)


def _nearest_sample(times, pts, vs, q):
    d = np.hypot(pts[:, 0] - q[0], pts[:, 1] - q[1])
    k = int(np.argmin(d))  # first minimum -> earliest sample on ties
    return float(times[k]), float(vs[k])


def _merge(hits, r_merge):
    """Single-linkage clusters of crossing points, each in first-seen order."""
    clusters = []
    for h in hits:
        near = [c for c in clusters if any(math.dist(h[2], o[2]) < r_merge for o in c)]
        if not near:
            clusters.append([h])
            continue
        base = near[0]
        for c in near[1:]:
            base.extend(c)
            clusters.remove(c)
        base.append(h)
    for c in clusters:
        c.sort(key=lambda h: (h[0], h[1]))
    clusters.sort(key=lambda c: (c[0][0], c[0][1]))
    return clusters


def conflict_analysis(obs, graph, r_merge=R_MERGE):
    """Regions and the pre-merge crossing count over all AV pairs."""
    data = {}
    for av in obs.av_ids:
        times, pts, vs = trajectory_points(obs, av)
        data[av] = (times, pts, vs, segment_lanes(graph, pts))
    regions = []
    raw = 0
    for i, j in itertools.combinations(obs.av_ids, 2):
        ti, pi, vi, li = data[i]
        tj, pj, vj, lj = data[j]
        hits = pair_crossings(pi, pj, li, lj)
        raw += len(hits)
        for cluster in _merge(hits, r_merge):
            k, m, p = cluster[0]
            arrivals = {i: _nearest_sample(ti, pi, vi, p), j: _nearest_sample(tj, pj, vj, p)}
            sources = sorted({(i, h[0]) for h in cluster} | {(j, h[1]) for h in cluster})
            regions.append(ConflictRegion(p, frozenset((i, j)), arrivals, sources))
    return regions, raw, [len(data[a][1]) - 1 for a in obs.av_ids]


def conflict_points(obs, graph, r_merge=R_MERGE):
    return conflict_analysis(obs, graph, r_merge)[0]


def spatial_score(obs, regions, raw_count):
    del regions  # the score depends on the pre-merge count only
    counts = [len(trajectory_points(obs, av)[1]) - 1 for av in obs.av_ids]
    return score_from_counts(raw_count, counts)


def region_temporal_score(region):
    best = math.inf
    for a, b in itertools.combinations(sorted(region.arrivals), 2):
        (ta, va), (tb, vb) = region.arrivals[a], region.arrivals[b]
        best = min(best, abs(ta - tb) + va + vb)
    return best


def temporal_score(regions, n_ti=N_TI):
    if not regions:
        return 1.0
    return min(1.0, max(0.0, min(region_temporal_score(r) for r in regions) / n_ti))


def combine(spatial, temporal, alpha=ALPHA):
    return alpha * spatial + (1.0 - alpha) * temporal


def feedback(obs, graph, alpha=ALPHA, n_ti=N_TI, r_merge=R_MERGE):
    regions, raw, counts = conflict_analysis(obs, graph, r_merge)
    sp = score_from_counts(raw, counts)
    tm = temporal_score(regions, n_ti)
    return FeedbackScore(sp, tm, combine(sp, tm, alpha), regions, raw)

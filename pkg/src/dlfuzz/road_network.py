"""Lane graphs, the four built-in map regions, and shortest-route planning.

Maps are built procedurally from a handful of geometric constants so that
no external map files are needed. All coordinates are metres, right-hand
traffic.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import NoRoute, ParseError

LANE_WIDTH = 3.5
BOX_HALF = 10.0  # 20 m intersection box
APPROACH_OUTER = 70.0
ROUNDABOUT_RADIUS = 15.0
ARM_OUTER = 60.0
MERGE_ANGLE = math.radians(15.0)
RAMP_LENGTH = 120.0
HIGHWAY_HALF = 200.0
GOAL_BACKOFF = 5.0  # destinations sit this far before the end of a sink lane
ON_LANE_TOL = 1.0
MAP_VERSION = 1

MAP_IDS = ("M1", "M2", "M3", "M4")


@dataclass(eq=False)
class Lane:
    id: str
    centerline: np.ndarray
    direction_tag: str
    speed_limit: float
    kind: str = "custom"

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        if len(self.centerline) < 2:
            raise ValueError(f"lane {self.id}: centerline needs >= 2 points")
        if np.any(np.all(np.diff(self.centerline, axis=0) == 0, axis=1)):
            raise ValueError(f"lane {self.id}: consecutive duplicate points")
        self.cum = geo.cumulative_length(self.centerline)

    @property
    def length(self):
        return float(self.cum[-1])

    def project(self, q):
        return geo.project(self.centerline, self.cum, q)

    def point_at(self, s):
        return geo.point_at(self.centerline, self.cum, s)


@dataclass(eq=False)
class LaneGraph:
    lanes: list
    connectivity: dict
    spawn_points: list  # (x, y, heading)
    map_id: str = "Custom"

    def __post_init__(self):
        ids = [ln.id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            raise ValueError("lane ids must be unique")
        self._by_id = {ln.id: ln for ln in self.lanes}
        for lid in ids:
            self.connectivity.setdefault(lid, [])
        self.spawn_points = [tuple(float(c) for c in sp) for sp in self.spawn_points]

    def lane(self, lane_id):
        return self._by_id[lane_id]

    def successors(self, lane_id):
        return self.connectivity.get(lane_id, [])

    def lanes_of_kind(self, kind):
        return [ln for ln in self.lanes if ln.kind == kind]

    @cached_property
    def _samples(self):
        pts, owner = [], []
        for idx, ln in enumerate(self.lanes):
            sp, _ = geo.resample(ln.centerline, 0.25)
            pts.append(sp)
            owner.append(np.full(len(sp), idx))
        pts = np.concatenate(pts)
        return cKDTree(pts), np.concatenate(owner)

    def nearest_lane_ids(self, points):
        """Nearest lane id for each point (dense-sample lookup)."""
        tree, owner = self._samples
        _, idx = tree.query(np.atleast_2d(np.asarray(points, dtype=float)))
        return [self.lanes[i].id for i in owner[np.atleast_1d(idx)]]

    def nearest_lane(self, q):
        """(lane id, distance, arc) of the closest lane; ties go to the smaller id."""
        best = None
        for ln in self.lanes:
            d, s = ln.project(q)
            key = (round(d, 9), ln.id)
            if best is None or key < best[0]:
                best = (key, ln.id, d, s)
        return best[1], best[2], best[3]

    def lanes_near(self, q, tol=ON_LANE_TOL):
        out = []
        for ln in self.lanes:
            d, s = ln.project(q)
            if d <= tol:
                out.append((ln.id, d, s))
        return out

    @cached_property
    def destinations(self):
        """Goal points: GOAL_BACKOFF metres before the end of every sink lane."""
        goals = []
        for ln in self.lanes:
            if not self.successors(ln.id):
                s = max(0.0, ln.length - GOAL_BACKOFF)
                p, _ = ln.point_at(s)
                goals.append((float(p[0]), float(p[1])))
        return goals

    @cached_property
    def _route_cache(self):
        return {}

    def reachable_destinations(self, start):
        out = []
        for g in self.destinations:
            try:
                cached_route(self, start, g)
            except NoRoute:
                continue
            out.append(g)
        return out

    def to_dict(self):
        return {
            "map_id": self.map_id,
            "lanes": [
                {
                    "id": ln.id,
                    "centerline": ln.centerline.tolist(),
                    "speed_limit": ln.speed_limit,
                    "direction_tag": ln.direction_tag,
                    "kind": ln.kind,
                }
                for ln in self.lanes
            ],
            "connectivity": {k: list(v) for k, v in sorted(self.connectivity.items())},
            "spawn_points": [list(sp) for sp in self.spawn_points],
        }


@dataclass(eq=False)
class Route:
    lane_sequence: list
    points: np.ndarray
    total_length: float
    point_lanes: list = field(default_factory=list)  # lane id of every resampled point

    @cached_property
    def cum(self):
        return geo.cumulative_length(self.points)

    def point_at(self, s):
        return geo.point_at(self.points, self.cum, s)


# ---------------------------------------------------------------------------
# map construction


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def _right(d):
    return np.array([d[1], -d[0]])


def _arc(p0, d0, p1, d1, step=0.5):
    """Circular arc leaving p0 along d0 and arriving at p1 along d1."""
    n0 = np.array([-d0[1], d0[0]])
    n1 = np.array([-d1[1], d1[0]])
    # p0 + l*n0 == p1 + m*n1
    mat = np.column_stack([n0, -n1])
    lam, _ = np.linalg.solve(mat, p1 - p0)
    center = p0 + lam * n0
    r = abs(lam)
    a0 = math.atan2(*(p0 - center)[::-1])
    a1 = math.atan2(*(p1 - center)[::-1])
    ccw = lam > 0
    sweep = (a1 - a0) % (2 * math.pi) if ccw else -((a0 - a1) % (2 * math.pi))
    n = max(2, int(math.ceil(abs(sweep) * r / step)) + 1)
    ang = a0 + np.linspace(0.0, sweep, n)
    pts = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
    pts[0], pts[-1] = p0, p1
    return pts


def _line(p0, p1):
    return np.array([p0, p1], dtype=float)


_ARM_ANGLES = {"E": 0.0, "N": math.pi / 2, "W": math.pi, "S": 3 * math.pi / 2}


def _junction(arms, map_id):
    lanes, conn, spawns = [], {}, []
    half = LANE_WIDTH / 2
    geom = {}
    for arm in arms:
        a = _unit(_ARM_ANGLES[arm])
        d_in = -a
        r_in = _right(d_in)
        r_out = _right(a)
        p_in0 = a * APPROACH_OUTER + r_in * half
        p_in1 = a * BOX_HALF + r_in * half
        p_out0 = a * BOX_HALF + r_out * half
        p_out1 = a * APPROACH_OUTER + r_out * half
        geom[arm] = (d_in, p_in1, a, p_out0)
        lanes.append(Lane(f"{arm}.in", _line(p_in0, p_in1), arm, 10.0, "approach"))
        lanes.append(Lane(f"{arm}.out", _line(p_out0, p_out1), arm, 10.0, "exit"))
        conn[f"{arm}.out"] = []
        conn[f"{arm}.in"] = []
        for dist in (12.0, 30.0, 48.0):
            p = p_in1 - d_in * dist
            spawns.append((round(float(p[0]), 9), round(float(p[1]), 9), math.atan2(d_in[1], d_in[0])))
    for src in arms:
        d_in, p0, _, _ = geom[src]
        for dst in arms:
            if dst == src:
                continue
            _, _, a_out, p1 = geom[dst]
            cross = d_in[0] * a_out[1] - d_in[1] * a_out[0]
            if abs(cross) < 1e-9:
                kind, pts, limit = "straight", _line(p0, p1), 10.0
            elif cross > 0:
                kind, pts, limit = "left", _arc(p0, d_in, p1, a_out), 7.0
            else:
                kind, pts, limit = "right", _arc(p0, d_in, p1, a_out), 5.0
            lid = f"{src}.{kind}"
            lanes.append(Lane(lid, pts, f"{src}>{dst}", limit, "movement"))
            conn[f"{src}.in"].append(lid)
            conn[lid] = [f"{dst}.out"]
    for k in conn:
        conn[k] = sorted(conn[k])
    return LaneGraph(lanes, conn, spawns, map_id)


def _roundabout():
    R = ROUNDABOUT_RADIUS
    half = LANE_WIDTH / 2
    arms = ["E", "N", "W", "S"]
    beta = math.asin(half / R)
    reach = math.sqrt(R * R - half * half)
    lanes, conn, spawns = [], {}, []

    def ring_pt(angle):
        return R * _unit(angle)

    for k, arm in enumerate(arms):
        phi = _ARM_ANGLES[arm]
        a = _unit(phi)
        d_in = -a
        p_in0 = a * ARM_OUTER + _right(d_in) * half
        p_in1 = a * reach + _right(d_in) * half
        p_out0 = a * reach + _right(a) * half
        p_out1 = a * ARM_OUTER + _right(a) * half
        lanes.append(Lane(f"{arm}.in", _line(p_in0, p_in1), arm, 8.0, "approach"))
        lanes.append(Lane(f"{arm}.out", _line(p_out0, p_out1), arm, 8.0, "exit"))
        for dist in (10.0, 25.0, 40.0):
            p = p_in1 - d_in * dist
            spawns.append((round(float(p[0]), 9), round(float(p[1]), 9), math.atan2(d_in[1], d_in[0])))

        nxt = arms[(k + 1) % 4]
        phi_n = _ARM_ANGLES[nxt]
        a0, a1 = phi - beta, phi + beta
        b0, b1 = phi + beta, phi_n - beta
        if b1 < b0:
            b1 += 2 * math.pi
        for lid, s0, s1 in ((f"ring.{arm}.a", a0, a1), (f"ring.{arm}.b", b0, b1)):
            n = max(2, int(math.ceil((s1 - s0) * R / 0.5)) + 1)
            ang = np.linspace(s0, s1, n)
            pts = R * np.column_stack([np.cos(ang), np.sin(ang)])
            pts[0], pts[-1] = ring_pt(s0), ring_pt(s1)
            lanes.append(Lane(lid, pts, "ccw", 7.0, "ring"))
        # snap junction end points exactly onto the ring nodes
        lanes[-4].centerline[-1] = ring_pt(a1)
        lanes[-3].centerline[0] = ring_pt(a0)
        for ln in lanes[-4:-2]:
            ln.cum = geo.cumulative_length(ln.centerline)
        conn[f"{arm}.in"] = [f"ring.{arm}.b"]
        conn[f"{arm}.out"] = []
        conn[f"ring.{arm}.a"] = [f"ring.{arm}.b"]
        conn[f"ring.{arm}.b"] = sorted([f"ring.{nxt}.a", f"{nxt}.out"])
    return LaneGraph(lanes, conn, spawns, "M3")


def _highway():
    """One-direction two-lane highway (eastbound) with a 15 degree on-ramp.

    The ramp centreline runs 1.5 m past the merge point so that it crosses the
    outer lane once; its end sits within 0.5 m of the downstream outer lane.
    """
    u = _unit(MERGE_ANGLE)
    ramp_end = 1.5 * u
    split_x = float(ramp_end[0])
    ramp_start = ramp_end - RAMP_LENGTH * u
    lanes = [
        Lane("O1", _line((-HIGHWAY_HALF, 0.0), (split_x, 0.0)), "E", 20.0, "mainline"),
        Lane("O2", _line((split_x, 0.0), (HIGHWAY_HALF, 0.0)), "E", 20.0, "mainline"),
        Lane("I1", _line((-HIGHWAY_HALF, LANE_WIDTH), (split_x, LANE_WIDTH)), "E", 20.0, "mainline"),
        Lane("I2", _line((split_x, LANE_WIDTH), (HIGHWAY_HALF, LANE_WIDTH)), "E", 20.0, "mainline"),
        Lane("R", _line(ramp_start, ramp_end), "E", 15.0, "ramp"),
    ]
    conn = {"O1": ["O2"], "I1": ["I2"], "R": ["O2"], "O2": [], "I2": []}
    spawns = []
    for x in (-150.0, -120.0, -90.0, -60.0):
        spawns.append((x, 0.0, 0.0))
        spawns.append((x, LANE_WIDTH, 0.0))
    for dist in (30.0, 55.0, 80.0):
        p = ramp_end - dist * u
        spawns.append((round(float(p[0]), 9), round(float(p[1]), 9), MERGE_ANGLE))
    return LaneGraph(lanes, conn, spawns, "M4")


_BUILT = {}


def build_builtin_map(map_id):
    """Return the fixed LaneGraph for one of the built-in regions M1..M4.

    M1 is a four-way intersection (12 movements), M2 a T-junction (6
    movements), M3 a single-lane roundabout with four arms and M4 a two-lane
    highway with one merge ramp. Graphs are cached and shared; treat them as
    read-only.
    """
    key = str(map_id).upper()
    if key not in MAP_IDS:
        raise ValueError(f"unknown built-in map {map_id!r}")
    if key not in _BUILT:
        if key == "M1":
            g = _junction(["E", "N", "W", "S"], "M1")
        elif key == "M2":
            g = _junction(["E", "W", "S"], "M2")
        elif key == "M3":
            g = _roundabout()
        else:
            g = _highway()
        _BUILT[key] = g
    return _BUILT[key]


def load_map_json(doc):
    """Custom map from ``{lanes, connectivity, spawn_points}`` (dict or JSON text)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg}) at line {exc.lineno}") from exc
    try:
        lanes = [
            Lane(
                str(ln["id"]),
                np.asarray(ln["centerline"], dtype=float),
                ln.get("direction_tag", ""),
                float(ln["speed_limit"]),
                ln.get("kind", "custom"),
            )
            for ln in doc["lanes"]
        ]
        conn = {str(k): [str(x) for x in v] for k, v in doc.get("connectivity", {}).items()}
        spawns = [tuple(sp) for sp in doc.get("spawn_points", [])]
    except KeyError as exc:
        raise ParseError("missing field", field=exc.args[0]) from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    return LaneGraph(lanes, conn, spawns, doc.get("map_id", "Custom"))


def get_map(map_id):
    return build_builtin_map(map_id)


# ---------------------------------------------------------------------------
# routing


def _search(graph, start_lane, s0, dest_lane, s1, dest_xy):
    """A* over lanes from a point on ``start_lane`` to one on ``dest_lane``.

    Returns (length, lane tuple) or None. The heap orders equal-cost paths by
    their lane-id tuple, which gives the smallest-id tie-break.
    """
    start = graph.lane(start_lane)
    if start_lane == dest_lane and s1 >= s0 - 1e-9:
        return max(0.0, s1 - s0), (start_lane,)

    def h(lane_id):
        p = graph.lane(lane_id).centerline[0]
        return math.hypot(p[0] - dest_xy[0], p[1] - dest_xy[1]) * 0.999

    g0 = start.length - s0
    heap = []
    for nxt in graph.successors(start_lane):
        heapq.heappush(heap, (g0 + h(nxt), g0, (start_lane, nxt)))
    closed = set()
    while heap:
        _, g, path = heapq.heappop(heap)
        lane_id = path[-1]
        if lane_id == dest_lane:
            return g + s1, path
        if lane_id in closed:
            continue
        closed.add(lane_id)
        g2 = g + graph.lane(lane_id).length
        for nxt in graph.successors(lane_id):
            if nxt not in closed or nxt == dest_lane:
                heapq.heappush(heap, (g2 + h(nxt), g2, path + (nxt,)))
    return None


def plan_route(graph: LaneGraph, start: Sequence[float], dest: Sequence[float], spacing=1.0) -> Route:
    """Minimum-length route between two on-lane points.

    Both points must lie within 1 m of a lane centreline. Raises NoRoute when
    nothing connects them.
    """
    starts = graph.lanes_near(start)
    dests = graph.lanes_near(dest)
    if not starts:
        raise NoRoute(f"start {tuple(start)} is not on any lane")
    if not dests:
        raise NoRoute(f"destination {tuple(dest)} is not on any lane")
    best = None
    for sl, _, s0 in starts:
        for dl, _, s1 in dests:
            found = _search(graph, sl, s0, dl, s1, dest)
            if found is None:
                continue
            length, lanes = found
            key = (round(length, 9), lanes)
            if best is None or key < best[0]:
                best = (key, lanes, s0, s1)
    if best is None:
        raise NoRoute(f"no route from {tuple(start)} to {tuple(dest)}")
    _, lanes, s0, s1 = best
    return _build_route(graph, lanes, s0, s1, spacing)


def _slice(lane, s0, s1):
    pts = lane.centerline
    cum = lane.cum
    inner = pts[(cum > s0 + 1e-9) & (cum < s1 - 1e-9)]
    p0, _ = lane.point_at(s0)
    p1, _ = lane.point_at(s1)
    return np.vstack([p0, inner, p1]) if s1 > s0 else np.array([p0])


def _build_route(graph, lanes, s0, s1, spacing):
    pieces, owners = [], []
    for i, lid in enumerate(lanes):
        ln = graph.lane(lid)
        a = s0 if i == 0 else 0.0
        b = s1 if i == len(lanes) - 1 else ln.length
        piece = _slice(ln, a, b)
        if pieces and np.allclose(pieces[-1][-1], piece[0], atol=1e-9):
            piece = piece[1:]
        pieces.append(piece)
        owners.extend([lid] * len(piece))
    pts = np.vstack([p for p in pieces if len(p)])
    owners = np.array(owners, dtype=object)
    if len(pts) == 1:
        return Route(list(lanes), pts, 0.0, [lanes[0]])
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    pts, owners = pts[keep], owners[keep]
    rs, targets = geo.resample(pts, spacing)
    cum = geo.cumulative_length(pts)
    # owner of each resampled point: lane of the raw segment it falls on
    seg = np.clip(np.searchsorted(cum, targets, side="right"), 1, len(pts) - 1)
    point_lanes = [owners[i] for i in seg.tolist()]
    point_lanes[0] = lanes[0]
    return Route(list(lanes), rs, geo.polyline_length(rs), point_lanes)


def cached_route(graph, start, dest):
    key = (tuple(round(float(c), 9) for c in start), tuple(round(float(c), 9) for c in dest))
    cache = graph._route_cache
    if key not in cache:
        try:
            cache[key] = plan_route(graph, start, dest)
        except NoRoute as exc:
            cache[key] = exc
    hit = cache[key]
    if isinstance(hit, NoRoute):
        raise hit
    return hit

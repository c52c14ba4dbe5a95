"""Deterministic fixed-step multi-agent simulation on a lane graph.

AVs follow their planned route under a named policy (longitudinal control
only; lateral motion is exact path following). NPCs track their waypoint
polyline at each waypoint's expected speed and never yield to anyone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import ConfigError, InvalidScenario
from .policies import A_MAX, A_MIN, FOLLOW_GAP, FOLLOW_RANGE, STOP_SNAP, OtherAgent, PolicyView, _track, get_policy
from .road_network import Route, cached_route
from .scenario import AgentState, AVMeta, Observation, Track, validate

SHADOW_TOL = 1.5
SAME_DIRECTION = math.radians(30.0)
_SIN_SAME = math.sin(SAME_DIRECTION)
DEDUPE_DIST = 2.0
STILL_EPS = 1e-6


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    horizon: float = 90.0
    collision_distance: float = 2.0
    stationary_timeout: float = 20.0

    def __post_init__(self):
        if not 0 < self.dt <= 0.5:
            raise ConfigError(f"dt must lie in (0, 0.5], got {self.dt}")
        if self.horizon < 10:
            raise ConfigError(f"horizon must be >= 10 s, got {self.horizon}")
        if self.collision_distance <= 0 or self.stationary_timeout <= 0:
            raise ConfigError("collision_distance and stationary_timeout must be positive")


def detect_collision(scene, collision_distance=2.0):
    """First pair (by sorted ids) whose centres are closer than the threshold.

    ``scene`` maps agent id to an AgentState (or anything with ``.p``).
    """
    ids = sorted(scene)
    if len(ids) < 2:
        return None
    pts = np.array([scene[i].p for i in ids], dtype=float)
    return _first_close_pair(ids, pts, collision_distance)


def _first_close_pair(ids, pts, threshold):
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    iu, ju = np.nonzero(np.triu(d2 < threshold * threshold, k=1))
    if len(iu) == 0:
        return None
    pairs = sorted((min(ids[a], ids[b]), max(ids[a], ids[b])) for a, b in zip(iu.tolist(), ju.tolist()))
    return pairs[0]


# ---------------------------------------------------------------------------
# pairwise route geometry


def _tangents(points):
    d = np.diff(points, axis=0)
    if len(d) == 0:
        return np.array([[1.0, 0.0]])
    d = np.vstack([d, d[-1:]])
    n = np.hypot(d[:, 0], d[:, 1])
    n[n == 0] = 1.0
    return d / n[:, None]


class _Path:
    """Resampled path geometry shared by AV routes and NPC waypoint tracks."""

    def __init__(self, route, limits, target=None):
        self.route = route
        self.points = route.points
        self.cum = route.cum
        self.length = float(route.total_length)
        self.tangent = _tangents(self.points)
        self.limits = limits
        self.target = target  # NPC: expected speed per resampled point
        self._tree = None

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree


def _crossings(a, b):
    """Crossings between two paths at >= 30 degrees, as (s_a, s_b) arc pairs.

    Segment parameters are half-open so a crossing through a shared vertex is
    counted once.
    """
    pa, pb = a.points, b.points
    if len(pa) < 2 or len(pb) < 2:
        return []
    a0, da = pa[:-1], np.diff(pa, axis=0)
    b0, db = pb[:-1], np.diff(pb, axis=0)
    amin, amax = np.minimum(a0, pa[1:]), np.maximum(a0, pa[1:])
    bmin, bmax = np.minimum(b0, pb[1:]), np.maximum(b0, pb[1:])
    cand = (
        (amin[:, None, 0] <= bmax[None, :, 0])
        & (bmin[None, :, 0] <= amax[:, None, 0])
        & (amin[:, None, 1] <= bmax[None, :, 1])
        & (bmin[None, :, 1] <= amax[:, None, 1])
    )
    k, m = np.nonzero(cand)
    if len(k) == 0:
        return []
    dak, dbm = da[k], db[m]
    den = dak[:, 0] * dbm[:, 1] - dak[:, 1] * dbm[:, 0]
    la = np.hypot(dak[:, 0], dak[:, 1])
    lb = np.hypot(dbm[:, 0], dbm[:, 1])
    ok = np.abs(den) >= _SIN_SAME * la * lb
    k, m, den, dak, dbm, la, lb = k[ok], m[ok], den[ok], dak[ok], dbm[ok], la[ok], lb[ok]
    w = b0[m] - a0[k]
    t = (w[:, 0] * dbm[:, 1] - w[:, 1] * dbm[:, 0]) / den
    u = (w[:, 0] * dak[:, 1] - w[:, 1] * dak[:, 0]) / den
    hit = (t >= 0) & (t < 1) & (u >= 0) & (u < 1)
    sa = a.cum[k[hit]] + t[hit] * la[hit]
    sb = b.cum[m[hit]] + u[hit] * lb[hit]
    order = np.lexsort((sb, sa))
    out = []
    for x, y in zip(sa[order].tolist(), sb[order].tolist()):
        if out and abs(x - out[-1][0]) < DEDUPE_DIST and abs(y - out[-1][1]) < DEDUPE_DIST:
            continue
        out.append((x, y))
    return out


def _shadow(a, b):
    """Map every sample of path ``b`` onto ``a``'s arc where the two coincide."""
    dist, idx = a.tree.query(b.points)
    ta = a.tangent[idx]
    aligned = np.einsum("ij,ij->i", ta, b.tangent) > math.cos(SAME_DIRECTION)
    valid = (dist < SHADOW_TOL) & aligned
    arc = a.cum[idx] + np.einsum("ij,ij->i", b.points - a.points[idx], ta)
    return [float(x) if ok else None for x, ok in zip(arc.tolist(), valid.tolist())], valid


def _merges(b, valid, shadow):
    """Points where ``b`` joins ``a``'s path from elsewhere, as (s_a, s_b)."""
    out = []
    for r in range(1, len(valid)):
        if valid[r] and not valid[r - 1]:
            out.append((shadow[r], float(b.cum[r])))
    return out


# ---------------------------------------------------------------------------


def _route_limits(graph, route):
    limits = []
    prev = None
    for idx, lid in enumerate(route.point_lanes):
        if lid != prev:
            limits.append((float(route.cum[idx]) if idx else 0.0, graph.lane(lid).speed_limit))
            prev = lid
    return limits


def _npc_path(npc):
    raw = np.array([w.p for w in npc.waypoints], dtype=float)
    speeds = [w.v for w in npc.waypoints]
    keep = [0] + [i for i in range(1, len(raw)) if np.any(raw[i] != raw[i - 1])]
    raw = raw[keep]
    speeds = [speeds[i] for i in keep]
    if len(raw) == 1:
        route = Route([], raw.copy(), 0.0, [])
        return _Path(route, [(0.0, speeds[0])], np.array([speeds[0]]))
    pts, targets = geo.resample(raw, 1.0)
    route = Route([], pts, geo.polyline_length(pts), [])
    wp_arc = geo.cumulative_length(raw)
    nxt = np.clip(np.searchsorted(wp_arc, targets, side="right"), 0, len(raw) - 1)
    target = np.array([speeds[i] for i in nxt.tolist()])
    change = np.nonzero(np.diff(target))[0] + 1
    limits = [(0.0, float(target[0]))] + [(float(targets[k]), float(target[k])) for k in change.tolist()]
    return _Path(route, limits, target)


class _Agent:
    __slots__ = ("id", "is_av", "path", "s", "v", "a", "trigger_step", "done", "shadows", "conflicts", "meta", "memory")

    def __init__(self, aid, is_av, path, v0, trigger_step, meta=None):
        self.id = aid
        self.is_av = is_av
        self.path = path
        self.s = 0.0
        self.v = v0
        self.a = 0.0
        self.trigger_step = trigger_step
        self.done = False
        self.shadows = {}
        self.conflicts = {}
        self.meta = meta
        self.memory = {}


def _pose(agent):
    p, t = geo.point_at(agent.path.points, agent.path.cum, agent.s)
    return p, math.atan2(t[1], t[0])


def _resolve_policy(policy):
    return get_policy(policy) if isinstance(policy, str) else policy


def plan_agents(scenario, graph):
    """Build the per-agent path geometry the simulator runs on (AVs first)."""
    agents = []
    for av in scenario.avs:
        route = cached_route(graph, av.p_start, av.p_dest)
        path = _Path(route, _route_limits(graph, route))
        agents.append(_Agent(av.id, True, path, 0.0, None, AVMeta(float(av.t_trigger), tuple(map(float, av.p_dest)))))
    for npc in scenario.npcs:
        path = _npc_path(npc)
        agents.append(_Agent(npc.id, False, path, float(npc.waypoints[0].v), 0))
    agents.sort(key=lambda ag: ag.id)
    for a in agents:
        for b in agents:
            if a is b:
                continue
            shadow, valid = _shadow(a.path, b.path)
            if valid.any():
                a.shadows[b.id] = shadow
            if a.is_av:
                found = _crossings(a.path, b.path) + _merges(b.path, valid, shadow)
                if found:
                    a.conflicts[b.id] = sorted(found)
    return agents


def simulate(scenario, graph, policy="conservative_yield", cfg=None):
    """Run one scenario and return its Observation.

    Stops at the horizon, at the first collision (flag set, the colliding
    scene is the last one), when every agent has been still for
    ``stationary_timeout`` after all triggers fired, or when every agent has
    finished its route.
    """
    cfg = cfg or SimConfig()
    violations = validate(scenario, graph)
    if violations:
        raise InvalidScenario(violations)
    decide = _resolve_policy(policy)
    dt = cfg.dt
    agents = plan_agents(scenario, graph)
    for ag in agents:
        if ag.is_av:
            ag.trigger_step = int(math.ceil(ag.meta.t_trigger / dt - 1e-9))
    n_steps = int(math.floor(cfg.horizon / dt + 1e-9))
    n = len(agents)
    ids = [ag.id for ag in agents]
    P = np.zeros((n_steps + 1, n, 2))
    TH = np.zeros((n_steps + 1, n))
    V = np.zeros((n_steps + 1, n))
    A = np.zeros((n_steps + 1, n))

    def record(k):
        for col, ag in enumerate(agents):
            p, th = _pose(ag)
            P[k, col] = p
            TH[k, col] = th
            V[k, col] = ag.v
            A[k, col] = ag.a

    record(0)
    last_trigger = max((ag.trigger_step for ag in agents), default=0)
    still_needed = int(math.ceil(cfg.stationary_timeout / dt - 1e-9))
    still = 0
    collided = None
    last = n_steps
    for k in range(n_steps):
        t = k * dt
        snapshot = []
        for col, ag in enumerate(agents):
            state = AgentState((P[k, col, 0], P[k, col, 1]), TH[k, col], ag.v, ag.a)
            active = (not ag.done) and (not ag.is_av or k >= ag.trigger_step)
            yielding = frozenset(j for j, _ in ag.memory.get("yield", ()))
            snapshot.append(OtherAgent(ag.id, state, ag.path.route, ag.s, ag.is_av, active, ag.done, yielding, ag.path.limits))
        accels = []
        for col, ag in enumerate(agents):
            if ag.done or (ag.is_av and k < ag.trigger_step):
                accels.append(0.0)
                continue
            if ag.is_av:
                view = PolicyView(
                    ag.id, snapshot[col].state, ag.path.route, ag.s, t, dt, snapshot, ag.conflicts, ag.shadows, ag.path.limits, ag.memory
                )
                cmd = decide(view)
                accels.append(min(max(cmd.target_accel, A_MIN), A_MAX))
            else:
                accels.append(_npc_accel(ag, snapshot, dt))
        for ag, acc in zip(agents, accels):
            if ag.done or (ag.is_av and k < ag.trigger_step):
                ag.a = 0.0
                continue
            v_new = max(0.0, ag.v + acc * dt)
            ag.a = (v_new - ag.v) / dt
            ag.v = v_new
            ag.s = min(ag.s + v_new * dt, ag.path.length)
            if ag.v == 0.0 and ag.path.length - ag.s < STOP_SNAP + 1e-9:
                ag.done = True
        record(k + 1)
        collided = _first_close_pair(ids, P[k + 1], cfg.collision_distance)
        if collided is not None:
            last = k + 1
            break
        if all(ag.done for ag in agents):
            last = k + 1
            break
        if k + 1 >= last_trigger and np.all(V[k + 1] < STILL_EPS):
            still += 1
            if still >= still_needed:
                last = k + 1
                break
        else:
            still = 0

    tracks = {
        ag.id: Track(P[: last + 1, c].copy(), TH[: last + 1, c].copy(), V[: last + 1, c].copy(), A[: last + 1, c].copy())
        for c, ag in enumerate(agents)
    }
    meta = {ag.id: ag.meta for ag in agents if ag.is_av}
    return Observation(dt, tracks, meta, collided is not None, collided, graph.map_id)


def _npc_accel(ag, snapshot, dt):
    path = ag.path
    s, v = ag.s, ag.v
    idx = min(int(s), len(path.target) - 1)
    rem = path.length - s
    v_des = min(float(path.target[idx]), math.sqrt(2 * 3.0 * max(rem, 0.0)))
    d_stop = rem
    for other in snapshot:
        shadow = ag.shadows.get(other.id)
        if not shadow:
            continue
        m = shadow[min(max(int(other.s + 0.5), 0), len(shadow) - 1)]
        if m is None:
            continue
        ahead = m - s
        if 0.5 < ahead < FOLLOW_RANGE:
            gap = ahead - FOLLOW_GAP
            if gap <= 0:
                d_stop = min(d_stop, 0.0)
            else:
                v_des = min(v_des, math.sqrt(other.state.v ** 2 + 6.0 * gap))
    return _track(v, v_des, d_stop, dt)

"""Wait-for-graph deadlock oracle.

An edge i -> j exists at time t when AV i has been stationary over the whole
detection window and the motion i intended before stopping conflicts in
space and time with the motion predicted for j. A directed cycle in that
graph is a deadlock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CollidedObservation, ConfigError, WindowOutOfRange
from .geometry import angle_diff
from .prediction import R_DEFAULT, Q_DEFAULT, V_MOVE, intent_from_track, last_move_index
from .road_network import MAP_IDS, get_map

PASS, FAIL = "Pass", "Fail"
SAME_LANE_HEADING = math.radians(30.0)


@dataclass(frozen=True)
class OracleConfig:
    eps_v: float = 0.01
    delta_t: float = 5.0
    d_eps: float = 2.5
    tau_eps: float = 2.0
    horizon: float = 5.0
    scan_dt: float = 1.0
    v_move: float = V_MOVE

    def __post_init__(self):
        for name in ("eps_v", "delta_t", "d_eps", "tau_eps", "horizon", "scan_dt", "v_move"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"oracle {name} must be positive")


@dataclass(frozen=True)
class WaitForGraph:
    t: float
    vertices: frozenset
    edges: frozenset  # of (i, j)

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self edge on {i}")
            if i not in self.vertices or j not in self.vertices:
                raise ValueError(f"edge ({i}, {j}) leaves the vertex set")

    def successors(self, v):
        return sorted(j for i, j in self.edges if i == v)

    def to_dict(self):
        return {"t": round(self.t, 9), "edges": [list(e) for e in sorted(self.edges)]}


@dataclass
class OracleVerdict:
    outcome: str
    cycle: Optional[list] = None
    t_detect: Optional[float] = None
    graphs: list = field(default_factory=list)

    @property
    def failed(self):
        return self.outcome == FAIL

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "cycle": list(self.cycle) if self.cycle else None,
            "t_detect": None if self.t_detect is None else round(self.t_detect, 9),
            "graphs": [g.to_dict() for g in self.graphs],
        }


# ---------------------------------------------------------------------------
# predicates


def _window(obs, t, cfg):
    last = (obs.n_scenes - 1) * obs.dt
    if t < cfg.delta_t - 1e-9 or t > last + 1e-9:
        raise WindowOutOfRange(f"t={t} outside [{cfg.delta_t}, {last}]")
    return obs.index_of(t - cfg.delta_t), obs.index_of(t)


def phi_stop(obs, av, t, cfg=None):
    """True when ``av`` was slower than eps_v at every sample of [t - delta_t, t].

    A window that reaches back before the AV's trigger time never counts: an
    AV that has not started yet is parked, not waiting.
    """
    cfg = cfg or OracleConfig()
    track = obs.track(av)
    k0, k1 = _window(obs, t, cfg)
    meta = obs.av_meta.get(av)
    if meta is not None and t - cfg.delta_t < meta.t_trigger - 1e-9:
        return False
    return bool(np.all(track.v[k0 : k1 + 1] < cfg.eps_v))


def trajectories_conflict(a, b, cfg=None):
    """Some pair of samples is within tau_eps in time and d_eps in space."""
    cfg = cfg or OracleConfig()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("trajectories must be nonempty")
    close_t = np.abs(a.times[:, None] - b.times[None, :]) <= cfg.tau_eps
    d = a.points[:, None, :] - b.points[None, :, :]
    close_p = np.einsum("ijk,ijk->ij", d, d) <= cfg.d_eps * cfg.d_eps
    return bool(np.any(close_t & close_p))


class _Context:
    """Per-observation caches shared by all edge checks of one evaluation."""

    def __init__(self, obs, cfg, graph):
        self.obs = obs
        self.cfg = cfg
        self.graph = graph if graph is not None else _builtin_graph(obs.map_id)
        self._intents = {}

    def intent(self, agent, t):
        tr = self.obs.track(agent)
        dt = self.obs.dt
        k = min(self.obs.index_of(t), len(tr) - 1)
        k_move = last_move_index(tr.v, k, dt, self.cfg.delta_t, self.cfg.v_move)
        key = (agent, k_move) if k_move is not None else (agent, "still", k)
        hit = self._intents.get(key)
        if hit is None:
            hit = intent_from_track(tr, dt, k, self.cfg.delta_t, self.cfg.horizon, agent, self.cfg.v_move, Q_DEFAULT, R_DEFAULT)
            self._intents[key] = hit
        return hit

    def same_lane(self, i, j, t):
        k = self.obs.index_of(t)
        ti, tj = self.obs.track(i), self.obs.track(j)
        if angle_diff(ti.theta[k], tj.theta[k]) >= SAME_LANE_HEADING:
            return False
        if self.graph is not None:
            li, lj = self.graph.nearest_lane_ids([ti.p[k], tj.p[k]])
            return li == lj
        # no map: same direction and laterally within half a lane
        th = ti.theta[k]
        off = tj.p[k] - ti.p[k]
        return abs(-math.sin(th) * off[0] + math.cos(th) * off[1]) < 1.75


def _builtin_graph(map_id):
    return get_map(map_id) if map_id in MAP_IDS else None


def _edge(ctx, i, j, t):
    if not phi_stop(ctx.obs, i, t, ctx.cfg):
        return False
    if ctx.same_lane(i, j, t):
        return False
    return trajectories_conflict(ctx.intent(i, t), ctx.intent(j, t), ctx.cfg)


def wait_for_edge(obs, av_i, av_j, t, cfg=None, graph=None):
    if av_i == av_j:
        raise ValueError("wait-for edges need two distinct AVs")
    return _edge(_Context(obs, cfg or OracleConfig(), graph), av_i, av_j, t)


def _graph_at(ctx, t):
    avs = ctx.obs.av_ids
    stopped = [i for i in avs if phi_stop(ctx.obs, i, t, ctx.cfg)]
    edges = set()
    for i in stopped:
        for j in avs:
            if i != j and not ctx.same_lane(i, j, t) and trajectories_conflict(ctx.intent(i, t), ctx.intent(j, t), ctx.cfg):
                edges.add((i, j))
    return WaitForGraph(float(t), frozenset(avs), frozenset(edges))


def build_wait_for_graph(obs, t, cfg=None, graph=None):
    return _graph_at(_Context(obs, cfg or OracleConfig(), graph), t)


# ---------------------------------------------------------------------------
# cycles


def _cyclic_vertices(adj, vertices):
    """Vertices lying on some directed cycle (member of a nontrivial SCC)."""
    index, low, on, stack, out = {}, {}, set(), [], set()
    counter = [0]

    def strong(v):
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on.add(v)
        for w in adj.get(v, ()):
            if w not in index:
                strong(w)
                low[v] = min(low[v], low[w])
            elif w in on:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1:
                out.update(comp)

    for v in sorted(vertices):
        if v not in index:
            strong(v)
    return out


def detect_cycle(g):
    """A directed cycle of ``g`` or None.

    Among all simple cycles the one whose sorted vertex list is
    lexicographically smallest is returned, rotated to start at its
    smallest vertex and listed in edge order.
    """
    adj = {}
    for i, j in g.edges:
        adj.setdefault(i, []).append(j)
    for v in adj:
        adj[v].sort()
    on_cycle = _cyclic_vertices(adj, set(g.vertices) | {v for e in g.edges for v in e})
    if not on_cycle:
        return None
    root = min(on_cycle)
    best = None
    # every cycle through root stays within root's SCC; enumerate them
    path, seen = [root], {root}

    def dfs(v):
        nonlocal best
        for w in adj.get(v, ()):
            if w == root:
                key = sorted(path)
                if best is None or key < best[0]:
                    best = (key, list(path))
            elif w not in seen and w in on_cycle and w > root:
                seen.add(w)
                path.append(w)
                dfs(w)
                path.pop()
                seen.discard(w)

    dfs(root)
    return best[1]


# ---------------------------------------------------------------------------


def scan_times(obs, cfg):
    last = (obs.n_scenes - 1) * obs.dt
    out = []
    m = 0
    while True:
        t = cfg.delta_t + m * cfg.scan_dt
        if t > last + 1e-9:
            return out
        out.append(round(t, 9))
        m += 1


def evaluate(obs, cfg=None, graph=None):
    """Scan the observation for the earliest wait-for cycle."""
    cfg = cfg or OracleConfig()
    if obs.collision_flag:
        raise CollidedObservation(f"collision between {obs.collided_pair}")
    ctx = _Context(obs, cfg, graph)
    graphs = []
    for t in scan_times(obs, cfg):
        g = _graph_at(ctx, t)
        if not g.edges:
            continue
        graphs.append(g)
        cyc = detect_cycle(g)
        if cyc is not None:
            return OracleVerdict(FAIL, cyc, t, graphs)
    return OracleVerdict(PASS, None, None, graphs)

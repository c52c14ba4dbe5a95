"""Scenario and observation value types, validation, and JSON round-tripping."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ParseError, UnknownAgent

MIN_SPAWN_GAP = 5.0
MAX_SPEED = 30.0
DEFAULT_MAX_AVS = 6
SPAWN_TOL = 1.0


@dataclass(frozen=True)
class AVSpec:
    id: int
    p_start: tuple
    p_dest: tuple
    t_trigger: float


@dataclass(frozen=True)
class Waypoint:
    p: tuple
    theta: float
    v: float


@dataclass(frozen=True)
class NpcSpec:
    id: int
    waypoints: tuple


@dataclass(frozen=True)
class Scenario:
    map_id: str
    avs: tuple
    npcs: tuple = ()
    rng_seed: int = 0

    def with_seed(self, seed):
        return replace(self, rng_seed=int(seed))

    def content_key(self):
        """Hashable identity ignoring rng_seed."""
        return (self.map_id, self.avs, self.npcs)

    @property
    def agent_ids(self):
        return [a.id for a in self.avs] + [n.id for n in self.npcs]


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""

    def __str__(self):
        return f"{self.code}: {self.detail}" if self.detail else self.code


def validate(scenario, graph=None, max_avs=DEFAULT_MAX_AVS):
    """Every invariant violation of ``scenario``; an empty list means valid."""
    out = []
    n = len(scenario.avs)
    if n < 2:
        out.append(Violation("TooFewAVs", f"{n} < 2"))
    if n > max_avs:
        out.append(Violation("TooManyAVs", f"{n} > {max_avs}"))
    ids = scenario.agent_ids
    if len(set(ids)) != len(ids):
        out.append(Violation("DuplicateId"))
    if graph is not None and scenario.map_id != graph.map_id:
        out.append(Violation("MapMismatch", f"{scenario.map_id} vs {graph.map_id}"))

    starts = []
    for av in scenario.avs:
        if not av.t_trigger >= 0:
            out.append(Violation("NegativeTrigger", f"AV {av.id}"))
        if tuple(av.p_start) == tuple(av.p_dest):
            out.append(Violation("StartEqualsDest", f"AV {av.id}"))
        if graph is not None and graph.spawn_points:
            d = min(math.dist(av.p_start, sp[:2]) for sp in graph.spawn_points)
            if d > SPAWN_TOL:
                out.append(Violation("OffSpawn", f"AV {av.id} is {d:.2f} m from any spawn"))
        starts.append((av.id, av.p_start))
    for npc in scenario.npcs:
        if len(npc.waypoints) < 2:
            out.append(Violation("TooFewWaypoints", f"NPC {npc.id}"))
        for w in npc.waypoints:
            if not 0.0 <= w.v <= MAX_SPEED:
                out.append(Violation("SpeedOutOfRange", f"NPC {npc.id} v={w.v}"))
                break
        if npc.waypoints:
            starts.append((npc.id, npc.waypoints[0].p))
    for i in range(len(starts)):
        for j in range(i + 1, len(starts)):
            if math.dist(starts[i][1], starts[j][1]) < MIN_SPAWN_GAP:
                out.append(Violation("SpawnOverlap", f"agents {starts[i][0]} and {starts[j][0]}"))
    return out


@dataclass(frozen=True)
class AgentState:
    p: tuple
    theta: float
    v: float
    a: float


@dataclass(frozen=True)
class AVMeta:
    t_trigger: float
    p_dest: tuple


@dataclass(eq=False)
class Track:
    """Per-agent time series; row k is scene k."""

    p: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __len__(self):
        return len(self.v)

    def state(self, k):
        return AgentState(
            (float(self.p[k, 0]), float(self.p[k, 1])),
            float(self.theta[k]),
            float(self.v[k]),
            float(self.a[k]),
        )

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in ("p", "theta", "v", "a"))


@dataclass(eq=False)
class Observation:
    dt: float
    tracks: dict  # agent id -> Track
    av_meta: dict = field(default_factory=dict)  # AV id -> AVMeta
    collision_flag: bool = False
    collided_pair: Optional[tuple] = None
    map_id: Optional[str] = None

    @property
    def n_scenes(self):
        return len(next(iter(self.tracks.values()))) if self.tracks else 0

    @property
    def times(self):
        return np.arange(self.n_scenes) * self.dt

    @property
    def av_ids(self):
        return sorted(self.av_meta)

    @property
    def agent_ids(self):
        return sorted(self.tracks)

    def track(self, agent):
        try:
            return self.tracks[agent]
        except KeyError:
            raise UnknownAgent(f"agent {agent!r} not in observation") from None

    def scene(self, k):
        return {aid: tr.state(k) for aid, tr in sorted(self.tracks.items())}

    @property
    def scenes(self):
        return [self.scene(k) for k in range(self.n_scenes)]

    def index_of(self, t):
        return int(round(t / self.dt))

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.collision_flag == other.collision_flag
            and self.collided_pair == other.collided_pair
            and self.map_id == other.map_id
            and self.av_meta == other.av_meta
            and sorted(self.tracks) == sorted(other.tracks)
            and all(self.tracks[k] == other.tracks[k] for k in self.tracks)
        )


def av_trajectory(obs, av):
    """Ordered (t, p, v) samples of one agent with stationary stretches collapsed.

    A run of identical consecutive positions contributes one sample carrying
    the first timestamp of the run.
    """
    tr = obs.track(av)
    if len(tr) == 0:
        return []
    p = tr.p
    keep = np.ones(len(p), dtype=bool)
    keep[1:] = np.any(p[1:] != p[:-1], axis=1)
    idx = np.nonzero(keep)[0]
    return [(float(k * obs.dt), (float(p[k, 0]), float(p[k, 1])), float(tr.v[k])) for k in idx]


def trajectory_points(obs, av):
    """Collapsed trajectory as arrays (times, points, speeds)."""
    tr = obs.track(av)
    p = tr.p
    keep = np.ones(len(p), dtype=bool)
    keep[1:] = np.any(p[1:] != p[:-1], axis=1)
    idx = np.nonzero(keep)[0]
    return idx * obs.dt, p[idx], tr.v[idx]


# ---------------------------------------------------------------------------
# JSON


def _pt(x):
    return [float(x[0]), float(x[1])]


def scenario_to_dict(s):
    return {
        "map_id": s.map_id,
        "rng_seed": int(s.rng_seed),
        "avs": [
            {"id": a.id, "p_start": _pt(a.p_start), "p_dest": _pt(a.p_dest), "t_trigger": float(a.t_trigger)}
            for a in s.avs
        ],
        "npcs": [
            {"id": n.id, "waypoints": [{"p": _pt(w.p), "theta": float(w.theta), "v": float(w.v)} for w in n.waypoints]}
            for n in s.npcs
        ],
    }


def _req(d, key, where):
    if not isinstance(d, dict):
        raise ParseError("expected an object", field=where)
    if key not in d:
        raise ParseError("missing field", field=f"{where}.{key}" if where else key)
    return d[key]


def _point(v, where):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ParseError("expected [x, y]", field=where)
    try:
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise ParseError("non-numeric coordinate", field=where) from None


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError("expected a number", field=where)
    return float(v)


def scenario_from_dict(d):
    avs = []
    for i, a in enumerate(_req(d, "avs", "")):
        w = f"avs[{i}]"
        avs.append(
            AVSpec(
                int(_req(a, "id", w)),
                _point(_req(a, "p_start", w), f"{w}.p_start"),
                _point(_req(a, "p_dest", w), f"{w}.p_dest"),
                _num(_req(a, "t_trigger", w), f"{w}.t_trigger"),
            )
        )
    npcs = []
    for i, n in enumerate(d.get("npcs", [])):
        w = f"npcs[{i}]"
        wps = []
        for j, wp in enumerate(_req(n, "waypoints", w)):
            ww = f"{w}.waypoints[{j}]"
            wps.append(
                Waypoint(_point(_req(wp, "p", ww), f"{ww}.p"), _num(_req(wp, "theta", ww), f"{ww}.theta"), _num(_req(wp, "v", ww), f"{ww}.v"))
            )
        npcs.append(NpcSpec(int(_req(n, "id", w)), tuple(wps)))
    return Scenario(str(_req(d, "map_id", "")), tuple(avs), tuple(npcs), int(d.get("rng_seed", 0)))


def observation_to_dict(obs):
    out = {
        "map_id": obs.map_id,
        "dt": obs.dt,
        "collision_flag": bool(obs.collision_flag),
        "collided_pair": list(obs.collided_pair) if obs.collided_pair else None,
        "avs": {str(k): {"t_trigger": m.t_trigger, "p_dest": _pt(m.p_dest)} for k, m in sorted(obs.av_meta.items())},
        "agents": {},
    }
    for aid, tr in sorted(obs.tracks.items()):
        out["agents"][str(aid)] = {
            "p": tr.p.tolist(),
            "theta": tr.theta.tolist(),
            "v": tr.v.tolist(),
            "a": tr.a.tolist(),
        }
    return out


def observation_from_dict(d):
    dt = _num(_req(d, "dt", ""), "dt")
    if dt <= 0:
        raise ParseError("must be positive", field="dt")
    tracks = {}
    n = None
    for key, t in _req(d, "agents", "").items():
        w = f"agents.{key}"
        try:
            p = np.asarray(_req(t, "p", w), dtype=float).reshape(-1, 2)
            tr = Track(
                p,
                np.asarray(_req(t, "theta", w), dtype=float),
                np.asarray(_req(t, "v", w), dtype=float),
                np.asarray(_req(t, "a", w), dtype=float),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), field=w) from None
        if not (len(tr.p) == len(tr.theta) == len(tr.v) == len(tr.a)):
            raise ParseError("series lengths differ", field=w)
        if n is not None and len(tr) != n:
            raise ParseError("scene count differs between agents", field=w)
        n = len(tr)
        tracks[int(key)] = tr
    meta = {}
    for key, m in d.get("avs", {}).items():
        w = f"avs.{key}"
        meta[int(key)] = AVMeta(_num(_req(m, "t_trigger", w), f"{w}.t_trigger"), _point(_req(m, "p_dest", w), f"{w}.p_dest"))
    pair = d.get("collided_pair")
    map_id = d.get("map_id")
    return Observation(dt, tracks, meta, bool(d.get("collision_flag", False)), tuple(pair) if pair else None, map_id)


def _loads(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg}) at line {exc.lineno} column {exc.colno}") from exc


def dumps_scenario(s, indent=2):
    return json.dumps(scenario_to_dict(s), indent=indent)


def loads_scenario(text):
    return scenario_from_dict(_loads(text))


def dumps_observation(obs, indent=None):
    return json.dumps(observation_to_dict(obs), indent=indent)


def loads_observation(text):
    return observation_from_dict(_loads(text))

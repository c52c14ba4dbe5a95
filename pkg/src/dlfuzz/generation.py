"""Conflict-aware scenario mutation.

Temporal mutation shifts trigger times so that AVs sharing a conflict region
arrive there together. Spatial mutation swaps in a new AV whose planned route
crosses the others as much as possible (scored offline on planned routes),
and jitters NPC waypoints away from the conflict regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NoFeasibleCandidate, NoRoute
from .feedback import pair_crossings, score_from_counts
from .road_network import cached_route
from .scenario import MIN_SPAWN_GAP, AVSpec, NpcSpec, Waypoint, validate

TEMPORAL, SPATIAL, NONE = "temporal", "spatial", "none"
REVERT_RADIUS = 10.0
MAX_ATTEMPTS = 10


@dataclass(frozen=True)
class GenConfig:
    n_a: int = 6
    n_local: int = 20
    trigger_lo: float = 0.0
    trigger_hi: float = 30.0
    jitter_pos: float = 2.0
    jitter_speed: float = 2.0
    enable_temporal: bool = True
    enable_spatial: bool = True

    def __post_init__(self):
        if self.n_a < 3:
            raise ConfigError("n_a must be at least 3")
        if self.n_local < 1:
            raise ConfigError("n_local must be at least 1")
        if not 0 <= self.trigger_lo <= self.trigger_hi:
            raise ConfigError("trigger bounds must satisfy 0 <= lo <= hi")
        if not (self.enable_temporal or self.enable_spatial):
            raise ConfigError("at least one mutation operator must be enabled")


def new_seed(rng):
    return int(rng.integers(0, 2**63 - 1))


# ---------------------------------------------------------------------------
# temporal


def temporal_mutation(avs, regions, rng, cfg=None):
    """Pull the trigger times of AVs sharing a region toward a common arrival.

    Returns None when there is no region to work on.
    """
    cfg = cfg or GenConfig()
    if not regions:
        return None
    region = regions[int(rng.integers(len(regions)))]
    trig = {a.id: a.t_trigger for a in avs}
    order = [int(x) for x in rng.permutation(sorted(region.involved))]
    for i, j in zip(order[0::2], order[1::2]):
        if i not in trig or j not in trig:
            continue
        delta = region.arrivals[i][0] - region.arrivals[j][0]
        ti = max(0.0, trig[i] - delta / 2.0)
        tj = max(0.0, trig[j] + delta / 2.0)
        trig[i] = min(max(ti, cfg.trigger_lo), cfg.trigger_hi)
        trig[j] = min(max(tj, cfg.trigger_lo), cfg.trigger_hi)
    return tuple(replace(a, t_trigger=float(trig[a.id])) for a in avs)


# ---------------------------------------------------------------------------
# spatial

_PAIR_CACHE = {}


def _route_key(av):
    return (tuple(map(float, av.p_start)), tuple(map(float, av.p_dest)))


def _pair_count(graph, ka, kb):
    key = (id(graph), ka, kb) if ka <= kb else (id(graph), kb, ka)
    hit = _PAIR_CACHE.get(key)
    if hit is None:
        ra = cached_route(graph, *ka)
        rb = cached_route(graph, *kb)
        hit = len(pair_crossings(ra.points, rb.points))
        if len(_PAIR_CACHE) > 200_000:
            _PAIR_CACHE.clear()
        _PAIR_CACHE[key] = hit
    return hit


def estimate_spatial_score_offline(graph, avs):
    """Spatial score of the AVs' planned routes (1 m resampling, no simulation)."""
    keys = [_route_key(a) for a in avs]
    counts = [len(cached_route(graph, *k).points) - 1 for k in keys]
    raw = 0
    for x in range(len(keys)):
        for y in range(x + 1, len(keys)):
            raw += _pair_count(graph, keys[x], keys[y])
    return score_from_counts(raw, counts)


def _free_spawns(graph, taken):
    out = []
    for sp in graph.spawn_points:
        p = (float(sp[0]), float(sp[1]))
        if all(math.dist(p, q) >= MIN_SPAWN_GAP for q in taken):
            out.append(p)
    return out


def _next_id(used):
    k = 1
    while k in used:
        k += 1
    return k


def spatial_mutation(avs, npcs, graph, regions, rng, cfg=None):
    """Drop some AVs when at capacity, add the most route-crossing candidate, jitter NPCs."""
    cfg = cfg or GenConfig()
    avs = list(avs)
    if len(avs) >= cfg.n_a:
        size = int(rng.integers(1, cfg.n_a - 2 + 1))
        drop = set(int(x) for x in rng.choice(len(avs), size=size, replace=False))
        avs = [a for k, a in enumerate(avs) if k not in drop]
    taken = [a.p_start for a in avs] + [n.waypoints[0].p for n in npcs if n.waypoints]
    spawns = _free_spawns(graph, taken)
    used = {a.id for a in avs} | {n.id for n in npcs}
    cid = _next_id(used)
    best, best_score = None, math.inf
    draws = 0
    attempts = 0
    while draws < cfg.n_local + 1:
        attempts += 1
        if attempts > 5 * cfg.n_local or not spawns:
            break
        start = spawns[int(rng.integers(len(spawns)))]
        dests = graph.reachable_destinations(start)
        if not dests:
            continue
        dest = dests[int(rng.integers(len(dests)))]
        trig = float(rng.uniform(cfg.trigger_lo, cfg.trigger_hi))
        cand = AVSpec(cid, start, tuple(map(float, dest)), trig)
        try:
            score = estimate_spatial_score_offline(graph, avs + [cand])
        except NoRoute:
            continue
        draws += 1
        if score < best_score:
            best, best_score = cand, score
    if best is None:
        raise NoFeasibleCandidate("no routable candidate AV found")
    if len(avs) < cfg.n_a:
        avs.append(best)
    return tuple(avs), waypoint_mutator(npcs, regions, graph, rng, cfg)


def waypoint_mutator(npcs, regions, graph, rng, cfg=None):
    """Jitter NPC waypoints along their lanes, never near a conflict region."""
    cfg = cfg or GenConfig()
    centres = [r.point for r in regions]

    def near(p):
        return any(math.dist(p, c) < REVERT_RADIUS for c in centres)

    out = []
    for npc in npcs:
        if npc.waypoints and all(near(w.p) for w in npc.waypoints):
            out.append(npc)
            continue
        wps = []
        for w in npc.waypoints:
            r = cfg.jitter_pos * math.sqrt(float(rng.random()))
            ang = float(rng.uniform(0.0, 2.0 * math.pi))
            dv = float(rng.uniform(-cfg.jitter_speed, cfg.jitter_speed))
            lane_id, _, _ = graph.nearest_lane(w.p)
            lane = graph.lane(lane_id)
            _, s = lane.project((w.p[0] + r * math.cos(ang), w.p[1] + r * math.sin(ang)))
            p, tan = lane.point_at(s)
            p = (float(p[0]), float(p[1]))
            if near(p):
                wps.append(w)
                continue
            v = min(max(w.v + dv, 0.0), lane.speed_limit)
            wps.append(Waypoint(p, math.atan2(tan[1], tan[0]), v))
        out.append(NpcSpec(npc.id, tuple(wps)))
    return tuple(out)


# ---------------------------------------------------------------------------


def mutate(scenario, phi, regions, graph, rng, cfg=None):
    """One generation step; returns (scenario, operator name)."""
    cfg = cfg or GenConfig()
    temporal = temporal_mutation(scenario.avs, regions, rng, cfg) if cfg.enable_temporal else None
    if cfg.enable_spatial and (temporal is None or float(rng.random()) < phi):
        op = SPATIAL
    elif temporal is not None:
        op = TEMPORAL
    else:
        return scenario.with_seed(new_seed(rng)), NONE
    for attempt in range(MAX_ATTEMPTS):
        if op == TEMPORAL:
            avs = temporal if attempt == 0 else temporal_mutation(scenario.avs, regions, rng, cfg)
            npcs = scenario.npcs
        else:
            try:
                avs, npcs = spatial_mutation(scenario.avs, scenario.npcs, graph, regions, rng, cfg)
            except NoFeasibleCandidate:
                continue
        child = replace(scenario, avs=tuple(avs), npcs=tuple(npcs), rng_seed=new_seed(rng))
        if not validate(child, graph, max_avs=cfg.n_a):
            return child, op
    return scenario.with_seed(new_seed(rng)), NONE


def generate(scenario, phi, regions, graph, rng, cfg=None):
    return mutate(scenario, phi, regions, graph, rng, cfg)[0]


def make_rng(seed):
    return np.random.default_rng(seed)

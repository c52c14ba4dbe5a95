"""Corpus-driven fuzzing campaign and its random-sampling baseline."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DlfuzzError, EmptyCorpus, InitExhausted
from .feedback import ALPHA, N_TI, feedback
from .generation import GenConfig, make_rng, mutate, new_seed
from .oracle import FAIL, PASS, OracleConfig, OracleVerdict, evaluate, phi_stop, scan_times
from .road_network import MAP_IDS, cached_route, get_map
from .scenario import AVSpec, NpcSpec, Scenario, Waypoint, dumps_observation, scenario_to_dict, validate
from .simulator import SimConfig, simulate

log = logging.getLogger(__name__)

STCLOCKER, RANDOM_BASELINE = "stclocker", "random_baseline"
WAITFOR, NAIVE_TIMER = "waitfor", "naive_timer"
SELECTION_FLOOR = 0.05
NPC_ID_BASE = 101
NPC_END_TRIM = 10.0  # NPC paths stop this far before an AV goal point
NPC_WAYPOINT_STEP = 10.0
NPC_MIN_SPEED = 3.0
ARRIVED_DIST = 3.0
STAGES = ("sim", "oracle", "feedback", "mutation")


@dataclass(frozen=True)
class CampaignConfig:
    map_id: str = "M1"
    policy: str = "conservative_yield"
    k_init: int = 8
    iterations: Optional[int] = 150
    wall_clock: Optional[float] = None
    mode: str = STCLOCKER
    oracle: str = WAITFOR
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    oracle_cfg: OracleConfig = field(default_factory=OracleConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    alpha: float = ALPHA
    n_ti: float = N_TI

    def __post_init__(self):
        if (self.iterations is None) == (self.wall_clock is None):
            raise ConfigError("set exactly one of iterations and wall_clock")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.wall_clock is not None and self.wall_clock < 0:
            raise ConfigError("wall_clock must be >= 0")
        if self.k_init < 1:
            raise ConfigError("k_init must be >= 1")
        if self.mode not in (STCLOCKER, RANDOM_BASELINE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.oracle not in (WAITFOR, NAIVE_TIMER):
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.map_id not in MAP_IDS:
            raise ConfigError(f"unknown map {self.map_id!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.n_ti <= 0:
            raise ConfigError("n_ti must be positive")


@dataclass
class CorpusEntry:
    entry_id: int
    scenario: Scenario
    phi: float
    spatial: float
    temporal: float
    regions: list
    lineage: Optional[int] = None
    obs_digest: str = ""


@dataclass
class IterationRecord:
    iteration: int
    scenario_id: str
    operator: str
    verdict: str
    phi_spatial: Optional[float] = None
    phi_temporal: Optional[float] = None
    phi: Optional[float] = None
    accepted: bool = False
    lineage: Optional[int] = None
    wall_ms: dict = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))


@dataclass
class CampaignReport:
    config: CampaignConfig
    dls: list = field(default_factory=list)  # (scenario_id, Scenario, OracleVerdict)
    records: list = field(default_factory=list)
    corpus: list = field(default_factory=list)
    collisions: int = 0
    errors: int = 0
    fail_count: int = 0
    stage_ms: dict = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))

    @property
    def iterations(self):
        return len(self.records)

    def to_dict(self):
        """Deterministic summary; wall-clock data is kept out on purpose."""
        c = self.config
        return {
            "config": {
                "map_id": c.map_id,
                "policy": c.policy,
                "mode": c.mode,
                "oracle": c.oracle,
                "seed": c.seed,
                "k_init": c.k_init,
                "iterations": c.iterations,
                "wall_clock": c.wall_clock,
                "sim": vars_of(c.sim),
                "oracle_cfg": vars_of(c.oracle_cfg),
                "gen": vars_of(c.gen),
                "alpha": c.alpha,
                "n_ti": c.n_ti,
            },
            "iterations": self.iterations,
            "dls_count": len(self.dls),
            "fail_count": self.fail_count,
            "collisions": self.collisions,
            "errors": self.errors,
            "dls": [
                {"scenario_id": sid, "scenario": scenario_to_dict(s), "verdict": v.to_dict()} for sid, s, v in self.dls
            ],
            "log": [
                {
                    "iteration": r.iteration,
                    "scenario_id": r.scenario_id,
                    "operator": r.operator,
                    "verdict": r.verdict,
                    "phi_spatial": r.phi_spatial,
                    "phi_temporal": r.phi_temporal,
                    "phi": r.phi,
                    "accepted": r.accepted,
                    "lineage": r.lineage,
                }
                for r in self.records
            ],
            "corpus": [{"entry_id": e.entry_id, "phi": e.phi, "lineage": e.lineage} for e in self.corpus],
        }


def vars_of(cfg):
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def scenario_id(s):
    text = json.dumps(scenario_to_dict(s), sort_keys=True)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# random scenarios


def _npc_for(graph, start, dest, nid, rng):
    route = cached_route(graph, start, dest)
    end = route.total_length - NPC_END_TRIM
    if end < NPC_WAYPOINT_STEP:
        return None
    arcs = list(np.arange(0.0, end, NPC_WAYPOINT_STEP)) + [end]
    wps = []
    for s in arcs:
        p, tan = route.point_at(s)
        k = min(int(round(s)), len(route.point_lanes) - 1)
        limit = graph.lane(route.point_lanes[k]).speed_limit
        v = float(rng.uniform(NPC_MIN_SPEED, max(NPC_MIN_SPEED, limit)))
        wps.append(Waypoint((float(p[0]), float(p[1])), math.atan2(tan[1], tan[0]), v))
    return NpcSpec(nid, tuple(wps))


def random_scenario(graph, rng, gen=None, max_npcs=3):
    """A fresh random scenario: 2..N_A AVs on distinct spawns, up to 3 NPCs."""
    gen = gen or GenConfig()
    spawns = [(float(sp[0]), float(sp[1])) for sp in graph.spawn_points]
    order = [int(x) for x in rng.permutation(len(spawns))]
    n_av = int(rng.integers(2, gen.n_a + 1))
    n_npc = int(rng.integers(0, max_npcs + 1))
    avs, npcs = [], []
    for k in order:
        start = spawns[k]
        dests = graph.reachable_destinations(start)
        if not dests:
            continue
        dest = dests[int(rng.integers(len(dests)))]
        if len(avs) < n_av:
            trig = float(rng.uniform(gen.trigger_lo, gen.trigger_hi))
            avs.append(AVSpec(len(avs) + 1, start, tuple(map(float, dest)), trig))
        elif len(npcs) < n_npc:
            npc = _npc_for(graph, start, dest, NPC_ID_BASE + len(npcs), rng)
            if npc is not None:
                npcs.append(npc)
        else:
            break
    return Scenario(graph.map_id, tuple(avs), tuple(npcs), new_seed(rng))


def _run_one(scenario, graph, cfg, stage_ms=None):
    """Simulate, judge and (when it passes) score one scenario."""
    t0 = time.perf_counter()
    obs = simulate(scenario, graph, cfg.policy, cfg.sim)
    t1 = time.perf_counter()
    verdict = fb = None
    if not obs.collision_flag:
        verdict = judge(obs, cfg)
    t2 = time.perf_counter()
    if verdict is not None and verdict.outcome == PASS and cfg.mode == STCLOCKER:
        fb = feedback(obs, graph, cfg.alpha, cfg.n_ti)
    t3 = time.perf_counter()
    if stage_ms is not None:
        stage_ms["sim"] += (t1 - t0) * 1e3
        stage_ms["oracle"] += (t2 - t1) * 1e3
        stage_ms["feedback"] += (t3 - t2) * 1e3
    return obs, verdict, fb


def judge(obs, cfg):
    if cfg.oracle == NAIVE_TIMER:
        return naive_timer(obs, cfg.oracle_cfg)
    return evaluate(obs, cfg.oracle_cfg)


def naive_timer(obs, cfg=None):
    """Stuck-timer baseline: two or more AVs stationary together for delta_t.

    AVs parked at their own destination are not counted as stuck.
    """
    cfg = cfg or OracleConfig()
    last = obs.n_scenes - 1
    for t in scan_times(obs, cfg):
        k = min(obs.index_of(t), last)
        stuck = []
        for av in obs.av_ids:
            dest = obs.av_meta[av].p_dest
            p = obs.track(av).p[k]
            if math.dist(p, dest) > ARRIVED_DIST and phi_stop(obs, av, t, cfg):
                stuck.append(av)
        if len(stuck) >= 2:
            return OracleVerdict(FAIL, stuck, t, [])
    return OracleVerdict(PASS, None, None, [])


def init_corpus(graph, k, rng, cfg):
    """K random seeds that run without collision, scored by feedback."""
    corpus = []
    draws = 0
    stage = dict.fromkeys(STAGES, 0.0)
    while len(corpus) < k:
        if draws >= 50 * k:
            raise InitExhausted(f"only {len(corpus)} of {k} seeds after {draws} draws")
        draws += 1
        s = random_scenario(graph, rng, cfg.gen)
        if validate(s, graph, max_avs=cfg.gen.n_a):
            continue
        try:
            t0 = time.perf_counter()
            obs = simulate(s, graph, cfg.policy, cfg.sim)
            t1 = time.perf_counter()
            stage["sim"] += (t1 - t0) * 1e3
            if obs.collision_flag:
                continue
            fb = feedback(obs, graph, cfg.alpha, cfg.n_ti)
            stage["feedback"] += (time.perf_counter() - t1) * 1e3
        except DlfuzzError as exc:
            log.info("seed draw %d skipped: %s", draws, exc)
            continue
        digest = hashlib.sha256(dumps_observation(obs).encode()).hexdigest()
        corpus.append(CorpusEntry(len(corpus), s, fb.combined, fb.spatial, fb.temporal, fb.regions, None, digest))
    return corpus, stage


def select_seed(corpus, rng):
    """Pick an entry with probability proportional to 1 - phi + floor."""
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    w = np.array([1.0 - e.phi + SELECTION_FLOOR for e in corpus])
    cum = np.cumsum(w)
    k = int(np.searchsorted(cum, float(rng.random()) * cum[-1], side="right"))
    return corpus[min(k, len(corpus) - 1)]


def run_campaign(cfg, progress=None):
    graph = get_map(cfg.map_id)
    rng = make_rng(cfg.seed)
    report = CampaignReport(cfg)
    if cfg.mode == STCLOCKER:
        report.corpus, stage = init_corpus(graph, cfg.k_init, rng, cfg)
        for k, v in stage.items():
            report.stage_ms[k] += v
    start = time.monotonic()
    it = 0
    while True:
        if cfg.iterations is not None and it >= cfg.iterations:
            break
        if cfg.wall_clock is not None and time.monotonic() - start >= cfg.wall_clock:
            break
        rec = _iteration(it, cfg, graph, rng, report)
        report.records.append(rec)
        for k, v in rec.wall_ms.items():
            report.stage_ms[k] += v
        if progress is not None:
            progress(rec)
        it += 1
    return report


def _iteration(it, cfg, graph, rng, report):
    t0 = time.perf_counter()
    parent = None
    if cfg.mode == STCLOCKER:
        parent = select_seed(report.corpus, rng)
        child, op = mutate(parent.scenario, parent.phi, parent.regions, graph, rng, cfg.gen)
    else:
        child, op = random_scenario(graph, rng, cfg.gen), "random"
    rec = IterationRecord(it, scenario_id(child), op, "error", lineage=parent.entry_id if parent else None)
    rec.wall_ms["mutation"] = (time.perf_counter() - t0) * 1e3
    try:
        obs, verdict, fb = _run_one(child, graph, cfg, rec.wall_ms)
    except DlfuzzError as exc:
        log.warning("iteration %d failed: %s", it, exc)
        report.errors += 1
        return rec
    if obs.collision_flag:
        report.collisions += 1
        rec.verdict = "collision"
        return rec
    rec.verdict = verdict.outcome
    if verdict.outcome == FAIL:
        report.fail_count += 1
        report.dls.append((rec.scenario_id, child, verdict))
        return rec
    if fb is not None:
        rec.phi_spatial, rec.phi_temporal, rec.phi = fb.spatial, fb.temporal, fb.combined
        if fb.combined < parent.phi:
            digest = hashlib.sha256(dumps_observation(obs).encode()).hexdigest()
            report.corpus.append(
                CorpusEntry(len(report.corpus), child, fb.combined, fb.spatial, fb.temporal, fb.regions, parent.entry_id, digest)
            )
            rec.accepted = True
    return rec


# ---------------------------------------------------------------------------
# output

CSV_COLUMNS = (
    "iteration",
    "scenario_id",
    "operator",
    "verdict",
    "phi_spatial",
    "phi_temporal",
    "phi",
    "accepted",
    "wall_ms_sim",
    "wall_ms_oracle",
    "wall_ms_feedback",
    "wall_ms_mutation",
)


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.records:
            w.writerow(
                [
                    r.iteration,
                    r.scenario_id,
                    r.operator,
                    r.verdict,
                    _fmt(r.phi_spatial),
                    _fmt(r.phi_temporal),
                    _fmt(r.phi),
                    int(r.accepted),
                    *(f"{r.wall_ms[s]:.3f}" for s in STAGES),
                ]
            )


def stage_shares(report):
    total = sum(report.stage_ms.values())
    return {k: (v / total if total else 0.0) for k, v in report.stage_ms.items()}


def write_report(report, out_dir):
    """report.json, iterations.csv, timing.json and one dls/<id>.json per finding."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    write_csv(report, out_dir / "iterations.csv")
    timing = {"stage_ms": report.stage_ms, "share": stage_shares(report)}
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2))
    dls_dir = out_dir / "dls"
    dls_dir.mkdir(exist_ok=True)
    for sid, s, _ in report.dls:
        (dls_dir / f"{sid}.json").write_text(json.dumps(scenario_to_dict(s), indent=2))

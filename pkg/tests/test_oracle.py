import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlfuzz.errors import CollidedObservation, ConfigError, WindowOutOfRange
from dlfuzz.oracle import (
    FAIL,
    PASS,
    OracleConfig,
    WaitForGraph,
    build_wait_for_graph,
    detect_cycle,
    evaluate,
    phi_stop,
    trajectories_conflict,
    wait_for_edge,
)
from dlfuzz.prediction import PredictedTrajectory
from dlfuzz.scenario import AVMeta, AVSpec, Observation, Scenario, Track
from dlfuzz.simulator import SimConfig, simulate

from conftest import canonical_scenario, make_obs


def speed_obs(v, dt=0.1, trigger=0.0):
    v = np.asarray(v, dtype=float)
    n = len(v)
    p = np.stack([np.cumsum(v) * dt, np.zeros(n)], axis=1)
    tr = Track(p, np.zeros(n), v, np.zeros(n))
    return Observation(dt, {1: tr}, {1: AVMeta(trigger, (100.0, 0.0))})


# --- reference cycle enumeration --------------------------------------------


def all_simple_cycles(vertices, edges):
    """Every simple directed cycle, by trying each vertex ordering (tiny graphs only)."""
    es = set(edges)
    out = []
    vs = sorted(vertices)
    for r in range(2, len(vs) + 1):
        for combo in itertools.combinations(vs, r):
            first, rest = combo[0], combo[1:]
            for perm in itertools.permutations(rest):
                cyc = (first,) + perm
                if all((cyc[i], cyc[(i + 1) % r]) in es for i in range(r)):
                    out.append(list(cyc))
    return out


def random_graph(rng, max_n=8):
    n = int(rng.integers(1, max_n + 1))
    p = float(rng.random()) * 0.6
    edges = frozenset((i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p)
    return WaitForGraph(0.0, frozenset(range(n)), edges)


def test_detect_cycle_small_examples():
    g = WaitForGraph(0.0, frozenset({1, 2}), frozenset({(1, 2), (2, 1)}))
    assert detect_cycle(g) == [1, 2]
    g = WaitForGraph(0.0, frozenset({1, 2, 3}), frozenset({(1, 2), (2, 3)}))
    assert detect_cycle(g) is None
    assert detect_cycle(WaitForGraph(0.0, frozenset(), frozenset())) is None


def test_detect_cycle_returns_lexicographically_smallest():
    # cycles {2,3} and {1,4,5}: sorted lists [1,4,5] < [2,3]
    edges = {(2, 3), (3, 2), (1, 5), (5, 4), (4, 1)}
    g = WaitForGraph(0.0, frozenset(range(1, 6)), frozenset(edges))
    assert detect_cycle(g) == [1, 5, 4]


def test_detect_cycle_matches_brute_force_on_6_vertex_graphs():
    rng = np.random.default_rng(11)
    for _ in range(300):
        g = random_graph(rng, 6)
        cycles = all_simple_cycles(g.vertices, g.edges)
        got = detect_cycle(g)
        assert (got is not None) == bool(cycles)
        if got is not None:
            assert min(sorted(c) for c in cycles) == sorted(got)
            assert got[0] == min(got)
            assert all((got[i], got[(i + 1) % len(got)]) in g.edges for i in range(len(got)))


def test_detect_cycle_agrees_with_networkx():
    rng = np.random.default_rng(5)
    for _ in range(300):
        g = random_graph(rng, 8)
        G = nx.DiGraph()
        G.add_nodes_from(g.vertices)
        G.add_edges_from(g.edges)
        assert (detect_cycle(g) is not None) == (not nx.is_directed_acyclic_graph(G))


def test_wait_for_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        WaitForGraph(0.0, frozenset({1}), frozenset({(1, 1)}))
    with pytest.raises(ValueError):
        WaitForGraph(0.0, frozenset({1}), frozenset({(1, 2)}))


# --- predicates -------------------------------------------------------------


def test_phi_stop_examples():
    assert phi_stop(speed_obs([0.005] * 60), 1, 5.0)
    v = [0.005] * 60
    v[30] = 0.5
    assert not phi_stop(speed_obs(v), 1, 5.0)
    assert not phi_stop(speed_obs([0.01] * 60), 1, 5.0)


def test_phi_stop_window_bounds():
    obs = speed_obs([0.0] * 60)
    with pytest.raises(WindowOutOfRange):
        phi_stop(obs, 1, 4.0)
    with pytest.raises(WindowOutOfRange):
        phi_stop(obs, 1, 7.0)


def test_phi_stop_ignores_parked_before_trigger():
    obs = speed_obs([0.0] * 100, trigger=3.0)
    assert not phi_stop(obs, 1, 5.0)
    assert phi_stop(obs, 1, 8.0)


def traj(points, t0=0.0, dt=0.1):
    pts = np.asarray(points, dtype=float)
    return PredictedTrajectory(t0 + dt * np.arange(1, len(pts) + 1), pts, dt * len(pts))


def brute_conflict(a, b, cfg):
    for (ta, pa), (tb, pb) in itertools.product(a.samples, b.samples):
        if abs(ta - tb) <= cfg.tau_eps and np.hypot(pa[0] - pb[0], pa[1] - pb[1]) <= cfg.d_eps:
            return True
    return False


def test_trajectories_conflict_examples():
    cfg = OracleConfig()
    s = np.linspace(0, 20, 50)
    a = traj(np.stack([s, np.zeros(50)], axis=1))
    assert trajectories_conflict(a, a, cfg)
    b = traj(np.stack([s, np.full(50, 10.0)], axis=1))
    assert not trajectories_conflict(a, b, cfg)
    # two 5 m/s paths crossing at the origin, 3 s apart
    t = np.arange(1, 51) * 0.1
    c = PredictedTrajectory(t, np.stack([5.0 * (t - 2.0), np.zeros(50)], axis=1), 5.0)
    d = PredictedTrajectory(t, np.stack([np.zeros(50), 5.0 * (t - 5.0)], axis=1), 5.0)
    assert not trajectories_conflict(c, d, cfg)
    assert not brute_conflict(c, d, cfg)


def test_trajectories_conflict_matches_brute_force():
    cfg = OracleConfig()
    rng = np.random.default_rng(2)
    for _ in range(200):
        a = PredictedTrajectory(np.sort(rng.uniform(0, 10, 15)), rng.uniform(-8, 8, (15, 2)), 10.0)
        b = PredictedTrajectory(np.sort(rng.uniform(0, 10, 12)), rng.uniform(-8, 8, (12, 2)), 10.0)
        assert trajectories_conflict(a, b, cfg) == brute_conflict(a, b, cfg)


def test_oracle_config_validation():
    with pytest.raises(ConfigError):
        OracleConfig(eps_v=0.0)


# --- fixtures ---------------------------------------------------------------


@pytest.fixture(scope="module")
def deadlock_obs(m1):
    return simulate(canonical_scenario(), m1, "conservative_yield", SimConfig(horizon=40.0))


def test_canonical_terminal_edges(m1):
    # a 20 s horizon ends the run while the pre-stop motion is still inside
    # the intent search range (window + 10 s)
    obs = simulate(canonical_scenario(), m1, "conservative_yield", SimConfig(horizon=20.0))
    t_end = round((obs.n_scenes - 1) * obs.dt, 9)
    assert t_end == 20.0
    assert wait_for_edge(obs, 1, 2, t_end, graph=m1)
    assert wait_for_edge(obs, 2, 1, t_end, graph=m1)
    g = build_wait_for_graph(obs, t_end, graph=m1)
    assert {(1, 2), (2, 1)} <= g.edges


def test_long_stopped_agents_lose_their_intent(deadlock_obs, m1):
    # past the search range the intent is stationary, so the edges disappear
    t_end = round((deadlock_obs.n_scenes - 1) * deadlock_obs.dt, 9)
    assert build_wait_for_graph(deadlock_obs, t_end, graph=m1).edges == frozenset()


def test_canonical_verdict(deadlock_obs, m1):
    v = evaluate(deadlock_obs, graph=m1)
    assert v.outcome == FAIL
    assert v.cycle == [1, 2]
    stops = []
    for av in (1, 2):
        speed = deadlock_obs.track(av).v
        still = np.nonzero(speed < 0.01)[0]
        stops.append(still[still > 10][0] * deadlock_obs.dt)
    assert v.t_detect - max(stops) <= 10.0
    assert v.graphs and all(g.edges for g in v.graphs)


def test_priority_fixture_passes(m1):
    obs = simulate(canonical_scenario(), m1, "priority_tiebreak", SimConfig(horizon=40.0))
    assert evaluate(obs, graph=m1).outcome == PASS


def test_moving_av_has_no_edge(m1):
    s = Scenario("M1", (AVSpec(1, (1.75, -40.0), (1.75, 65.0), 0.0), AVSpec(2, (-40.0, -1.75), (65.0, -1.75), 0.0)))
    obs = simulate(s, m1, "priority_tiebreak", SimConfig(horizon=40.0))
    assert not wait_for_edge(obs, 1, 2, 8.0, graph=m1)


def test_follower_behind_moving_leader_has_no_edge(m1):
    # the follower waits at standstill behind a leader that has just started
    s = Scenario("M1", (AVSpec(1, (1.75, -40.0), (1.75, 65.0), 8.0), AVSpec(2, (1.75, -58.0), (1.75, 65.0), 0.0)))
    obs = simulate(s, m1, "conservative_yield", SimConfig(horizon=30.0))
    for t in np.arange(5.0, 12.0, 1.0):
        assert not wait_for_edge(obs, 2, 1, float(t), graph=m1)


def test_single_av_and_all_moving_graphs_are_empty():
    n = 100
    line = np.stack([np.arange(n) * 1.0, np.zeros(n)], axis=1)
    obs = make_obs({1: line})
    assert build_wait_for_graph(obs, 5.0).edges == frozenset()
    obs = make_obs({1: line, 2: line[:, ::-1] + [0.0, 30.0]})
    assert build_wait_for_graph(obs, 5.0).edges == frozenset()


def test_collided_observation_rejected():
    obs = make_obs({1: np.zeros((60, 2)), 2: np.zeros((60, 2)) + 1.0})
    obs.collision_flag = True
    with pytest.raises(CollidedObservation):
        evaluate(obs)


def test_same_lane_queue_has_no_edges(m1, queue):
    obs = simulate(queue, m1, "conservative_yield", SimConfig(horizon=40.0))
    v = evaluate(obs, graph=m1)
    assert v.outcome == PASS
    assert all(not g.edges for g in v.graphs)


# --- properties on the fixture ----------------------------------------------


@pytest.mark.parametrize("eps", [0.001, 0.005, 0.01, 0.05])
def test_smaller_eps_shrinks_edges(deadlock_obs, m1, eps):
    big = OracleConfig(eps_v=eps * 2)
    small = OracleConfig(eps_v=eps)
    for t in np.arange(5.0, (deadlock_obs.n_scenes - 1) * deadlock_obs.dt, 1.0):
        e_small = build_wait_for_graph(deadlock_obs, float(t), small, m1).edges
        e_big = build_wait_for_graph(deadlock_obs, float(t), big, m1).edges
        assert e_small <= e_big
    if evaluate(deadlock_obs, small, m1).outcome == FAIL:
        assert evaluate(deadlock_obs, big, m1).outcome == FAIL


def relabel(obs, mapping):
    tracks = {mapping.get(k, k): v for k, v in obs.tracks.items()}
    meta = {mapping.get(k, k): v for k, v in obs.av_meta.items()}
    return Observation(obs.dt, tracks, meta, obs.collision_flag, obs.collided_pair, obs.map_id)


@given(st.permutations([3, 5, 8]))
@settings(max_examples=6, deadline=None)
def test_relabeling_permutes_cycle(deadlock_obs, perm):
    mapping = {1: perm[0], 2: perm[1]}
    v = evaluate(relabel(deadlock_obs, mapping))
    assert v.outcome == FAIL
    assert sorted(v.cycle) == sorted(mapping.values())

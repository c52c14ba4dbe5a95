import numpy as np
import pytest

from dlfuzz.errors import ConfigError, InvalidScenario
from dlfuzz.oracle import evaluate
from dlfuzz.policies import POLICIES, PolicyCommand, get_policy, register_policy
from dlfuzz.road_network import get_map
from dlfuzz.scenario import AgentState, AVSpec, Scenario
from dlfuzz.simulator import SimConfig, detect_collision, simulate

from conftest import canonical_scenario

SOUTH = (1.75, -40.0)
NORTH_EXIT = (1.75, 65.0)


def lone_av(trigger=0.0):
    # second AV parked far away on the east approach, triggered after the horizon
    return Scenario("M1", (AVSpec(1, SOUTH, NORTH_EXIT, trigger), AVSpec(2, (58.0, 1.75), (-65.0, 1.75), 1000.0)))


def _state(p):
    return AgentState(p, 0.0, 0.0, 0.0)


def test_collision_boundaries():
    assert detect_collision({1: _state((0.0, 0.0)), 2: _state((1.9, 0.0))}) == (1, 2)
    assert detect_collision({1: _state((0.0, 0.0)), 2: _state((2.0, 0.0))}) is None
    assert detect_collision({1: _state((0.0, 0.0)), 2: _state((11.0, 0.0)), 3: _state((0.0, 11.0))}) is None


def test_collision_reports_lowest_pair():
    scene = {5: _state((0.0, 0.0)), 3: _state((0.5, 0.0)), 1: _state((50.0, 0.0)), 2: _state((50.5, 0.0))}
    assert detect_collision(scene) == (1, 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigError):
        SimConfig(horizon=5.0)


def test_cruise_matches_closed_form(m1):
    """Alone on a straight 10 m/s route: full throttle to 9 m/s, then a geometric approach to 10."""
    obs = simulate(lone_av(), m1, "conservative_yield", SimConfig(horizon=10.0))
    k = np.arange(1, 81)
    v = np.where(k <= 30, 0.3 * k, 10.0 - 0.7 ** (k - 30))
    s = 0.1 * np.cumsum(v)
    tr = obs.track(1)
    assert np.allclose(tr.v[1:81], v, atol=1e-9)
    assert np.allclose(tr.p[1:81, 1], SOUTH[1] + s, atol=1e-9)
    assert np.allclose(tr.p[:81, 0], SOUTH[0])
    assert not obs.collision_flag


def test_lone_av_stops_at_destination(m1):
    obs = simulate(lone_av(), m1, "conservative_yield", SimConfig(horizon=30.0))
    tr = obs.track(1)
    assert np.linalg.norm(tr.p[-1] - np.array(NORTH_EXIT)) < 0.2
    assert tr.v[-1] == 0.0
    assert np.all(tr.v <= 10.0 + 1e-9)


def test_trigger_freezes_av(m1):
    obs = simulate(lone_av(trigger=5.0), m1, "conservative_yield", SimConfig(horizon=12.0))
    tr = obs.track(1)
    k5 = obs.index_of(5.0)
    assert np.all(tr.v[:k5] == 0.0)
    assert np.all(tr.p[:k5] == tr.p[0])
    assert tr.v[k5 + 1] > 0.0


def test_spawns_too_close_rejected(m1):
    s = Scenario("M1", (AVSpec(1, SOUTH, NORTH_EXIT, 0.0), AVSpec(2, (1.75, -39.0), NORTH_EXIT, 0.0)))
    with pytest.raises(InvalidScenario):
        simulate(s, m1)


def test_canonical_fixture_deadlocks_under_conservative(m1):
    obs = simulate(canonical_scenario(), m1, "conservative_yield", SimConfig(horizon=40.0))
    assert not obs.collision_flag
    for av in (1, 2):
        v = obs.track(av).v
        still = np.nonzero(v < 0.01)[0]
        k0 = still[still > 10][0]
        assert np.all(v[k0:] < 0.01)
        assert (len(v) - k0) * obs.dt > 5.0


def test_canonical_fixture_resolves_under_priority(m1):
    obs = simulate(canonical_scenario(), m1, "priority_tiebreak", SimConfig(horizon=40.0))
    assert not obs.collision_flag
    v1, v2 = obs.track(1).v, obs.track(2).v
    # AV 1 has priority and never halts once moving; AV 2 halts and later resumes
    arrived = np.nonzero(np.linalg.norm(obs.track(1).p - np.array(NORTH_EXIT), axis=1) < 0.2)[0][0]
    assert np.min(v1[5:arrived - 5]) > 0.5
    assert np.min(v2[5:-5]) < 0.01
    assert np.linalg.norm(obs.track(1).p[-1] - np.array(NORTH_EXIT)) < 0.2
    assert np.linalg.norm(obs.track(2).p[-1] - np.array((65.0, -1.75))) < 0.2


def test_single_av_same_under_both_policies(m1):
    a = simulate(lone_av(), m1, "conservative_yield", SimConfig(horizon=20.0))
    b = simulate(lone_av(), m1, "priority_tiebreak", SimConfig(horizon=20.0))
    assert a == b


def test_follower_keeps_gap_and_is_not_a_deadlock(m1):
    s = Scenario("M1", (AVSpec(1, SOUTH, NORTH_EXIT, 0.0), AVSpec(2, (1.75, -58.0), NORTH_EXIT, 0.0)))
    obs = simulate(s, m1, "conservative_yield", SimConfig(horizon=40.0))
    assert not obs.collision_flag
    gap = np.linalg.norm(obs.track(1).p - obs.track(2).p, axis=1)
    assert gap.min() > 5.0
    assert evaluate(obs).outcome == "Pass"


def test_three_av_roundabout_never_all_stopped():
    g = get_map("M3")
    sp = [p[:2] for p in g.spawn_points]
    dst = g.destinations
    s = Scenario("M3", (AVSpec(1, sp[0], dst[2], 0.0), AVSpec(2, sp[3], dst[3], 0.0), AVSpec(3, sp[6], dst[0], 0.0)))
    obs = simulate(s, g, "priority_tiebreak", SimConfig(horizon=60.0))
    assert not obs.collision_flag
    still = np.all(np.stack([obs.track(a).v for a in (1, 2, 3)]) < 0.01, axis=0)
    run = best = 0
    for x in still:
        run = run + 1 if x else 0
        best = max(best, run)
    assert best * obs.dt <= 5.0


def test_simulation_is_deterministic(m1):
    a = simulate(canonical_scenario(), m1, "conservative_yield", SimConfig(horizon=30.0))
    b = simulate(canonical_scenario(), m1, "conservative_yield", SimConfig(horizon=30.0))
    assert a == b


def test_custom_policy_registration(m1):
    register_policy("always_brake", lambda view: PolicyCommand(-6.0))
    try:
        obs = simulate(lone_av(), m1, "always_brake", SimConfig(horizon=10.0))
        assert np.all(obs.track(1).v == 0.0)
    finally:
        POLICIES.pop("always_brake")
    with pytest.raises(KeyError):
        get_policy("always_brake")

import math

import numpy as np
import pytest

from dlfuzz.road_network import get_map
from dlfuzz.scenario import AVMeta, AVSpec, NpcSpec, Observation, Scenario, Track, Waypoint

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def m1():
    return get_map("M1")


def canonical_scenario():
    """Two AVs meeting head-on-perpendicular at the M1 junction, same distance, same start."""
    return Scenario(
        "M1",
        (
            AVSpec(1, (1.75, -40.0), (1.75, 65.0), 0.0),
            AVSpec(2, (-40.0, -1.75), (65.0, -1.75), 0.0),
        ),
    )


def queue_scenario():
    """A parked NPC on the south approach with two AVs queued behind it."""
    park = math.pi / 2
    return Scenario(
        "M1",
        (
            AVSpec(1, (1.75, -40.0), (1.75, 65.0), 0.0),
            AVSpec(2, (1.75, -58.0), (1.75, 65.0), 0.0),
        ),
        (NpcSpec(101, (Waypoint((1.75, -22.0), park, 0.0), Waypoint((1.75, -21.0), park, 0.0))),),
    )


@pytest.fixture
def canonical():
    return canonical_scenario()


@pytest.fixture
def queue():
    return queue_scenario()


def make_obs(paths, dt=0.1, triggers=None, dests=None, map_id=None):
    """Observation from raw per-agent position arrays; speeds from finite differences.

    ``paths`` maps id -> (n, 2) array; ids below 100 are treated as AVs.
    """
    tracks, meta = {}, {}
    for aid, p in paths.items():
        p = np.asarray(p, dtype=float)
        d = np.diff(p, axis=0)
        v = np.hypot(d[:, 0], d[:, 1]) / dt
        v = np.concatenate([[0.0], v])
        th = np.arctan2(d[:, 1], d[:, 0]) if len(d) else np.zeros(0)
        th = np.concatenate([th[:1] if len(th) else [0.0], th])
        tracks[aid] = Track(p, th, v, np.zeros(len(p)))
        if aid < 100:
            trig = (triggers or {}).get(aid, 0.0)
            dest = (dests or {}).get(aid, tuple(p[-1]))
            meta[aid] = AVMeta(trig, (float(dest[0]), float(dest[1])))
    return Observation(dt, tracks, meta, False, None, map_id)


def line(p0, p1, n):
    return np.linspace(p0, p1, n)

"""Longitudinal control policies that stand in for the driving stack under test.

A policy is any callable ``decide(view) -> PolicyCommand``. Two are built in:

* ``conservative_yield`` hesitates on near-tie arrivals: both vehicles yield
  and, once stopped at the hold line, keep yielding while the other one is
  still near the conflict point. That is what turns mutual hesitation into a
  stable circular wait.
* ``priority_tiebreak`` is identical except that near ties go to the lower
  agent id, which removes the circular wait.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

A_MIN, A_MAX = -6.0, 3.0
COMFORT_DECEL = 3.0
SPEED_GAIN = 3.0
STOP_SNAP = 0.1  # metres; closer than this to a stop target -> halt exactly

T_YIELD = 4.0
HOLD_GAP = 3.0  # stop this far before a conflict point
R_HOLD = 12.0
V_FLOOR = 2.0  # speed used for ETAs of slow or stopped agents
OCCUPANCY = 3.0  # half extent of the conflict zone along the path
T_BUFFER = 1.0
TIE_MARGIN = 0.5
V_STOPPED = 0.1
CLEAR_DIST = 4.0  # rear has passed the conflict point
FOLLOW_GAP = 7.0  # centre-to-centre standstill gap
FOLLOW_RANGE = 80.0
LIMIT_LOOKAHEAD = 40.0


@dataclass(frozen=True)
class PolicyCommand:
    target_accel: float

    def clamped(self):
        return min(max(self.target_accel, A_MIN), A_MAX)


@dataclass
class OtherAgent:
    id: int
    state: object  # AgentState
    route: object  # published Route (or NPC path)
    s: float  # arc position along its own route
    is_av: bool
    active: bool  # triggered and not finished
    done: bool
    yielding_to: frozenset = frozenset()  # published yield intent
    limits: tuple = ()  # [(arc where a lane starts, speed limit)] along its route


class PolicyView:
    """Everything a policy may look at for one agent at one step.

    Besides the fields a perception stack would provide, the view carries
    precomputed route geometry: ``conflicts[j]`` lists ``(s_self, s_other)``
    arc positions where this route crosses or merges with agent j's route,
    and ``shadows[j]`` maps each metre of j's route onto this route's arc
    coordinate (None where the paths do not coincide). ``memory`` is a
    scratch dict private to this agent that persists across steps of one
    simulation.
    """

    __slots__ = ("agent_id", "state", "route", "s", "time", "dt", "agents", "conflicts", "shadows", "limits", "memory")

    def __init__(self, agent_id, state, route, s, time, dt, agents, conflicts, shadows, limits, memory=None):
        self.agent_id = agent_id
        self.state = state
        self.route = route
        self.s = s
        self.time = time
        self.dt = dt
        self.agents = agents
        self.conflicts = conflicts
        self.shadows = shadows
        self.limits = limits  # [(arc where a lane starts, speed limit)]
        self.memory = {} if memory is None else memory

    @property
    def others(self):
        return [a for a in self.agents if a.id != self.agent_id]

    @property
    def remaining_length(self):
        return self.route.total_length - self.s


def eta(limits, s, d, v):
    """Free-flow time to cover ``d`` metres from arc ``s`` at current speed ``v``.

    Each lane piece is driven at its own speed limit, reached at A_MAX from
    the running speed (a drop to a lower limit is taken as instantaneous).
    Without limits the current speed is held.
    """
    if d <= 0:
        return 0.0
    if not limits:
        return d / max(v, V_FLOOR)
    pieces = []
    for n, (start, lim) in enumerate(limits):
        stop = limits[n + 1][0] if n + 1 < len(limits) else math.inf
        lo, hi = max(start, s), min(stop, s + d)
        if hi > lo:
            pieces.append((hi - lo, lim))
    if not pieces:
        pieces = [(d, limits[-1][1])]
    t = 0.0
    for length, lim in pieces:
        cap = max(lim, V_FLOOR)
        if v >= cap:
            v = cap
            t += length / cap
            continue
        d_acc = (cap * cap - v * v) / (2.0 * A_MAX)
        if length <= d_acc:
            v_end = math.sqrt(v * v + 2.0 * A_MAX * length)
            t += (v_end - v) / A_MAX
            v = v_end
        else:
            t += (cap - v) / A_MAX + (length - d_acc) / cap
            v = cap
    return t


def _allowed(dist, v_end=0.0):
    if dist <= 0:
        return v_end if dist > -1e-9 else 0.0
    return math.sqrt(v_end * v_end + 2.0 * COMFORT_DECEL * dist)


class YieldPolicy:
    """Shared machinery for both built-in policies; subclasses decide ties."""

    name = "base"
    stubborn = False  # a held yield survives even when j also yields to me
    halt_on_tie = False  # tie loser stops fully at the hold line before resuming

    def tie_yields(self, me, other):
        raise NotImplementedError

    def __call__(self, view):
        return self.decide(view)

    def decide(self, view):
        s = view.s
        v = view.state.v
        me = view.agent_id
        limits = view.limits

        # cruise target from the current lane and upcoming lower limits
        v_des = limits[0][1]
        for start, lim in limits:
            if start <= s:
                v_des = lim
            elif start - s <= LIMIT_LOOKAHEAD:
                v_des = min(v_des, _allowed(start - s, lim))
            else:
                break
        stop_targets = [view.route.total_length - s]

        stopped = v < V_STOPPED
        held = view.memory.get("yield", ())
        keep = set()
        halts = set()
        for s_hold in view.memory.get("halt", ()):
            d_h = s_hold - s
            if not stopped and d_h > v * v / (2 * -A_MIN):
                halts.add(s_hold)
                stop_targets.append(d_h)
        for other in view.agents:
            j = other.id
            if j == me:
                continue
            shadow = view.shadows.get(j)
            if shadow:
                idx = min(max(int(other.s + 0.5), 0), len(shadow) - 1)
                m = shadow[idx]
                if m is not None:
                    ahead = m - s
                    if 0.5 < ahead < FOLLOW_RANGE:
                        gap = ahead - FOLLOW_GAP
                        v_des = min(v_des, _allowed(gap, other.state.v) if gap > 0 else 0.0)
                        if gap <= 0:
                            stop_targets.append(max(gap, 0.0))
            if not other.active:
                continue
            for s_me, s_other in view.conflicts.get(j, ()):
                d_i = s_me - s
                if d_i < -CLEAR_DIST:
                    continue
                d_j = s_other - other.s
                if d_j < -CLEAR_DIST:
                    continue
                # committed: already past the hold line or unable to stop before it
                if d_i - HOLD_GAP < v * v / (2 * -A_MIN) or d_i <= HOLD_GAP - 1e-6:
                    continue
                v_j = other.state.v
                j_stopped = v_j < V_STOPPED
                if j_stopped and d_j > R_HOLD:
                    continue
                mutual = me in other.yielding_to
                if (j, s_me) in held:
                    # keep yielding until j's rear is past the conflict point
                    yields = self.stubborn or not mutual or me > j
                else:
                    if stopped and d_i <= R_HOLD:
                        a_i = 0.0
                    else:
                        a_i = eta(limits, s, d_i - OCCUPANCY, v)
                    b_i = eta(limits, s, d_i + OCCUPANCY, v) + T_BUFFER
                    if j_stopped:
                        a_j = 0.0
                    else:
                        a_j = eta(other.limits, other.s, d_j - OCCUPANCY, v_j)
                    b_j = eta(other.limits, other.s, d_j + OCCUPANCY, v_j) + T_BUFFER
                    lo = max(a_i, a_j)
                    overlap = lo <= min(b_i, b_j) and lo <= T_YIELD
                    hold = stopped and d_i <= HOLD_GAP + 1.0 and d_j <= R_HOLD
                    if not (overlap or hold):
                        continue
                    if not other.is_av:
                        yields = True
                    elif mutual:
                        # j already gives way to me
                        yields = False
                    elif a_i < a_j - TIE_MARGIN:
                        yields = False
                    elif a_j < a_i - TIE_MARGIN:
                        yields = True
                    else:
                        yields = self.tie_yields(me, j)
                        if yields and self.halt_on_tie:
                            halts.add(s_me - HOLD_GAP)
                if yields:
                    stop_targets.append(d_i - HOLD_GAP)
                    keep.add((j, s_me))
        view.memory["yield"] = keep
        view.memory["halt"] = halts

        d_stop = min(stop_targets)
        v_des = min(v_des, _allowed(d_stop))
        return PolicyCommand(_track(v, v_des, d_stop, view.dt))


def _track(v, v_des, d_stop, dt):
    """Speed tracking plus direct braking once a stop needs real deceleration."""
    if d_stop < STOP_SNAP:
        return max(A_MIN, -v / dt) if v > 0 else 0.0
    acc = SPEED_GAIN * (v_des - v)
    need = v * v / (2.0 * d_stop)
    if need > 0.5 * COMFORT_DECEL:
        acc = min(acc, -need)
    return min(max(acc, A_MIN), A_MAX)


class ConservativeYield(YieldPolicy):
    name = "conservative_yield"
    stubborn = True

    def tie_yields(self, me, other):
        return True


class PriorityTiebreak(YieldPolicy):
    name = "priority_tiebreak"
    halt_on_tie = True

    def tie_yields(self, me, other):
        return me > other


POLICIES = {}


def register_policy(name, decide):
    POLICIES[name] = decide
    return decide


def get_policy(name):
    try:
        return POLICIES[name]
    except KeyError:
        raise KeyError(f"unknown policy {name!r}; known: {sorted(POLICIES)}") from None


register_policy(ConservativeYield.name, ConservativeYield())
register_policy(PriorityTiebreak.name, PriorityTiebreak())

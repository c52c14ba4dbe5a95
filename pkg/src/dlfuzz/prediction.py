"""Constant-velocity Kalman fitting and open-loop prediction of agent motion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistory, NonUniformSampling

Q_DEFAULT = 0.1
R_DEFAULT = 0.05
V_MOVE = 1.0
SEARCH_SLACK = 10.0


@dataclass(eq=False)
class PredictedTrajectory:
    times: np.ndarray
    points: np.ndarray  # (n, 2)
    horizon: float
    source_agent: object = None

    @property
    def samples(self):
        return [(float(t), (float(p[0]), float(p[1]))) for t, p in zip(self.times, self.points)]

    def __len__(self):
        return len(self.times)


@dataclass(eq=False)
class KalmanFit:
    t: float  # time of the last update
    x: np.ndarray  # (2, 2): rows = [position, velocity], columns = axes
    P: np.ndarray  # (2, 2) covariance, shared by both axes
    innovations: np.ndarray  # (n - 2, 2) pre-update residuals


def _sample_step(times):
    dts = np.diff(times)
    dt = float(dts.mean())
    if dt <= 0 or np.max(np.abs(dts - dt)) > 1e-6 * max(1.0, dt):
        raise NonUniformSampling("history timestamps are not evenly spaced")
    return dt


def kalman_fit(times, points, q=Q_DEFAULT, r=R_DEFAULT):
    """Filter a uniformly sampled 2D track with a constant-velocity model.

    The two axes are independent with identical noise, so one 2x2
    covariance serves both. The state is initialised from the first two
    samples (position from the second, velocity from their difference).
    """
    times = np.asarray(times, dtype=float)
    z = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(z) < 3:
        raise InsufficientHistory(f"need at least 3 samples, got {len(z)}")
    dt = _sample_step(times)
    R = r * r
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    x = np.vstack([z[1], (z[1] - z[0]) / dt])
    P = np.array([[R, R / dt], [R / dt, 2.0 * R / dt**2]])
    innov = np.empty((len(z) - 2, 2))
    for k in range(2, len(z)):
        x = F @ x
        P = F @ P @ F.T + Q
        y = z[k] - x[0]
        S = P[0, 0] + R
        K = P[:, 0] / S
        x = x + np.outer(K, y)
        P = P - np.outer(K, P[0, :])
        innov[k - 2] = y
    return KalmanFit(float(times[-1]), x, P, innov)


def kalman_predict(history, horizon, q=Q_DEFAULT, r=R_DEFAULT, source_agent=None):
    """Fit ``history`` (list of (t, p)) and propagate ``horizon`` seconds ahead.

    Returns samples at t_last + k*dt for k = 1..round(horizon/dt).
    """
    if len(history) < 3:
        raise InsufficientHistory(f"need at least 3 samples, got {len(history)}")
    times = np.array([h[0] for h in history], dtype=float)
    pts = np.array([h[1] for h in history], dtype=float)
    fit = kalman_fit(times, pts, q, r)
    dt = _sample_step(times)
    return _propagate(fit.x, fit.t, dt, horizon, source_agent)


def _propagate(x, t0, dt, horizon, source_agent):
    n = int(round(horizon / dt))
    k = np.arange(1, n + 1, dtype=float)
    pts = x[0][None, :] + (k * dt)[:, None] * x[1][None, :]
    return PredictedTrajectory(t0 + k * dt, pts, float(horizon), source_agent)


def _stationary(p, t0, dt, horizon, source_agent):
    n = int(round(horizon / dt))
    k = np.arange(1, n + 1, dtype=float)
    pts = np.repeat(np.asarray(p, dtype=float)[None, :], n, axis=0)
    return PredictedTrajectory(t0 + k * dt, pts, float(horizon), source_agent)


def last_move_index(v, k_stop, dt, window, v_move=V_MOVE):
    """Index of the latest sample <= k_stop with speed above v_move, or None.

    Only the last ``window + 10`` seconds before k_stop are searched.
    """
    k_lo = max(0, k_stop - int(round((window + SEARCH_SLACK) / dt)))
    idx = np.nonzero(v[k_lo : k_stop + 1] > v_move)[0]
    return None if len(idx) == 0 else k_lo + int(idx[-1])


def intent_from_track(track, dt, k_stop, window, horizon, agent=None, v_move=V_MOVE, q=Q_DEFAULT, r=R_DEFAULT):
    k_stop = min(max(k_stop, 0), len(track) - 1)
    k_move = last_move_index(track.v, k_stop, dt, window, v_move)
    if k_move is None:
        # never moved (still at spawn) or moved too long ago: stay where it is
        return _stationary(track.p[k_stop], k_stop * dt, dt, horizon, agent)
    k0 = max(0, k_move - int(round(window / dt)))
    if k_move - k0 + 1 < 3:
        # too short to filter; extrapolate the recorded speed along the heading
        th = track.theta[k_move]
        x = np.array([track.p[k_move], track.v[k_move] * np.array([np.cos(th), np.sin(th)])])
        return _propagate(x, k_move * dt, dt, horizon, agent)
    times = np.arange(k0, k_move + 1) * dt
    fit = kalman_fit(times, track.p[k0 : k_move + 1], q, r)
    return _propagate(fit.x, fit.t, dt, horizon, agent)


def pre_stop_intent(obs, agent, t_stop, window=5.0, horizon=5.0, v_move=V_MOVE, q=Q_DEFAULT, r=R_DEFAULT):
    """Extrapolate the agent's motion from the last instant it was moving.

    Anchoring at the last moving sample (rather than at ``t_stop``) keeps the
    direction the agent intended to go even after it has stopped.
    """
    track = obs.track(agent)
    return intent_from_track(track, obs.dt, obs.index_of(t_stop), window, horizon, agent, v_move, q, r)

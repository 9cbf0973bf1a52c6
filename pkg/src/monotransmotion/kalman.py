"""Constant-velocity Kalman filter baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KalmanDomainError(ValueError):
    pass


@dataclass
class KfState:
    x: np.ndarray  # (x, y, vx, vy)
    P: np.ndarray  # 4x4 covariance
    q: float = 0.5
    sigma_m: float = 0.05

    def __post_init__(self):
        if self.q <= 0 or self.sigma_m <= 0:
            raise KalmanDomainError("q and sigma_m must be positive")


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    """Discrete white-noise-acceleration covariance for one axis pair."""
    a = np.array([[dt ** 4 / 4, dt ** 3 / 2], [dt ** 3 / 2, dt ** 2]]) * q
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = a
    Q[np.ix_([1, 3], [1, 3])] = a
    return Q


H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(state: KfState, dt: float) -> KfState:
    F = transition(dt)
    return KfState(F @ state.x, _symmetrize(F @ state.P @ F.T + process_noise(dt, state.q)),
                   state.q, state.sigma_m)


def update(state: KfState, z: np.ndarray) -> KfState:
    R = np.eye(2) * state.sigma_m ** 2
    S = H @ state.P @ H.T + R
    K = np.linalg.solve(S, H @ state.P).T
    x = state.x + K @ (z - H @ state.x)
    # Joseph form keeps P symmetric PSD
    A = np.eye(4) - K @ H
    P = _symmetrize(A @ state.P @ A.T + K @ R @ K.T)
    return KfState(x, P, state.q, state.sigma_m)


def initial_state(obs: np.ndarray, dt: float, q: float, sigma_m: float) -> KfState:
    """Two-point start at the second observation: the exact posterior of
    (position, velocity) given obs[0] and obs[1] under a diffuse prior."""
    v0 = (obs[1] - obs[0]) / dt
    s2 = sigma_m ** 2
    a = np.array([[s2, s2 / dt], [s2 / dt, 2 * s2 / dt ** 2]])
    P = np.zeros((4, 4))
    P[np.ix_([0, 2], [0, 2])] = a
    P[np.ix_([1, 3], [1, 3])] = a
    return KfState(np.array([obs[1, 0], obs[1, 1], v0[0], v0[1]]), P, q, sigma_m)


def filter_observations(obs, dt: float = 0.5, q: float = 0.5, sigma_m: float = 0.05) -> list[KfState]:
    """Filtered states from the second observation on (the first is the initial state)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise KalmanDomainError(f"observations must be [T, 2], got {obs.shape}")
    if obs.shape[0] < 2:
        raise KalmanDomainError("need at least two observations")
    if not np.all(np.isfinite(obs)):
        raise KalmanDomainError("non-finite observation")
    state = initial_state(obs, dt, q, sigma_m)
    states = [state]
    for z in obs[2:]:
        state = update(predict(state, dt), z)
        states.append(state)
    return states


def kf_predict_trajectory(obs, horizon: int, dt: float = 0.5, q: float = 0.5,
                          sigma_m: float = 0.05) -> np.ndarray:
    """Filter the observed track, then roll the motion model forward
    ``horizon`` steps without updates.  Returns [horizon, 2]."""
    state = filter_observations(obs, dt, q, sigma_m)[-1]
    F = transition(dt)
    out = np.empty((horizon, 2))
    x = state.x
    for k in range(horizon):
        x = F @ x
        out[k] = x[:2]
    return out


def kf_predict_batch(obs, horizon: int, dt: float = 0.5, q: float = 0.5, sigma_m: float = 0.05) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    return np.stack([kf_predict_trajectory(o, horizon, dt, q, sigma_m) for o in obs])

"""Extended Kalman filter over a planar constant-velocity state ``[x, y, vx, vy]``."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import AnchorSet, Room
from .measurement import MeasurementBundle, predict_measurements

STATE_DIM = 4
INIT_SIGMA_POS = 2.0  # m
INIT_SIGMA_VEL = 1.0  # m/s
_EYE = np.eye(STATE_DIM)


class FilterUpdateError(RuntimeError):
    """The update could not be carried out; the period is dropped for this tag."""


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TagState:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, a) -> "TagState":
        return cls(*(float(v) for v in a))


def default_covariance() -> np.ndarray:
    return np.diag([INIT_SIGMA_POS ** 2, INIT_SIGMA_POS ** 2, INIT_SIGMA_VEL ** 2, INIT_SIGMA_VEL ** 2])


@dataclass(frozen=True)
class FilterConfig:
    dt: float = 0.1
    q_accel: float = 0.01
    initial_state: TagState | None = None
    initial_covariance: np.ndarray = field(default_factory=default_covariance)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.q_accel < 0:
            raise ValueError("q_accel must be nonnegative")
        check_covariance(self.initial_covariance)

    @cached_property
    def A(self) -> np.ndarray:
        return build_transition(self.dt)

    @cached_property
    def Q(self) -> np.ndarray:
        return build_process_noise(self.dt, self.q_accel)


def check_covariance(P: np.ndarray, tol: float = 1e-9) -> None:
    P = np.asarray(P, dtype=float)
    if P.shape != (STATE_DIM, STATE_DIM):
        raise ValueError(f"covariance must be 4x4, got {P.shape}")
    scale = max(float(np.abs(P).max()), 1e-300)
    if np.abs(P - P.T).max() > tol * scale:
        raise ValueError("covariance is not symmetric")
    if np.linalg.eigvalsh(P).min() < -tol * max(float(np.trace(P)), 1e-300):
        raise ValueError("covariance is not positive semi-definite")


def build_transition(dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.eye(STATE_DIM)
    A[0, 2] = A[1, 3] = dt
    return A


def build_process_noise(dt: float, q_accel: float) -> np.ndarray:
    """Discrete white-noise-acceleration covariance, per axis ``q*[[dt^4/4, dt^3/2], [dt^3/2, dt^2]]``."""
    if dt <= 0 or q_accel < 0:
        raise ValueError("need dt > 0 and q_accel >= 0")
    Q = np.zeros((STATE_DIM, STATE_DIM))
    for pos, vel in ((0, 2), (1, 3)):
        Q[pos, pos] = dt ** 4 / 4
        Q[pos, vel] = Q[vel, pos] = dt ** 3 / 2
        Q[vel, vel] = dt ** 2
    return Q * q_accel


def predict(state: np.ndarray, P: np.ndarray, config: FilterConfig) -> tuple[np.ndarray, np.ndarray]:
    A = config.A
    x = A @ state
    P = A @ P @ A.T + config.Q
    return x, 0.5 * (P + P.T)


def update(state: np.ndarray, P: np.ndarray, bundle: MeasurementBundle, R: np.ndarray,
           anchors: AnchorSet | np.ndarray, reference_index: int | None = None
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Measurement update; returns ``(state+, P+, innovation)``.

    Peer positions are taken from ``bundle.peer_positions`` as fixed points;
    any allowance for their uncertainty must already be in ``R``. The
    covariance is updated in Joseph form and re-symmetrized.
    """
    if len(bundle) == 0:
        raise FilterUpdateError("empty measurement bundle")
    if R.shape != (len(bundle), len(bundle)):
        raise FilterUpdateError(f"R is {R.shape} for {len(bundle)} measurements")
    if isinstance(anchors, AnchorSet):
        anchor_xy, ref = anchors.array, anchors.reference_index
    else:
        anchor_xy, ref = anchors, reference_index
    h, H = predict_measurements(state[:2], anchor_xy, ref, bundle.tdoa_anchors, bundle.peer_positions)
    innovation = bundle.z - h
    PHt = P @ H.T
    S = H @ PHt + R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterUpdateError(f"innovation covariance is not positive definite: {exc}") from exc
    # K = P H^T S^-1 through the Cholesky factor
    Linv = np.linalg.inv(L)
    W = PHt @ Linv.T
    K = W @ Linv
    x = state + K @ innovation
    IKH = _EYE - K @ H
    P = IKH @ P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    if not (np.isfinite(x).all() and np.isfinite(P).all()):
        raise FilterUpdateError("non-finite update result")
    return x, P, innovation


def innovation_covariance(state: np.ndarray, P: np.ndarray, bundle: MeasurementBundle,
                          R: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    _, H = predict_measurements(state[:2], anchors.array, anchors.reference_index,
                                bundle.tdoa_anchors, bundle.peer_positions)
    return H @ P @ H.T + R


def grid_search_position(bundle: MeasurementBundle, anchors: AnchorSet | np.ndarray,
                         reference_index: int, grid_xy: np.ndarray) -> np.ndarray:
    """Grid point minimizing the TDOA residual sum of squares; lowest index wins ties."""
    anchor_xy = anchors.array if isinstance(anchors, AnchorSet) else anchors
    d = np.sqrt(((grid_xy[:, None, :] - anchor_xy[None, :, :]) ** 2).sum(axis=-1))
    pred = d[:, bundle.tdoa_anchors] - d[:, [reference_index]]
    sse = ((pred - bundle.tdoa_values) ** 2).sum(axis=1)
    sse[(d < 1e-3).any(axis=1)] = np.inf
    best = sse.min()
    k = int(np.flatnonzero(sse <= best + 1e-12 * (1.0 + best))[0])
    return grid_xy[k].copy()


def init_filter(first_bundle: MeasurementBundle, anchors: AnchorSet, config: FilterConfig,
                room: Room, grid_step: float = 0.5,
                grid_xy: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Coarse initialization: best grid point for the TDOAs, zero velocity."""
    if len(first_bundle.tdoa_values) < 2:
        raise InitializationError("need at least two TDOA values to initialize")
    if grid_xy is None:
        grid_xy = np.array([[g.x, g.y] for g in room.grid(grid_step)])
    pos = grid_search_position(first_bundle, anchors, anchors.reference_index, grid_xy)
    state = np.array([pos[0], pos[1], 0.0, 0.0])
    return state, np.array(config.initial_covariance, dtype=float)

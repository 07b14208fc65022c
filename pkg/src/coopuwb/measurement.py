"""Measurement synthesis and the hybrid TDOA + inter-tag range measurement model.

Every measurement-space quantity is in meters: arrival-time differences are
multiplied by the speed of light as soon as they are formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import DEGENERATE_DISTANCE, SPEED_OF_LIGHT, AnchorSet, GeometryError, Point2

R_FLOOR = 1e-12  # m^2, substituted for zero variances


@dataclass
class MeasurementBundle:
    """One tag's measurement vector for one positioning period.

    TDOA entries come first (one per non-reference anchor, in meters relative
    to the reference anchor), then ranges to peer tags together with the peer
    position the filter should assume.
    """

    tdoa_anchors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tdoa_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    range_peers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    range_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    peer_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    # variance of each peer position along the line of sight, m^2 (optional)
    peer_variances: np.ndarray | None = None

    @property
    def tdoa(self) -> list[tuple[int, float]]:
        return [(int(a), float(v)) for a, v in zip(self.tdoa_anchors, self.tdoa_values)]

    @property
    def ranges(self) -> list[tuple[int, float, Point2]]:
        return [(int(k), float(v), Point2(float(p[0]), float(p[1])))
                for k, v, p in zip(self.range_peers, self.range_values, self.peer_positions)]

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.tdoa_values, self.range_values])

    def __len__(self) -> int:
        return len(self.tdoa_values) + len(self.range_values)

    def without_ranges(self) -> "MeasurementBundle":
        return MeasurementBundle(self.tdoa_anchors, self.tdoa_values)

    def problems(self, reference_index: int) -> list[str]:
        out = []
        if reference_index in set(self.tdoa_anchors.tolist()):
            out.append("TDOA entry for the reference anchor")
        if len(set(self.tdoa_anchors.tolist())) != len(self.tdoa_anchors):
            out.append("duplicate anchor entries")
        if len(set(self.range_peers.tolist())) != len(self.range_peers):
            out.append("duplicate peer entries")
        if not np.all(np.isfinite(self.z)):
            out.append("non-finite measurement values")
        return out


@dataclass(frozen=True)
class MeasurementNoiseSpec:
    sigma_toa: float
    sigma_twr: float
    tdoa_correlated: bool = True

    def __post_init__(self) -> None:
        if self.sigma_toa < 0 or self.sigma_twr < 0:
            raise ValueError("noise sigmas must be nonnegative")


def synth_toas(tag_truth: Point2 | np.ndarray, anchors: AnchorSet | np.ndarray,
               sigma_toa: float, rng: np.random.Generator) -> np.ndarray:
    """Per-anchor times of arrival in seconds, with independent Gaussian errors."""
    p = tag_truth.as_array() if isinstance(tag_truth, Point2) else np.asarray(tag_truth, float)
    axy = anchors.array if isinstance(anchors, AnchorSet) else np.asarray(anchors, float)
    flight = np.sqrt(((axy - p) ** 2).sum(axis=1)) / SPEED_OF_LIGHT
    return flight + rng.normal(0.0, sigma_toa, size=len(axy))


def form_tdoa(toas: Sequence[float] | np.ndarray, reference_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Range differences ``c * (toa_i - toa_ref)`` for every anchor but the reference.

    NaN entries mark anchors that did not hear the packet and are skipped; if
    the reference itself is missing no TDOA can be formed.
    """
    toas = np.asarray(toas, dtype=float)
    if len(toas) < 2:
        raise ValueError("need at least two arrival times")
    if np.isnan(toas[reference_index]):
        return np.zeros(0, dtype=int), np.zeros(0)
    keep = ~np.isnan(toas)
    keep[reference_index] = False
    idx = np.flatnonzero(keep)
    return idx, SPEED_OF_LIGHT * (toas[idx] - toas[reference_index])


def synth_ranges(tag_truth: Point2 | np.ndarray, peer_truths: Sequence[Point2] | np.ndarray,
                 sigma_twr: float, rng: np.random.Generator) -> np.ndarray:
    p = tag_truth.as_array() if isinstance(tag_truth, Point2) else np.asarray(tag_truth, float)
    if isinstance(peer_truths, np.ndarray):
        q = peer_truths.reshape(-1, 2)
    else:
        q = np.array([[t.x, t.y] for t in peer_truths], dtype=float).reshape(-1, 2)
    return np.sqrt(((q - p) ** 2).sum(axis=1)) + rng.normal(0.0, sigma_twr, size=len(q))


def _position(state) -> np.ndarray:
    if isinstance(state, Point2):
        return state.as_array()
    return np.asarray(state, dtype=float)[:2]


def predict_measurements(pos: np.ndarray, anchor_xy: np.ndarray, reference_index: int,
                         active: np.ndarray, peers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted measurement vector and its 4-column Jacobian at ``pos``."""
    da = pos - anchor_xy[active]
    dr = pos - anchor_xy[reference_index]
    na = np.sqrt((da ** 2).sum(axis=1))
    nr = float(np.sqrt(dr @ dr))
    dp = pos - peers
    npr = np.sqrt((dp ** 2).sum(axis=1))
    if nr < DEGENERATE_DISTANCE or (len(na) and na.min() < DEGENERATE_DISTANCE):
        raise GeometryError("state coincides with an anchor")
    if len(npr) and npr.min() < DEGENERATE_DISTANCE:
        raise GeometryError("state coincides with a peer")
    h = np.concatenate([na - nr, npr])
    H = np.zeros((len(h), 4))
    nt = len(na)
    H[:nt, :2] = da / na[:, None] - dr / nr
    H[nt:, :2] = dp / npr[:, None]
    return h, H


def _args(anchors: AnchorSet, active_anchor_idxs, peer_estimates):
    active = np.asarray(active_anchor_idxs, dtype=int).reshape(-1)
    if peer_estimates is None or len(peer_estimates) == 0:
        peers = np.zeros((0, 2))
    elif isinstance(peer_estimates, np.ndarray):
        peers = peer_estimates.reshape(-1, 2).astype(float)
    else:
        peers = np.array([_position(p) for p in peer_estimates], dtype=float).reshape(-1, 2)
    return active, peers


def h_eval(state, anchors: AnchorSet, active_anchor_idxs, peer_estimates=()) -> np.ndarray:
    """Predicted TDOAs (range units) for the active anchors, then distances to each peer."""
    active, peers = _args(anchors, active_anchor_idxs, peer_estimates)
    return predict_measurements(_position(state), anchors.array, anchors.reference_index,
                                active, peers)[0]


def h_jacobian(state, anchors: AnchorSet, active_anchor_idxs, peer_estimates=()) -> np.ndarray:
    active, peers = _args(anchors, active_anchor_idxs, peer_estimates)
    return predict_measurements(_position(state), anchors.array, anchors.reference_index,
                                active, peers)[1]


def build_noise_covariance(spec: MeasurementNoiseSpec, n_tdoa: int, n_ranges: int) -> np.ndarray:
    """Block-diagonal measurement covariance in m^2.

    TDOAs that share the reference anchor share its arrival-time error, which
    shows up as ``(c*sigma_toa)^2`` off the diagonal when ``tdoa_correlated``.
    """
    if n_tdoa < 0 or n_ranges < 0:
        raise ValueError("negative measurement count")
    var_toa = (SPEED_OF_LIGHT * spec.sigma_toa) ** 2
    var_twr = spec.sigma_twr ** 2
    if n_tdoa and var_toa == 0:
        warnings.warn("sigma_toa is zero, flooring TDOA variance", RuntimeWarning, stacklevel=2)
    if n_ranges and var_twr == 0:
        warnings.warn("sigma_twr is zero, flooring range variance", RuntimeWarning, stacklevel=2)
    n = n_tdoa + n_ranges
    R = np.zeros((n, n))
    if n_tdoa:
        if var_toa == 0:
            R[:n_tdoa, :n_tdoa] = np.eye(n_tdoa) * R_FLOOR
        elif spec.tdoa_correlated:
            R[:n_tdoa, :n_tdoa] = var_toa * (np.ones((n_tdoa, n_tdoa)) + np.eye(n_tdoa))
        else:
            R[:n_tdoa, :n_tdoa] = np.eye(n_tdoa) * 2 * var_toa
    if n_ranges:
        R[n_tdoa:, n_tdoa:] = np.eye(n_ranges) * max(var_twr, R_FLOOR)
    return R

"""Period-by-period orchestration: ranging, TDOA formation and per-tag EKF updates.

Simulation and estimation are split. ``simulate_measurements`` produces the raw
per-period observations (arrival times and pairwise ranges) and an
``Estimator`` consumes them. Running both modes from one measurement set is
what makes the Monte-Carlo comparison paired: the TDOA-only and cooperative
filters see the very same noise draws.

Within a period every tag uses the same start-of-period snapshot of its peers'
positions, so the order in which tags are processed does not matter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ekf import (FilterConfig, FilterUpdateError, InitializationError, grid_search_position,
                  predict, update)
from .geometry import (DEGENERATE_DISTANCE, SPEED_OF_LIGHT, GeometryError, Point2, Scenario,
                       sample_tag_configuration)
from .measurement import MeasurementBundle, MeasurementNoiseSpec, build_noise_covariance, form_tdoa
from .transmission import RoundAborted, recover_propagation_times, simulate_round

log = logging.getLogger(__name__)


@dataclass
class PeriodMeasurements:
    """Raw observations of one period.

    ``toas[t, a]`` is the arrival time (s) of tag ``t``'s packet at anchor
    ``a``; a row of NaN means the tag did not transmit. ``ranges`` maps an
    ordered tag pair ``(i, j)``, ``i < j``, to one measured distance (m).
    """

    toas: np.ndarray
    ranges: dict[tuple[int, int], float] = field(default_factory=dict)
    period: int | None = None


@dataclass
class PeriodResult:
    states: dict[int, np.ndarray]
    covariances: dict[int, np.ndarray]
    bundles: dict[int, MeasurementBundle]
    dropped: dict[int, str]


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    cooperative: bool
    # per tag: (period indices, Nx2 positions)
    periods: dict[int, np.ndarray]
    positions: dict[int, np.ndarray]
    dropped: dict[int, list[int]] = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "coop" if self.cooperative else "tdoa"

    def estimates(self, tag: int, burn_in: int = 0) -> np.ndarray:
        keep = self.periods[tag] >= burn_in
        return self.positions[tag][keep]


def _round_ranges(scenario: Scenario) -> dict[tuple[int, int], float]:
    """Noise-free ranges recovered from one (deterministic) ranging round."""
    if scenario.n_tags - len(scenario.failed_tags) < 2:
        return {}
    try:
        rec = simulate_round(scenario.tag_truths, scenario.reply_delays, scenario.clock_ppm,
                             scenario.failed_tags)
    except RoundAborted:
        return {}
    tol = 3.0 * scenario.sigma_twr / SPEED_OF_LIGHT + 1e-12
    times = recover_propagation_times(rec, tolerance=tol)
    return {pair: SPEED_OF_LIGHT * tp for pair, tp in sorted(times.tp.items())}


def simulate_period(scenario: Scenario, rng: np.random.Generator,
                    clean_ranges: dict[tuple[int, int], float] | None = None) -> PeriodMeasurements:
    """Draw one period's observations.

    Range noise is added to the recovered distances; arrival-time noise is
    drawn for every tag including failed ones, so the random stream does not
    depend on which tags are live.
    """
    if clean_ranges is None:
        clean_ranges = _round_ranges(scenario)
    anchor_xy = scenario.anchors.array
    truths = np.array([[t.x, t.y] for t in scenario.tag_truths])
    ranges = {}
    for pair, r in sorted(clean_ranges.items()):
        noisy = r + rng.normal(0.0, scenario.sigma_twr)
        if noisy >= -3.0 * scenario.sigma_twr:
            ranges[pair] = float(noisy)
    flight = np.sqrt(((truths[:, None, :] - anchor_xy[None, :, :]) ** 2).sum(axis=-1)) / SPEED_OF_LIGHT
    toas = flight + rng.normal(0.0, scenario.sigma_toa, size=flight.shape)
    for t in scenario.failed_tags:
        toas[t] = np.nan
    return PeriodMeasurements(toas, ranges)


def simulate_measurements(scenario: Scenario, rng: np.random.Generator) -> list[PeriodMeasurements]:
    clean = _round_ranges(scenario)
    out = []
    for k in range(scenario.periods):
        m = simulate_period(scenario, rng, clean)
        m.period = k
        out.append(m)
    return out


def filter_config(scenario: Scenario) -> FilterConfig:
    return FilterConfig(dt=scenario.dt, q_accel=scenario.q_accel)


def noise_spec(scenario: Scenario) -> MeasurementNoiseSpec:
    return MeasurementNoiseSpec(scenario.sigma_toa, scenario.sigma_twr, scenario.tdoa_correlated)


class Estimator:
    """One EKF per tag plus the cooperative bookkeeping between them."""

    def __init__(self, scenario: Scenario, cooperative: bool | None = None,
                 noise: MeasurementNoiseSpec | None = None,
                 config: FilterConfig | None = None,
                 peer_uncertainty: bool | None = None) -> None:
        self.scenario = scenario
        self.peer_uncertainty = (scenario.peer_uncertainty if peer_uncertainty is None
                                 else peer_uncertainty)
        self.cooperative = scenario.cooperative if cooperative is None else cooperative
        self.noise = noise or noise_spec(scenario)
        self.config = config or filter_config(scenario)
        self.anchor_xy = scenario.anchors.array
        self.ref = scenario.anchors.reference_index
        self.grid_xy = np.array([[g.x, g.y] for g in scenario.room.grid(scenario.grid_step)])
        self.states: dict[int, np.ndarray] = {}
        self.covs: dict[int, np.ndarray] = {}
        self._R: dict[tuple[int, int], np.ndarray] = {}

    def _noise_cov(self, n_tdoa: int, n_ranges: int) -> np.ndarray:
        key = (n_tdoa, n_ranges)
        if key not in self._R:
            self._R[key] = build_noise_covariance(self.noise, n_tdoa, n_ranges)
        return self._R[key]

    def tdoa_bundles(self, meas: PeriodMeasurements) -> dict[int, MeasurementBundle]:
        out = {}
        for t in range(meas.toas.shape[0]):
            row = meas.toas[t]
            if np.all(np.isnan(row)):
                continue
            idx, vals = form_tdoa(row, self.ref)
            if len(idx):
                out[t] = MeasurementBundle(idx, vals)
        return out

    def _initialize(self, tag: int, bundle: MeasurementBundle) -> None:
        if len(bundle.tdoa_values) < 2:
            raise InitializationError(f"tag {tag}: need at least two TDOA values to initialize")
        pos = grid_search_position(bundle, self.anchor_xy, self.ref, self.grid_xy)
        self.states[tag] = np.array([pos[0], pos[1], 0.0, 0.0])
        self.covs[tag] = np.array(self.config.initial_covariance, dtype=float)

    def _assemble(self, tag: int, tdoa: MeasurementBundle, meas: PeriodMeasurements,
                  snapshot: dict[int, np.ndarray], prior_pos: np.ndarray) -> MeasurementBundle:
        # rows whose geometry is degenerate at the prior are dropped for this period
        d_anchor = np.sqrt(((self.anchor_xy - prior_pos) ** 2).sum(axis=1))
        if d_anchor[self.ref] < DEGENERATE_DISTANCE:
            keep = np.zeros(len(tdoa.tdoa_anchors), dtype=bool)
        else:
            keep = d_anchor[tdoa.tdoa_anchors] >= DEGENERATE_DISTANCE
        anchors, values = tdoa.tdoa_anchors[keep], tdoa.tdoa_values[keep]
        if not self.cooperative:
            return MeasurementBundle(anchors, values)
        peers, rvals, ppos, pvar = [], [], [], []
        for (i, j), r in meas.ranges.items():
            if tag not in (i, j):
                continue
            other = j if i == tag else i
            if other not in snapshot:
                continue
            p = snapshot[other]
            los = prior_pos - p
            dist = float(np.hypot(*los))
            if dist < DEGENERATE_DISTANCE:
                continue
            peers.append(other)
            rvals.append(r)
            ppos.append(p)
            if self.peer_uncertainty:
                u = los / dist
                pvar.append(float(u @ self._snapshot_cov[other] @ u))
        bundle = MeasurementBundle(anchors, values, np.array(peers, dtype=int), np.array(rvals),
                                   np.array(ppos).reshape(-1, 2))
        if self.peer_uncertainty:
            bundle.peer_variances = np.array(pvar)
        return bundle

    def step(self, meas: PeriodMeasurements, tag_order: Sequence[int] | None = None) -> PeriodResult:
        """Run one positioning period over all tags that transmitted."""
        tdoa = self.tdoa_bundles(meas)
        for tag, b in tdoa.items():
            if tag not in self.states and len(b.tdoa_values) >= 2:
                self._initialize(tag, b)
        snapshot = {t: s[:2].copy() for t, s in self.states.items()}
        # peers are uncertain by their a-priori covariance for this period: under the
        # motion model they may have moved since their last update
        self._snapshot_cov = {t: predict(s, self.covs[t], self.config)[1][:2, :2]
                              for t, s in self.states.items()}
        result = PeriodResult({}, {}, {}, {})
        order = sorted(tdoa) if tag_order is None else [t for t in tag_order if t in tdoa]
        for tag in order:
            if tag not in self.states:
                result.dropped[tag] = "not initialized"
                continue
            x, P = predict(self.states[tag], self.covs[tag], self.config)
            bundle = self._assemble(tag, tdoa[tag], meas, snapshot, x[:2])
            self.states[tag], self.covs[tag] = x, P
            if len(bundle) == 0:
                result.dropped[tag] = "no usable measurements"
                continue
            R = self._noise_cov(len(bundle.tdoa_values), len(bundle.range_values))
            if bundle.peer_variances is not None and len(bundle.peer_variances):
                R = R.copy()
                nt = len(bundle.tdoa_values)
                R[nt:, nt:] += np.diag(bundle.peer_variances)
            try:
                x, P, _ = update(x, P, bundle, R, self.anchor_xy, self.ref)
            except (FilterUpdateError, GeometryError) as exc:
                log.debug("tag %d update skipped: %s", tag, exc)
                result.dropped[tag] = str(exc)
                continue
            self.states[tag], self.covs[tag] = x, P
            result.states[tag] = x
            result.covariances[tag] = P
            result.bundles[tag] = bundle
        return result

    def run(self, measurements: Sequence[PeriodMeasurements], seed: int = 0) -> RunResult:
        n = self.scenario.n_tags
        per: dict[int, list[int]] = {t: [] for t in range(n)}
        pos: dict[int, list[np.ndarray]] = {t: [] for t in range(n)}
        dropped: dict[int, list[int]] = {t: [] for t in range(n)}
        for k, meas in enumerate(measurements):
            if meas.period is not None:
                k = meas.period
            res = self.step(meas)
            for t, x in res.states.items():
                per[t].append(k)
                pos[t].append(x[:2])
            for t in res.dropped:
                dropped[t].append(k)
        return RunResult(
            scenario=self.scenario, seed=seed, cooperative=self.cooperative,
            periods={t: np.array(v, dtype=int) for t, v in per.items()},
            positions={t: np.array(v, dtype=float).reshape(-1, 2) for t, v in pos.items()},
            dropped=dropped,
        )


def run_period(estimator: Estimator, scenario: Scenario, rng: np.random.Generator,
               period_index: int = 0) -> PeriodResult:
    """Simulate and estimate a single period with an existing estimator."""
    meas = simulate_period(scenario, rng)
    return estimator.step(meas)


def run_scenario(scenario: Scenario, cooperative: bool | None = None,
                 noise: MeasurementNoiseSpec | None = None,
                 measurements: Sequence[PeriodMeasurements] | None = None) -> RunResult:
    """Simulate (unless ``measurements`` is given) and estimate a whole scenario."""
    if measurements is None:
        measurements = simulate_measurements(scenario, np.random.default_rng(scenario.seed))
    est = Estimator(scenario, cooperative=cooperative, noise=noise)
    return est.run(measurements, seed=scenario.seed)


@dataclass
class ConfigResult:
    index: int
    tags: list[Point2]
    tdoa: RunResult | None
    coop: RunResult | None
    error: str | None = None


def config_streams(seed: int, n_configs: int) -> list[np.random.SeedSequence]:
    """Per-configuration RNG streams: child ``k`` of ``SeedSequence(seed)``."""
    return np.random.SeedSequence(seed).spawn(n_configs)


def run_config(base: Scenario, index: int, stream: np.random.SeedSequence,
               tags: Sequence[Point2] | None = None) -> ConfigResult:
    rng = np.random.default_rng(stream)
    try:
        if tags is None:
            tags = sample_tag_configuration(base.room, base.grid_step, base.n_tags, rng,
                                            exclude=base.anchors.positions)
        scenario = base.with_tags(tags)
        meas = simulate_measurements(scenario, rng)
        tdoa = Estimator(scenario, cooperative=False).run(meas, seed=base.seed)
        coop = Estimator(scenario, cooperative=True).run(meas, seed=base.seed)
        return ConfigResult(index, list(tags), tdoa, coop)
    except (InitializationError, RoundAborted, GeometryError, ValueError) as exc:
        log.warning("configuration %d failed: %s", index, exc)
        return ConfigResult(index, list(tags or []), None, None, str(exc))


def run_monte_carlo(base: Scenario, n_configs: int, seed: int | None = None,
                    n_jobs: int = 1) -> list[ConfigResult]:
    """Paired TDOA-only / cooperative runs over randomly placed tag configurations.

    Results depend only on ``seed`` (default: the scenario's), never on
    ``n_jobs``.
    """
    if n_configs < 1:
        raise ValueError("n_configs must be >= 1")
    seed = base.seed if seed is None else seed
    streams = config_streams(seed, n_configs)
    if n_jobs == 1:
        return [run_config(base, k, s) for k, s in enumerate(streams)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(run_config)(base, k, s) for k, s in enumerate(streams))

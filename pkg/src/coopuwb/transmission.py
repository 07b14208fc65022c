"""Chained inter-tag ranging round: forward timing simulation and its inversion.

One positioning period is a single chain of packets. The first live tag
transmits; every later tag replies a fixed delay after receiving the packet of
the tag before it. For three tags this gives the four measured intervals

    t12  tag 1: own TX -> RX of packet 2        = 2*tp12 + dt2
    t23  tag 2: own TX -> RX of packet 3        = 2*tp23 + dt3
    t13  tag 1: own TX -> RX of packet 3        = tp12 + dt2 + tp23 + dt3 + tp13
    t3w  tag 3: RX of packet 1 -> RX of packet 2 = tp12 + dt2 + tp23 - tp13

so that ``tp13 = (t13 - dt3 - t3w) / 2``. ``t3w`` is the only definition of the
wait interval for which that inversion is exact.

For longer chains the same structure generalizes pairwise. Tag ``i`` times
every later packet ``j`` from its own TX (``tx_rx[i, j]``); tag ``j`` times the
gap between packet ``i`` and its own trigger packet (``waits[j, i]``). Then

    tp_ij = (tx_rx[i, j] - delay_j - waits[j, i]) / 2

with ``waits[j, i] = 0`` when ``i`` is the trigger itself. A failed tag never
transmits, so its successor is triggered by the most recent packet it did
receive and the chain carries on without it.

Tags are indexed from 0 here; tag "1" in names such as ``t12`` is index 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT, Point2


class RoundAborted(RuntimeError):
    """Fewer than two live tags: no ranging is possible."""


@dataclass(frozen=True)
class PlannedPacket:
    sender: int
    trigger: int | None  # None for the initiator
    delay: float


@dataclass(frozen=True)
class ChainPlan:
    packets: tuple[PlannedPacket, ...]
    # per tag, the intervals it measures: ("tx_rx", i, j) or ("wait", j, i)
    measurements: dict[int, tuple[tuple[str, int, int], ...]]

    @property
    def senders(self) -> list[int]:
        return [p.sender for p in self.packets]

    def trigger_of(self, tag: int) -> int | None:
        for p in self.packets:
            if p.sender == tag:
                return p.trigger
        raise KeyError(tag)

    def pairs(self) -> list[tuple[int, int]]:
        s = sorted(self.senders)
        return [(a, b) for k, a in enumerate(s) for b in s[k + 1:]]


def interval_label(kind: str, a: int, b: int, n_waits: int = 1) -> str:
    """Human-readable name, e.g. ``t12``, ``t13``, ``t3w``."""
    if kind == "tx_rx":
        return f"t{a + 1}{b + 1}"
    return f"t{a + 1}w" if n_waits == 1 else f"t{a + 1}w{b + 1}"


def chain_schedule(n_tags: int, delays: Sequence[float],
                   failed: frozenset[int] | set[int] = frozenset()) -> ChainPlan:
    """Transmission plan where each live tag sends exactly one packet."""
    if n_tags < 2:
        raise ValueError("a ranging chain needs at least 2 tags")
    live = [k for k in range(n_tags) if k not in failed]
    packets = []
    for pos, k in enumerate(live):
        trigger = live[pos - 1] if pos else None
        packets.append(PlannedPacket(k, trigger, float(delays[k]) if pos else 0.0))
    meas: dict[int, list[tuple[str, int, int]]] = {k: [] for k in live}
    for pos, i in enumerate(live):
        for j in live[pos + 1:]:
            meas[i].append(("tx_rx", i, j))
    for pos, j in enumerate(live):
        if pos < 2:
            continue
        # waits from every earlier packet up to (not including) the trigger
        for i in live[:pos - 1]:
            meas[j].append(("wait", j, i))
    return ChainPlan(tuple(packets), {k: tuple(v) for k, v in meas.items()})


@dataclass
class TimingRecord:
    """Intervals measured during one round, in seconds of each tag's local clock."""

    n_tags: int
    delays: tuple[float, ...]
    responders: frozenset[int]
    tx_rx: dict[tuple[int, int], float] = field(default_factory=dict)
    waits: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def t12(self) -> float | None:
        return self.tx_rx.get((0, 1))

    @property
    def t23(self) -> float | None:
        return self.tx_rx.get((1, 2))

    @property
    def t13(self) -> float | None:
        return self.tx_rx.get((0, 2))

    @property
    def t3w(self) -> float | None:
        return self.waits.get((2, 0))

    def trigger_of(self, tag: int) -> int | None:
        earlier = [k for k in self.responders if k < tag]
        return max(earlier) if earlier else None

    def to_json(self) -> dict:
        return {
            "n_tags": self.n_tags,
            "delays": list(self.delays),
            "responders": sorted(self.responders),
            "tx_rx": [[i, j, v] for (i, j), v in sorted(self.tx_rx.items())],
            "waits": [[j, i, v] for (j, i), v in sorted(self.waits.items())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TimingRecord":
        return cls(
            n_tags=int(doc["n_tags"]),
            delays=tuple(float(d) for d in doc["delays"]),
            responders=frozenset(int(k) for k in doc["responders"]),
            tx_rx={(int(i), int(j)): float(v) for i, j, v in doc["tx_rx"]},
            waits={(int(j), int(i)): float(v) for j, i, v in doc["waits"]},
        )


@dataclass
class PropagationTimes:
    tp: dict[tuple[int, int], float]
    invalid: frozenset[tuple[int, int]] = frozenset()

    def get(self, i: int, j: int) -> float | None:
        return self.tp.get((min(i, j), max(i, j)))

    def available(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.tp

    @property
    def tp12(self) -> float | None:
        return self.get(0, 1)

    @property
    def tp23(self) -> float | None:
        return self.get(1, 2)

    @property
    def tp13(self) -> float | None:
        return self.get(0, 2)


def _as_xy(positions: Sequence[Point2] | np.ndarray) -> np.ndarray:
    if isinstance(positions, np.ndarray):
        return positions.astype(float).reshape(-1, 2)
    return np.array([[p.x, p.y] for p in positions], dtype=float)


def simulate_round(tag_positions: Sequence[Point2] | np.ndarray,
                   delays: Sequence[float],
                   clock_ppm: Sequence[float] | None = None,
                   failed: frozenset[int] | set[int] = frozenset(),
                   rng: np.random.Generator | None = None,
                   timing_jitter_std: float = 0.0) -> TimingRecord:
    """Forward-simulate one ranging round and return what the tags measure.

    A tag whose clock has fractional frequency error ``e`` reads a true interval
    ``tau`` as ``tau * (1 + e)`` and therefore waits ``delay / (1 + e)`` of true
    time when told to wait ``delay``.
    """
    xy = _as_xy(tag_positions)
    n = len(xy)
    ppm = np.zeros(n) if clock_ppm is None else np.asarray(clock_ppm, dtype=float)
    live = [k for k in range(n) if k not in failed]
    if len(live) < 2:
        raise RoundAborted(f"only {len(live)} live tag(s) in the round")
    if timing_jitter_std > 0 and rng is None:
        raise ValueError("timing jitter requires an rng")
    plan = chain_schedule(n, delays, failed)

    diff = xy[:, None, :] - xy[None, :, :]
    tp = np.sqrt((diff ** 2).sum(axis=-1)) / SPEED_OF_LIGHT

    tx_time: dict[int, float] = {}
    for pkt in plan.packets:
        if pkt.trigger is None:
            tx_time[pkt.sender] = 0.0
        else:
            local_delay = pkt.delay / (1.0 + ppm[pkt.sender])
            tx_time[pkt.sender] = tx_time[pkt.trigger] + tp[pkt.trigger, pkt.sender] + local_delay

    def rx(receiver: int, sender: int) -> float:
        return tx_time[sender] + tp[sender, receiver]

    def measured(tag: int, true_interval: float) -> float:
        value = true_interval * (1.0 + ppm[tag])
        if timing_jitter_std > 0:
            value += rng.normal(0.0, timing_jitter_std)
        return float(value)

    rec = TimingRecord(n, tuple(float(d) for d in delays), frozenset(live))
    for tag in live:
        for kind, a, b in plan.measurements[tag]:
            if kind == "tx_rx":
                rec.tx_rx[(a, b)] = measured(tag, rx(a, b) - tx_time[a])
            else:
                trig = plan.trigger_of(a)
                rec.waits[(a, b)] = measured(tag, rx(a, trig) - rx(a, b))
    return rec


def recover_propagation_times(rec: TimingRecord, tolerance: float = 1e-12) -> PropagationTimes:
    """Invert a timing record into pairwise one-way propagation times.

    Pairs whose inputs are missing are left out. Pairs whose recovered time is
    below ``-tolerance`` seconds are reported in ``invalid`` instead.
    """
    tp: dict[tuple[int, int], float] = {}
    invalid = set()
    live = sorted(rec.responders)
    for pos, i in enumerate(live):
        for j in live[pos + 1:]:
            t = rec.tx_rx.get((i, j))
            if t is None:
                continue
            if rec.trigger_of(j) == i:
                wait = 0.0
            else:
                wait = rec.waits.get((j, i))
                if wait is None:
                    continue
            value = (t - rec.delays[j] - wait) / 2.0
            if value < -tolerance:
                invalid.add((i, j))
            else:
                tp[(i, j)] = value
    return PropagationTimes(tp, frozenset(invalid))

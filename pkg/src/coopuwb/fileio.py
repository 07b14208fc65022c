"""Scenario JSON, measurement replay CSV and result export.

Scenario files are strict JSON objects whose keys are the ``Scenario`` field
names. Replay logs are CSV with header ``kind,period,id_a,id_b,value``:

* ``toa`` rows: ``id_a`` = tag, ``id_b`` = anchor, ``value`` = arrival time in s
* ``twr`` rows: ``id_a``/``id_b`` = tag pair, ``value`` = distance in m

Everything written here is byte-stable for identical input: keys are sorted
and floats are written with ``repr`` so they read back exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .engine import PeriodMeasurements
from .geometry import AnchorSet, Point2, Room, Scenario, validate_scenario
from .measurement import MeasurementBundle, form_tdoa
from .metrics import CdfSeries

REPLAY_HEADER = ["kind", "period", "id_a", "id_b", "value"]
_SCENARIO_FIELDS = {f.name for f in fields(Scenario)}
_REQUIRED = {"room", "anchors", "tag_truths"}


class ScenarioError(ValueError):
    def __init__(self, path: str | Path, problems: Sequence[str]) -> None:
        self.path = str(path)
        self.problems = list(problems)
        super().__init__(f"{path}: " + "; ".join(self.problems))


class ReplayError(ValueError):
    pass


def _num(value: Any, name: str, problems: list[str], kind=float):
    try:
        out = kind(float(value)) if kind is int else float(value)
    except (TypeError, ValueError, OverflowError):
        problems.append(f"field '{name}': expected a number, got {value!r}")
        return None
    if kind is int and float(value) != out:
        problems.append(f"field '{name}': expected an integer, got {value!r}")
    if kind is float and not math.isfinite(out):
        problems.append(f"field '{name}': not finite")
    return out


def _point(value: Any, name: str, problems: list[str]) -> Point2 | None:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        problems.append(f"field '{name}': expected [x, y]")
        return None
    x, y = _num(value[0], name, problems), _num(value[1], name, problems)
    if x is None or y is None or not (math.isfinite(x) and math.isfinite(y)):
        return None
    return Point2(x, y)


def scenario_from_dict(doc: Any, source: str | Path = "<scenario>", strict: bool = True) -> Scenario:
    """Build and validate a scenario, collecting every problem before raising."""
    if not isinstance(doc, dict):
        raise ScenarioError(source, ["top level must be a JSON object"])
    problems: list[str] = []
    unknown = sorted(set(doc) - _SCENARIO_FIELDS)
    if unknown and strict:
        problems.extend(f"unknown field '{k}'" for k in unknown)
    missing = sorted(_REQUIRED - set(doc))
    problems.extend(f"missing required field '{k}'" for k in missing)
    if missing:
        raise ScenarioError(source, problems)

    kw: dict[str, Any] = {}
    room = doc["room"]
    if isinstance(room, dict) and set(room) == {"x_min", "y_min", "x_max", "y_max"}:
        vals = {k: _num(room[k], f"room.{k}", problems) for k in ("x_min", "y_min", "x_max", "y_max")}
        if None not in vals.values():
            kw["room"] = Room(**vals)
    else:
        problems.append("field 'room': expected {x_min, y_min, x_max, y_max}")

    anchors = doc["anchors"]
    if isinstance(anchors, dict) and "positions" in anchors and set(anchors) <= {"positions", "reference_index"}:
        pts = [_point(p, f"anchors.positions[{i}]", problems) for i, p in enumerate(anchors["positions"])]
        ref = _num(anchors.get("reference_index", 0), "anchors.reference_index", problems, int)
        if None not in pts and ref is not None:
            kw["anchors"] = AnchorSet(tuple(pts), ref)
    else:
        problems.append("field 'anchors': expected {positions: [[x, y], ...], reference_index}")

    tags = doc["tag_truths"]
    if isinstance(tags, list):
        pts = [_point(p, f"tag_truths[{i}]", problems) for i, p in enumerate(tags)]
        if None not in pts:
            kw["tag_truths"] = tuple(pts)
    else:
        problems.append("field 'tag_truths': expected a list of [x, y]")

    for name in ("sigma_toa", "sigma_twr", "grid_step", "dt", "q_accel"):
        if name in doc:
            kw[name] = _num(doc[name], name, problems)
    for name in ("periods", "seed", "burn_in"):
        if name in doc:
            kw[name] = _num(doc[name], name, problems, int)
    for name in ("cooperative", "tdoa_correlated", "peer_uncertainty"):
        if name in doc:
            if isinstance(doc[name], bool):
                kw[name] = doc[name]
            else:
                problems.append(f"field '{name}': expected true or false")
    for name in ("reply_delays", "clock_ppm"):
        if name in doc:
            if isinstance(doc[name], list):
                kw[name] = tuple(_num(v, f"{name}[{i}]", problems) for i, v in enumerate(doc[name]))
            else:
                problems.append(f"field '{name}': expected a list of numbers")
    if "failed_tags" in doc:
        if isinstance(doc["failed_tags"], list):
            kw["failed_tags"] = frozenset(
                _num(v, f"failed_tags[{i}]", problems, int) for i, v in enumerate(doc["failed_tags"]))
        else:
            problems.append("field 'failed_tags': expected a list of tag indices")
    if problems:
        raise ScenarioError(source, problems)
    scenario = Scenario(**kw)
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioError(source, violations)
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "room": {"x_min": s.room.x_min, "y_min": s.room.y_min,
                 "x_max": s.room.x_max, "y_max": s.room.y_max},
        "anchors": {"positions": [[p.x, p.y] for p in s.anchors.positions],
                    "reference_index": s.anchors.reference_index},
        "tag_truths": [[p.x, p.y] for p in s.tag_truths],
        "sigma_toa": s.sigma_toa, "sigma_twr": s.sigma_twr, "periods": s.periods,
        "grid_step": s.grid_step, "seed": s.seed, "cooperative": s.cooperative,
        "reply_delays": list(s.reply_delays), "clock_ppm": list(s.clock_ppm),
        "failed_tags": sorted(s.failed_tags), "dt": s.dt, "q_accel": s.q_accel,
        "tdoa_correlated": s.tdoa_correlated, "burn_in": s.burn_in,
        "peer_uncertainty": s.peer_uncertainty,
    }


def scenario_hash(s: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_scenario(path: str | Path, strict: bool = True) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(path, [f"cannot read file: {exc.strerror}"]) from exc
    if not text.strip():
        raise ScenarioError(path, ["file is empty"])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(path, [f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    return scenario_from_dict(doc, path, strict=strict)


def write_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n")


# --- replay logs -----------------------------------------------------------

def dump_measurements(measurements: Sequence[PeriodMeasurements], path: str | Path) -> None:
    """Write simulated observations in the replay CSV format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_HEADER)
        for k, m in enumerate(measurements):
            period = k if m.period is None else m.period
            for t in range(m.toas.shape[0]):
                for a in range(m.toas.shape[1]):
                    v = m.toas[t, a]
                    if not np.isnan(v):
                        w.writerow(["toa", period, t, a, repr(float(v))])
            for (i, j), r in sorted(m.ranges.items()):
                w.writerow(["twr", period, i, j, repr(float(r))])


def ingest_replay(path: str | Path, n_tags: int, n_anchors: int) -> list[PeriodMeasurements]:
    """Read a replay log into per-period observations, ordered by period."""
    path = Path(path)
    out: list[PeriodMeasurements] = []
    current: PeriodMeasurements | None = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != REPLAY_HEADER:
            raise ReplayError(f"{path}:1: expected header {','.join(REPLAY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != 5:
                raise ReplayError(f"{where}: expected 5 columns, got {len(row)}")
            kind = row[0].strip()
            try:
                period, a, b = int(row[1]), int(row[2]), int(row[3])
                value = float(row[4])
            except ValueError as exc:
                raise ReplayError(f"{where}: {exc}") from exc
            if period < 0:
                raise ReplayError(f"{where}: negative period index")
            if not math.isfinite(value):
                raise ReplayError(f"{where}: non-finite value")
            if current is None or period != current.period:
                if current is not None and period < current.period:
                    raise ReplayError(f"{where}: period {period} after {current.period} (non-monotone)")
                current = PeriodMeasurements(np.full((n_tags, n_anchors), np.nan), {}, period)
                out.append(current)
            if kind == "toa":
                if not 0 <= a < n_tags:
                    raise ReplayError(f"{where}: unknown tag id {a}")
                if not 0 <= b < n_anchors:
                    raise ReplayError(f"{where}: unknown anchor id {b}")
                if not np.isnan(current.toas[a, b]):
                    raise ReplayError(f"{where}: duplicate toa for tag {a}, anchor {b}")
                current.toas[a, b] = value
            elif kind == "twr":
                if not (0 <= a < n_tags and 0 <= b < n_tags) or a == b:
                    raise ReplayError(f"{where}: invalid tag pair ({a}, {b})")
                pair = (min(a, b), max(a, b))
                if pair in current.ranges:
                    raise ReplayError(f"{where}: duplicate twr for pair {pair} in period {period}")
                current.ranges[pair] = value
            else:
                raise ReplayError(f"{where}: unknown kind {kind!r}")
    for m in out:
        m.ranges = dict(sorted(m.ranges.items()))
    return out


def replay_bundles(measurements: Sequence[PeriodMeasurements], anchors: AnchorSet
                   ) -> list[dict[int, MeasurementBundle]]:
    """Per period, each tag's TDOA bundle against the reference anchor."""
    result = []
    for m in measurements:
        per = {}
        for t in range(m.toas.shape[0]):
            if np.all(np.isnan(m.toas[t])):
                continue
            idx, vals = form_tdoa(m.toas[t], anchors.reference_index)
            per[t] = MeasurementBundle(idx, vals)
        result.append(per)
    return result


# --- export ----------------------------------------------------------------

@dataclass
class ExportBundle:
    seed: int
    scenario_hash: str
    modes: list[str]
    # mode -> tag -> (period indices, Nx2 positions)
    estimates: dict[str, dict[int, tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    cdfs: dict[str, CdfSeries] = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def export_results(bundle: ExportBundle, out_dir: str | Path) -> list[Path]:
    """Write ``summary.json``, ``cdf_<mode>.csv`` and ``<mode>/estimates_<tag>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {"seed": bundle.seed, "scenario_hash": bundle.scenario_hash,
               "modes": list(bundle.modes), **bundle.summary}
    path = out / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    written.append(path)
    for mode, series in sorted(bundle.cdfs.items()):
        path = out / f"cdf_{mode}.csv"
        _write_csv(path, ["value", "fraction"], zip(series.values, series.fractions))
        written.append(path)
    for mode, per_tag in sorted(bundle.estimates.items()):
        sub = out / mode
        sub.mkdir(exist_ok=True)
        for tag, (periods, xy) in sorted(per_tag.items()):
            path = sub / f"estimates_{tag}.csv"
            _write_csv(path, ["period", "x", "y"],
                       ((int(p), float(q[0]), float(q[1])) for p, q in zip(periods, xy)))
            written.append(path)
    for name, (header, rows) in sorted(bundle.tables.items()):
        path = out / f"{name}.csv"
        _write_csv(path, header, rows)
        written.append(path)
    return written


def read_estimates(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(int(p), float(x), float(y)) for p, x, y in reader]
    periods = np.array([r[0] for r in rows], dtype=int)
    xy = np.array([[r[1], r[2]] for r in rows], dtype=float).reshape(-1, 2)
    return periods, xy


def read_cdf(path: str | Path) -> CdfSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(float(v), float(f)) for v, f in reader]
    return CdfSeries(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))

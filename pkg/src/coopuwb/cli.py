"""Command-line entry point.

    coopuwb simulate   --scenario FILE --out DIR [--mode tdoa|coop|both] [--seed N] [--dump-measurements]
    coopuwb montecarlo --scenario FILE --configs N --out DIR [--seed N] [--jobs J]
    coopuwb replay     --log FILE --layout FILE --out DIR [--mode tdoa|coop|both]
    coopuwb validate   --scenario FILE
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import ConfigResult, Estimator, RunResult, run_monte_carlo, simulate_measurements
from .fileio import (ExportBundle, ReplayError, ScenarioError, dump_measurements, export_results,
                     ingest_replay, parse_scenario, scenario_hash, write_scenario)
from .geometry import Scenario
from .metrics import cdf, cep, compare_algorithms, positioning_errors

log = logging.getLogger("coopuwb")

CEP_FRACTION = 0.68
MODES = {"tdoa": [False], "coop": [True], "both": [False, True]}


def run_summary(run: RunResult) -> dict:
    """Per-tag precision and accuracy after the scenario's burn-in."""
    s = run.scenario
    tags = {}
    for t in range(s.n_tags):
        est = run.estimates(t, s.burn_in)
        entry = {"n_estimates": int(len(est)), "dropped_periods": len(run.dropped.get(t, []))}
        if len(est):
            c = cep(est, CEP_FRACTION)
            entry.update(
                cep68=c.radius,
                cep68_truth=cep(est, CEP_FRACTION, center=s.tag_truths[t]).radius,
                centroid=[c.center.x, c.center.y],
                accuracy=float(positioning_errors(est, s.tag_truths[t]).mean()),
            )
        tags[str(t)] = entry
    return {"burn_in": s.burn_in, "tags": tags}


def run_error_cdf(run: RunResult):
    s = run.scenario
    errs = [positioning_errors(run.estimates(t, s.burn_in), s.tag_truths[t]) for t in range(s.n_tags)]
    errs = np.concatenate(errs) if errs else np.zeros(0)
    return cdf(errs) if len(errs) else None


def runs_export(runs: Sequence[RunResult], scenario: Scenario, kind: str) -> ExportBundle:
    bundle = ExportBundle(seed=scenario.seed, scenario_hash=scenario_hash(scenario),
                          modes=[r.mode for r in runs])
    bundle.summary = {"command": kind, "cep_fraction": CEP_FRACTION,
                      "results": {r.mode: run_summary(r) for r in runs}}
    for r in runs:
        bundle.estimates[r.mode] = {t: (r.periods[t], r.positions[t]) for t in range(scenario.n_tags)}
        series = run_error_cdf(r)
        if series is not None:
            bundle.cdfs[r.mode] = series
    return bundle


def config_ceps(res: ConfigResult, burn_in: int) -> list[tuple]:
    rows = []
    for t, truth in enumerate(res.tags):
        a = res.tdoa.estimates(t, burn_in)
        b = res.coop.estimates(t, burn_in)
        if len(a) == 0 or len(b) == 0:
            continue
        rows.append((res.index, t, truth.x, truth.y,
                     cep(a, CEP_FRACTION).radius, cep(b, CEP_FRACTION).radius,
                     cep(a, CEP_FRACTION, center=truth).radius, cep(b, CEP_FRACTION, center=truth).radius))
    return rows


def montecarlo_export(results: Sequence[ConfigResult], base: Scenario, seed: int) -> ExportBundle:
    rows, failed = [], []
    for res in results:
        if res.error is not None:
            failed.append({"config": res.index, "error": res.error})
            continue
        rows.extend(config_ceps(res, base.burn_in))
    bundle = ExportBundle(seed=seed, scenario_hash=scenario_hash(base), modes=["tdoa", "coop"])
    summary = {"command": "montecarlo", "cep_fraction": CEP_FRACTION, "n_configs": len(results),
               "failed_configs": failed, "burn_in": base.burn_in}
    if rows:
        cmp = compare_algorithms([r[4] for r in rows], [r[5] for r in rows])
        summary["comparison"] = cmp.to_json()
        summary["truth_centered"] = compare_algorithms([r[6] for r in rows], [r[7] for r in rows]).to_json()
        bundle.cdfs = {"tdoa": cmp.cdf_tdoa, "coop": cmp.cdf_coop}
    bundle.summary = summary
    bundle.tables["ceps"] = (["config", "tag", "x", "y", "cep_tdoa", "cep_coop",
                              "cep_truth_tdoa", "cep_truth_coop"], rows)
    return bundle


def _load(path: str, seed: int | None = None) -> Scenario:
    s = parse_scenario(path)
    return s if seed is None else replace(s, seed=seed)


def cmd_validate(args) -> int:
    s = parse_scenario(args.scenario)
    print(f"{args.scenario}: valid ({s.n_tags} tags, {len(s.anchors)} anchors, {s.periods} periods)")
    return 0


def cmd_simulate(args) -> int:
    s = _load(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meas = simulate_measurements(s, np.random.default_rng(s.seed))
    runs = [Estimator(s, cooperative=c).run(meas, seed=s.seed) for c in MODES[args.mode]]
    export_results(runs_export(runs, s, "simulate"), out)
    if args.dump_measurements:
        dump_measurements(meas, out / "measurements.csv")
        write_scenario(s, out / "layout.json")
    return 0


def cmd_replay(args) -> int:
    s = parse_scenario(args.layout)
    meas = ingest_replay(args.log, s.n_tags, len(s.anchors))
    runs = [Estimator(s, cooperative=c).run(meas, seed=s.seed) for c in MODES[args.mode]]
    export_results(runs_export(runs, s, "replay"), args.out)
    return 0


def cmd_montecarlo(args) -> int:
    s = _load(args.scenario, args.seed)
    results = run_monte_carlo(s, args.configs, seed=s.seed, n_jobs=args.jobs)
    bundle = montecarlo_export(results, s, s.seed)
    export_results(bundle, args.out)
    cmp = bundle.summary.get("comparison")
    if cmp:
        print(f"median CEP68: tdoa {cmp['median_tdoa']:.3f} m, coop {cmp['median_coop']:.3f} m; "
              f"max coop {cmp['max_coop']:.3f} m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopuwb", description="Cooperative TDOA/TWR UWB positioning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate one scenario and estimate tag positions")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=sorted(MODES), default="both")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dump-measurements", action="store_true",
                    help="also write measurements.csv and layout.json for replay")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("montecarlo", help="paired TDOA-only / cooperative runs over random placements")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--configs", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("replay", help="run the estimator on a recorded measurement log")
    sp.add_argument("--log", required=True)
    sp.add_argument("--layout", required=True, help="scenario JSON declaring room, anchors and tags")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=sorted(MODES), default="both")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("validate", help="check a scenario file")
    sp.add_argument("--scenario", required=True)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"{exc.path}: {problem}", file=sys.stderr)
        return 1
    except (ReplayError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

    tompc run <scenario> --out DIR [--mode tompc|oampc|fddp|id] [--seed N]
    tompc sweep table1 --out DIR [--seed N]
    tompc check

`run` accepts a scenario JSON path or a bundled scenario name.  The worker
pool for the per-timestep safety QPs is capped by the TOMPC_THREADS
environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _cmd_run(args) -> int:
    from .scenarios import Scenario
    from .simulate import simulate, write_outputs

    scenario = Scenario.load(args.scenario)
    log = simulate(scenario, mode=args.mode, seed=args.seed)
    metrics = write_outputs(log, scenario, args.out, diagnostics=True)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    from .scenarios import Scenario
    from .simulate import simulate, write_outputs

    if args.table != "table1":
        print(f"unknown sweep {args.table!r}; available: table1",
              file=sys.stderr)
        return 2
    scenario = Scenario.load("scenario1_sphere")
    out = Path(args.out)
    rows = []
    runs = ([("tompc", {"horizon": T}, f"tompc_T{T}") for T in (10, 30, 50)]
            + [("fddp", {"horizon": 10, "barrier": sig}, f"fddp_T10_sig{sig:g}")
               for sig in (2.0, 3.0, 10.0)])
    for mode, over, label in runs:
        cfg = scenario.planner_config(mode)
        cfg = replace(cfg, horizon=over["horizon"])
        if "barrier" in over:
            cfg = replace(cfg, weights=replace(cfg.weights,
                                               barrier=over["barrier"]))
        sc = replace_scenario_planner(scenario, cfg)
        log = simulate(sc, seed=args.seed)
        metrics = write_outputs(log, sc, out / label, diagnostics=True)
        rows.append({
            "label": label,
            "mode": mode,
            "horizon": cfg.horizon,
            "barrier": cfg.weights.barrier if mode == "fddp" else "",
            "min_distance_m": metrics["min_distance_m"],
            "pos_err_rms_m": metrics["pos_err_rms_m"],
            "cycle_time_mean_us": float(log.cyc_time_us.mean()),
            "cycle_time_max_us": float(log.cyc_time_us.max()),
        })
        print(f"{label}: min distance {metrics['min_distance_m']:.4f} m, "
              f"mean cycle {rows[-1]['cycle_time_mean_us'] / 1e3:.1f} ms")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        wr.writeheader()
        wr.writerows(rows)
    return 0


def replace_scenario_planner(scenario, cfg):
    import copy
    sc = copy.copy(scenario)
    sc.planner = cfg
    return sc


def _cmd_check(args) -> int:
    from .checks import run_all_checks

    return 0 if run_all_checks(verbose=True) else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tompc",
                                 description="task-oriented MPC toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario closed loop")
    p_run.add_argument("scenario", help="scenario JSON path or bundled name")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--mode", default=None,
                       choices=["tompc", "oampc", "fddp", "id"])
    p_run.add_argument("--seed", type=int, default=0)
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a predefined study")
    p_sweep.add_argument("table", help="study name (table1)")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_check = sub.add_parser("check", help="run the numeric oracle suite")
    p_check.set_defaults(fn=_cmd_check)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

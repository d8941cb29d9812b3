"""Command-line interface: single exploration runs and batch sweeps."""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys

from bimodal_explorer.engine import (
    EXIT_BUDGET_FAILURE,
    EXIT_SCENARIO_ERROR,
    EXIT_SUCCESS,
    RunConfig,
    run_exploration,
)
from bimodal_explorer.world import ScenarioError, load_scenario


def _run_one(scenario_path, energy, time, iters, seed, out_dir):
    """One exploration run; returns (exit_code, summary dict)."""
    try:
        scenario = load_scenario(scenario_path)
        cfg = RunConfig.from_header(scenario.header, energy=energy, time=time,
                                    iters=iters, seed=seed)
        result = run_exploration(scenario, cfg)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR, {"status": "scenario_error", "error": str(e)}
    if out_dir:
        result.metrics.write(out_dir)
    return result.exit_code, result.metrics.summary


def cmd_explore(args) -> int:
    code, summary = _run_one(args.scenario, args.energy, args.time, args.iters,
                             args.seed, args.out)
    if summary.get("status") != "scenario_error":
        print(json.dumps({k: summary[k] for k in
                          ("status", "coverage", "e_remaining", "t_remaining",
                           "modality_ratio", "cycles")}, sort_keys=True))
    return code


def _sweep_tasks(spec: dict):
    pairs = spec.get("budget_pairs")
    if not pairs:
        pairs = [[spec.get("energy"), spec.get("time")]]
    iters_list = spec.get("iteration_thresholds") or [spec.get("iters")]
    seeds = spec.get("seeds") or [0]
    if not seeds:
        raise ValueError("sweep spec needs at least one seed")
    for e, t in pairs:
        for it in iters_list:
            for s in seeds:
                yield e, t, it, s


def run_label(energy, time, iters, seed) -> str:
    e = "d" if energy is None else f"{energy:g}"
    t = "d" if time is None else f"{time:g}"
    i = "d" if iters is None else f"{iters}"
    return f"E{e}_T{t}_I{i}_s{seed}"


def aggregate(summaries: list[dict]) -> dict:
    """Pure fold of per-run summaries into per-setting medians."""

    def med(xs):
        xs = sorted(xs)
        n = len(xs)
        if n == 0:
            return None
        mid = n // 2
        return xs[mid] if n % 2 else (xs[mid - 1] + xs[mid]) / 2.0

    by_setting: dict[tuple, list[dict]] = {}
    for s in summaries:
        key = (s["e_all"], s["t_all"], s["iterations"])
        by_setting.setdefault(key, []).append(s)
    rows = []
    for (e_all, t_all, iters), runs in sorted(by_setting.items()):
        ratios = [r["modality_ratio"] for r in runs]
        ratios = [math.inf if r == "inf" else float(r) for r in ratios]
        rows.append({
            "e_all": e_all,
            "t_all": t_all,
            "iterations": iters,
            "runs": len(runs),
            "successes": sum(1 for r in runs if r["status"] == "success"),
            "median_modality_ratio": med(ratios),
            "median_e_remaining": med([r["e_remaining"] for r in runs]),
            "median_t_remaining": med([r["t_remaining"] for r in runs]),
            "median_coverage": med([r["coverage"] for r in runs]),
        })
    return {"settings": rows}


def cmd_sweep(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    scenario_path = spec["scenario"]
    if not os.path.isabs(scenario_path):
        scenario_path = os.path.join(os.path.dirname(os.path.abspath(args.spec)),
                                     scenario_path)
    out_root = spec.get("out", "runs")
    os.makedirs(out_root, exist_ok=True)
    tasks = list(_sweep_tasks(spec))
    jobs = args.jobs or 1
    results = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = []
            for e, t, it, s in tasks:
                out_dir = os.path.join(out_root, run_label(e, t, it, s))
                futures.append(pool.submit(_run_one, scenario_path, e, t, it, s,
                                           out_dir))
            for fut in futures:
                results.append(fut.result())
    else:
        for e, t, it, s in tasks:
            out_dir = os.path.join(out_root, run_label(e, t, it, s))
            results.append(_run_one(scenario_path, e, t, it, s, out_dir))

    codes = [c for c, _ in results]
    summaries = [s for c, s in results if c != EXIT_SCENARIO_ERROR]
    agg = aggregate(summaries)
    with open(os.path.join(out_root, "aggregate.json"), "w") as fh:
        json.dump(agg, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(agg, indent=1, sort_keys=True))
    return max(codes) if codes else EXIT_SUCCESS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="bimodal-explorer",
        description="Energy- and time-aware bimodal exploration simulator",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("explore", help="run one exploration")
    p_exp.add_argument("scenario", help="scene file path")
    p_exp.add_argument("--energy", type=float, default=None)
    p_exp.add_argument("--time", type=float, default=None)
    p_exp.add_argument("--iters", type=int, default=None)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--out", default=None, help="output directory")
    p_exp.set_defaults(func=cmd_explore)

    p_sw = sub.add_parser("sweep", help="run a batch experiment from a JSON spec")
    p_sw.add_argument("spec", help="sweep spec JSON path")
    p_sw.add_argument("--jobs", type=int, default=1)
    p_sw.set_defaults(func=cmd_sweep)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

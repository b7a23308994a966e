"""Command-line entry point.

Subcommands
-----------
* ``cost-table``   -- emit the six-row communication-volume table as CSV and
  check it against the published values (``--strict`` uses tolerance 0,
  which deliberately fails on the rounded rows to document the rounding).
* ``simulate``     -- run one training iteration from a config file or named
  preset and write the report plus timeline/ledger artifacts.
* ``reshard-plan`` -- emit the weight-resharding step plan (JSON) and the
  memory timeline of its execution (CSV).
* ``linearity``    -- fixed per-node load scaling sweep over a node list.
* ``verify``       -- run the acceptance suite and print a pass/fail matrix.

Exit codes (stable): 0 success; 1 tolerance or acceptance failure;
2 configuration/usage error; 3 infeasible scenario (out of memory);
4 protocol deadlock.  ``RLDF_SEED`` overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import costmodel
from .config import ScenarioConfig, load_scenario
from .core import ConfigError
from .dock import DeadlockError, ProtocolError
from .pipeline import run_iteration, run_linearity
from .presets import (PRESETS, PUBLISHED_COST_TABLE,
                      PUBLISHED_COST_TABLE_REL_TOL, SCHEMA_VERSION,
                      ScenarioPreset, get_preset)
from .reshard import (ReshardError, execute_allgather_swap, execute_naive,
                      plan_reshard)
from .simnet import OutOfMemoryError, Simulation, summary_json, timeline_csv

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_OOM = 3
EXIT_DEADLOCK = 4

_EXECUTOR_FLAG = {"naive": "naive", "allgather-swap": "allgather_swap"}


def _seed(args) -> int:
    env = os.environ.get("RLDF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"RLDF_SEED must be an integer, got {env!r}")
    return args.seed


def _load(args) -> tuple[ScenarioConfig, ScenarioPreset | None]:
    if getattr(args, "preset", None):
        preset = get_preset(args.preset)
        return preset.scenario, preset
    if getattr(args, "config", None):
        return load_scenario(args.config), None
    raise ConfigError("one of --config or --preset is required")


def _apply_overrides(scenario: ScenarioConfig, args) -> ScenarioConfig:
    from dataclasses import replace
    if getattr(args, "mode", None):
        scenario = replace(scenario, dock=replace(scenario.dock, mode=args.mode))
    return scenario


def _write_json(path: str, payload: dict):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args) -> str:
    out = args.output or "."
    os.makedirs(out, exist_ok=True)
    return out


# -- cost-table ----------------------------------------------------------------


def cmd_cost_table(args) -> int:
    rows = costmodel.table1()
    header = ["G", "N", "PL", "n", "SL", "M", "tcv_gib", "t100_s", "t1k_s"]
    try:
        fh = open(args.output, "w", newline="") if args.output else sys.stdout
        try:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([r.global_batch, r.responses_per_prompt,
                            r.prompt_len, r.response_like_items,
                            r.response_len, r.scalar_items,
                            repr(r.tcv_gb), repr(r.t100_s), repr(r.t1k_s)])
        finally:
            if args.output:
                fh.close()
    except OSError as exc:
        print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    tol = 0.0 if args.strict else PUBLISHED_COST_TABLE_REL_TOL
    failures = []
    for i, (row, published) in enumerate(zip(rows, PUBLISHED_COST_TABLE)):
        got = (row.tcv_gb, row.t100_s, row.t1k_s)
        for got_v, want_v, label in zip(got, published, ("tcv", "t100", "t1k")):
            if abs(got_v - want_v) > tol * abs(want_v):
                failures.append(f"row {i + 1} {label}: computed {got_v} vs "
                                f"published {want_v}")
    if failures:
        for f in failures:
            print(f"tolerance failure: {f}", file=sys.stderr)
        if args.strict:
            print("note: the published table prints rounded values; "
                  "strict mode documents that rounding.", file=sys.stderr)
        return EXIT_TOLERANCE
    print(f"6 rows within {tol:.1%} of the published table", file=sys.stderr)
    return EXIT_OK


# -- simulate ------------------------------------------------------------------


def _check_expected(report, preset: ScenarioPreset) -> list[str]:
    failures = []
    exp = preset.expected
    if "ete_s" in exp:
        want, tol = exp["ete_s"]["value"], exp["ete_s"].get("rel_tol", 0.0)
        if abs(report.ete_s - want) > tol * abs(want):
            failures.append(f"ete_s {report.ete_s} vs expected {want} "
                            f"(rel_tol {tol})")
    if "ledger_bytes" in exp:
        got = sum(report.per_tag_bytes.get(t, 0)
                  for t in ("sample_flow", "metadata"))
        want = exp["ledger_bytes"]["value"]
        if abs(got - want) > exp["ledger_bytes"].get("abs_tol", 0):
            failures.append(f"ledger {got} bytes vs expected {want}")
    return failures


def cmd_simulate(args) -> int:
    scenario, preset = _load(args)
    scenario = _apply_overrides(scenario, args)
    out = _outdir(args)
    artifacts: dict = {}
    report = run_iteration(scenario, executor=_EXECUTOR_FLAG[args.reshard],
                           seed=_seed(args), artifacts=artifacts)
    _write_json(os.path.join(out, "iteration_report.json"), report.to_dict())
    sim = artifacts["sim"]
    _write_json(os.path.join(out, "ledger.json"), summary_json(sim))
    timeline_csv(sim, os.path.join(out, "timeline.csv"))
    print(f"mode={report.mode} executor={report.executor} "
          f"ete={report.ete_s:.3f}s dispatch={report.dispatch_time_s:.3f}s "
          f"-> {out}", file=sys.stderr)
    if preset is not None:
        failures = _check_expected(report, preset)
        if failures:
            for f in failures:
                print(f"tolerance failure ({preset.name}): {f}",
                      file=sys.stderr)
            return EXIT_TOLERANCE
    return EXIT_OK


# -- reshard-plan --------------------------------------------------------------


def cmd_reshard_plan(args) -> int:
    scenario, _ = _load(args)
    out = _outdir(args)
    plan = plan_reshard(scenario.model, scenario.layout_update,
                        scenario.layout_generation,
                        scenario.cluster.world_size)
    problems = plan.validate()
    if problems:
        print("invalid plan: " + "; ".join(problems), file=sys.stderr)
        return EXIT_CONFIG
    _write_json(os.path.join(out, "reshard_plan.json"), plan.to_dict())
    sim = Simulation(scenario.cluster)
    executor = (execute_naive if args.executor == "naive"
                else execute_allgather_swap)
    report = executor(scenario.model, scenario.layout_update,
                      scenario.layout_generation, scenario.cluster, sim)
    _write_json(os.path.join(out, "reshard_report.json"), report.to_dict())
    timeline_csv(sim, os.path.join(out, "reshard_timeline.csv"))
    print(f"executor={args.executor} steps={len(plan.steps)} "
          f"reshard={report.reshard_time_s:.3f}s -> {out}", file=sys.stderr)
    return EXIT_OK


# -- linearity -----------------------------------------------------------------


def cmd_linearity(args) -> int:
    if args.config or args.preset:
        scenario, _ = _load(args)
    else:
        scenario = get_preset("linearity_sweep").scenario
    try:
        nodes = [int(x) for x in args.nodes.split(",") if x]
    except ValueError:
        raise ConfigError(f"--nodes must be a comma-separated int list, "
                          f"got {args.nodes!r}")
    rows = run_linearity(scenario, nodes, args.per_node_prompts,
                         seed=_seed(args))
    out = _outdir(args)
    _write_json(os.path.join(out, "linearity.json"),
                {"rows": [r.to_dict() for r in rows]})
    with open(os.path.join(out, "linearity.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(rows[0].to_dict()) if rows else []
        w.writerow(keys)
        for r in rows:
            w.writerow([r.to_dict()[k] for k in keys])
    for r in rows:
        print(f"nodes={r.nodes:<3} mode={r.mode:<13} "
              f"dispatch={r.dispatch_time_s:8.3f}s linearity={r.linearity:.3f}",
              file=sys.stderr)
    return EXIT_OK


# -- verify --------------------------------------------------------------------


def cmd_verify(args) -> int:
    from .acceptance import format_matrix, run_acceptance
    results = run_acceptance(filter=args.filter, fault=args.inject_fault)
    print(format_matrix(results))
    if args.output:
        _write_json(args.output, {"results": [r.to_dict() for r in results]})
    if not results:
        print(f"no criteria match filter {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if all(r.passed for r in results) else EXIT_TOLERANCE


# -- parser --------------------------------------------------------------------


def _add_scenario_args(p, require=False):
    g = p.add_mutually_exclusive_group(required=require)
    g.add_argument("--config", help="scenario JSON file")
    g.add_argument("--preset", help="named preset: " + ", ".join(sorted(PRESETS)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rldataflow",
        description="Dataflow simulator for RL training systems: sample-flow "
                    "dispatch, weight resharding, and their cost models.")
    p.add_argument("--seed", type=int, default=0,
                   help="simulation seed (RLDF_SEED env var wins)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cost-table",
                       help="emit the communication-volume table as CSV")
    c.add_argument("--output", help="CSV path (default: stdout)")
    c.add_argument("--strict", action="store_true",
                   help="compare at tolerance 0 (fails on published rounding)")
    c.set_defaults(fn=cmd_cost_table)

    s = sub.add_parser("simulate", help="run one training iteration")
    _add_scenario_args(s, require=True)
    s.add_argument("--mode", choices=("centralized", "transfer_dock"),
                   help="override the dock mode")
    s.add_argument("--reshard", choices=sorted(_EXECUTOR_FLAG),
                   default="allgather-swap", help="resharding executor")
    s.add_argument("--output", help="artifact directory (default: cwd)")
    s.set_defaults(fn=cmd_simulate)

    r = sub.add_parser("reshard-plan",
                       help="emit the weight-resharding plan and timeline")
    _add_scenario_args(r, require=True)
    r.add_argument("--executor", choices=("naive", "allgather_swap"),
                   default="allgather_swap")
    r.add_argument("--output", help="artifact directory (default: cwd)")
    r.set_defaults(fn=cmd_reshard_plan)

    l = sub.add_parser("linearity", help="fixed per-node load scaling sweep")
    _add_scenario_args(l)
    l.add_argument("--nodes", default="1,2,4,8",
                   help="comma-separated ascending node counts")
    l.add_argument("--per-node-prompts", type=int, default=64)
    l.add_argument("--output", help="artifact directory (default: cwd)")
    l.set_defaults(fn=cmd_linearity)

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--filter", help="only criteria whose name contains this")
    v.add_argument("--output", help="write the result matrix as JSON")
    v.add_argument("--inject-fault", choices=("ledger",),
                   help=argparse.SUPPRESS)  # negative-control test hook
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ProtocolError, ReshardError, KeyError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfMemoryError as exc:
        print(f"infeasible scenario (out of memory): {exc}", file=sys.stderr)
        return EXIT_OOM
    except DeadlockError as exc:
        print(f"protocol deadlock: {exc}", file=sys.stderr)
        return EXIT_DEADLOCK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 on success with convergence, 1 on input errors, 2 when the
solve loop returned without converging (reports are still written).
Verbosity comes from the ``MEGA_PT_LOG`` environment variable
(debug/info/warning).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import reports
from .engine import MetaOptions, Playbook, adapt, run_meta
from .qlearn import benchmark_scaling
from .scenario import (
    BUILTIN_CHANGES,
    BUILTIN_SCENARIOS,
    Scenario,
    apply_change,
    load_scenario,
    parse_change,
)
from .solvers import Scheme

log = logging.getLogger("megapt.cli")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _setup_logging() -> None:
    level_name = os.environ.get("MEGA_PT_LOG", "warning").strip().lower()
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def _add_scenario_args(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--scenario", help="path to a scenario JSON file")
    source.add_argument(
        "--builtin",
        default="case-study",
        choices=sorted(BUILTIN_SCENARIOS),
        help="bundled scenario (default: case-study)",
    )
    parser.add_argument("--scheme", default="purple", choices=[s.value for s in Scheme])
    parser.add_argument("--c-a", type=float, default=None, help="attacker capability override")
    parser.add_argument("--gamma", type=float, default=None, help="discount override")
    parser.add_argument("--m-a", type=float, default=None, help="stay penalty override")
    parser.add_argument("--v-max", type=float, default=None, help="risk normalizer override")
    parser.add_argument("--epsilon", type=float, default=1e-6, help="convergence threshold")
    parser.add_argument("--max-iters", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None,
                        help="node-solve parallelism (default: available cores)")
    parser.add_argument("--out", default="megapt_out", help="report output directory")
    parser.add_argument("--formats", default="csv,json",
                        help="comma-separated subset of csv,json")


def _load_scenario(args) -> Scenario:
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = BUILTIN_SCENARIOS[args.builtin]()
    params = scenario.params
    if args.c_a is not None:
        params = replace(params, c_a=args.c_a)
    if args.gamma is not None:
        params = replace(params, gamma=args.gamma)
    if args.m_a is not None:
        params = replace(params, m_a=args.m_a)
    params.validate()
    v_max = scenario.v_max if args.v_max is None else args.v_max
    if v_max <= 0:
        raise ValueError(f"v_max must be positive, got {v_max:g}")
    return replace(scenario, params=params, v_max=v_max)


def _options(args) -> MetaOptions:
    return MetaOptions(
        epsilon=args.epsilon, max_iters=args.max_iters, threads=args.threads
    )


def _write(out_dir: str, documents: dict[str, str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, content in documents.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        log.info("wrote %s", path)


def _emit_playbook(args, scenario: Scenario, playbook: Playbook) -> None:
    formats = {f.strip() for f in args.formats.split(",") if f.strip()}
    unknown = formats - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown formats: {sorted(unknown)}")
    documents: dict[str, str] = {}
    if "csv" in formats:
        documents.update(reports.export_report(playbook, scenario, "tabular"))
    if "json" in formats:
        documents.update(reports.export_report(playbook, scenario, "structured"))
    _write(args.out, documents)


def cmd_solve(args) -> int:
    scenario = _load_scenario(args)
    playbook = run_meta(scenario, Scheme(args.scheme), _options(args))
    _emit_playbook(args, scenario, playbook)
    print(
        f"{scenario.name or 'scenario'}: scheme={args.scheme} "
        f"converged={playbook.converged} iterations={playbook.iterations}"
    )
    for node in scenario.network.nodes:
        print(
            f"  {node}: value={playbook.values[node]:.6g} "
            f"risk={playbook.risk[node]:.6g}"
        )
    return EXIT_OK if playbook.converged else EXIT_NOT_CONVERGED


def cmd_adapt(args) -> int:
    scenario = _load_scenario(args)
    if args.change.startswith("builtin:"):
        name = args.change.split(":", 1)[1]
        if name not in BUILTIN_CHANGES:
            raise ValueError(f"unknown builtin change {name!r}")
        change = BUILTIN_CHANGES[name]()
    else:
        with open(args.change, "r", encoding="utf-8") as fh:
            change = parse_change(fh.read())
    scheme = Scheme(args.scheme)
    options = _options(args)
    before = run_meta(scenario, scheme, options)
    changed_scenario = apply_change(scenario, change)
    after, diff = adapt(scenario, before, change, scheme, options)
    nodes_before = list(scenario.network.nodes)
    nodes_after = list(changed_scenario.network.nodes)
    _write(
        args.out,
        {
            "strategy_before.csv": reports.strategy_matrix_csv(before.strategy, nodes_before),
            "strategy_after.csv": reports.strategy_matrix_csv(after.strategy, nodes_after),
            "diff.json": reports.dumps(reports.diff_json(diff)),
            "playbook_after.json": reports.dumps(reports.playbook_json(after, changed_scenario)),
        },
    )
    print(
        f"adapt: changed_profiles={diff.changed_profiles} "
        f"strategy_rows_changed={diff.strategy_rows_changed} "
        f"extra_iterations={diff.extra_iterations}"
    )
    if not (before.converged and after.converged):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        counts = [int(x) for x in args.users.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"invalid --users list {args.users!r}") from None
    if not counts or any(c < 2 for c in counts):
        raise ValueError("--users needs counts of at least 2 devices")
    if args.scenario:
        raise ValueError(
            "bench always runs the bundled case-study scaling family; "
            "--scenario is not supported here"
        )
    rows = benchmark_scaling(counts, budget_s=args.budget_s, seed=args.seed)
    csv = reports.bench_csv(rows)
    _write(args.out, {"scaling.csv": csv})
    print(csv, end="")
    return EXIT_OK


def cmd_risk(args) -> int:
    scenario = _load_scenario(args)
    capabilities = [float(x) for x in args.c_a_sweep.split(",") if x.strip()]
    if not capabilities:
        capabilities = [scenario.params.c_a]
    scheme = Scheme(args.scheme)
    options = _options(args)
    sweep: dict[float, dict[str, float]] = {}
    all_converged = True
    for c_a in capabilities:
        run_scenario = replace(scenario, params=replace(scenario.params, c_a=c_a))
        run_scenario.params.validate()
        playbook = run_meta(run_scenario, scheme, options)
        all_converged = all_converged and playbook.converged
        sweep[c_a] = dict(playbook.risk)
    csv = reports.risk_sweep_csv(sweep, scenario.network.nodes)
    _write(args.out, {"risk_sweep.csv": csv})
    print(csv, end="")
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="megapt",
        description="Meta-game penetration testing: solve, adapt, benchmark, score",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="compute a converged playbook")
    _add_scenario_args(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_adapt = sub.add_parser("adapt", help="recompute after a scenario change")
    _add_scenario_args(p_adapt)
    p_adapt.add_argument(
        "--change",
        required=True,
        help="change JSON file, or builtin:<name> "
        f"(builtins: {', '.join(sorted(BUILTIN_CHANGES))})",
    )
    p_adapt.set_defaults(func=cmd_adapt)

    p_bench = sub.add_parser("bench", help="meta engine vs flattened Q-learning")
    _add_scenario_args(p_bench)
    p_bench.add_argument("--users", required=True, help="comma-separated device counts")
    p_bench.add_argument("--budget-s", type=float, default=30.0,
                         help="per-configuration learning budget in seconds")
    p_bench.set_defaults(func=cmd_bench)

    p_risk = sub.add_parser("risk", help="per-node risk scores over a capability sweep")
    _add_scenario_args(p_risk)
    p_risk.add_argument("--c-a-sweep", default="", help="comma-separated capabilities")
    p_risk.set_defaults(func=cmd_risk)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())

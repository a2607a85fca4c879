"""Report rendering: plot-ready CSV tables and a structured JSON playbook.

Numbers are rendered at 6 significant digits and dictionary keys are sorted,
so identical runs produce byte-identical documents.
"""

from __future__ import annotations

import json
from typing import Iterable

from .engine import DiffReport, Playbook
from .network_mdp import GlobalStrategy
from .plans import BehavioralPlan, behavioral_to_mixed
from .scenario import Scenario
from .trees import GameTree, PlanCapExceeded


class ReportError(ValueError):
    pass

MIXED_EXPORT_CAP = 256


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _round6(x: float) -> float:
    return float(_fmt(x))


def value_trace_csv(playbook: Playbook, nodes: Iterable[str]) -> str:
    nodes = list(nodes)
    lines = ["iteration," + ",".join(nodes)]
    for i, row in enumerate(playbook.value_trace, start=1):
        lines.append(f"{i}," + ",".join(_fmt(row[n]) for n in nodes))
    return "\n".join(lines) + "\n"


def strategy_matrix_csv(strategy: GlobalStrategy, nodes: Iterable[str]) -> str:
    nodes = list(nodes)
    lines = ["node," + ",".join(nodes)]
    for source in nodes:
        row = strategy.probs[source]
        lines.append(
            f"{source}," + ",".join(_fmt(row.get(target, 0.0)) for target in nodes)
        )
    return "\n".join(lines) + "\n"


def risk_csv(playbook: Playbook, nodes: Iterable[str]) -> str:
    lines = ["node,value,risk"]
    for node in nodes:
        lines.append(
            f"{node},{_fmt(playbook.values[node])},{_fmt(playbook.risk[node])}"
        )
    return "\n".join(lines) + "\n"


def risk_sweep_csv(sweep: dict[float, dict[str, float]], nodes: Iterable[str]) -> str:
    capabilities = sorted(sweep)
    lines = ["node," + ",".join(_fmt(c) for c in capabilities)]
    for node in nodes:
        lines.append(f"{node}," + ",".join(_fmt(sweep[c][node]) for c in capabilities))
    return "\n".join(lines) + "\n"


def bench_csv(rows) -> str:
    lines = ["n_users,meta_ms,rl_ms,rl_states,rl_converged"]
    for row in rows:
        lines.append(
            f"{row.n_users},{_fmt(row.meta_ms)},{_fmt(row.rl_ms)},"
            f"{row.rl_states},{str(row.rl_converged).lower()}"
        )
    return "\n".join(lines) + "\n"


def _plan_json(plan: BehavioralPlan) -> dict:
    return {ks: [_round6(p) for p in dist] for ks, dist in sorted(plan.dists.items())}


def _mixed_json(tree: GameTree, plan: BehavioralPlan) -> list[dict] | None:
    """Mixed-form view: technique assignments with their weights."""
    try:
        mixed = behavioral_to_mixed(tree, plan, cap=MIXED_EXPORT_CAP)
    except PlanCapExceeded:
        return None
    return [
        {
            "plan": {
                ks_id: tree.knowledge_set(ks_id).actions[index]
                for ks_id, index in sorted(pure.choices.items())
            },
            "weight": _round6(weight),
        }
        for pure, weight in mixed.support
    ]


def playbook_json(playbook: Playbook, scenario: Scenario) -> dict:
    nodes = list(scenario.network.nodes)
    doc = {
        "scheme": playbook.scheme.value,
        "converged": playbook.converged,
        "iterations": playbook.iterations,
        "params": {
            "c_a": scenario.params.c_a,
            "m_a": scenario.params.m_a,
            "gamma": scenario.params.gamma,
            "v_max": scenario.v_max,
        },
        "values": {n: _round6(playbook.values[n]) for n in nodes},
        "risk": {n: _round6(playbook.risk[n]) for n in nodes},
        "strategy": {
            n: {t: _round6(p) for t, p in sorted(playbook.strategy.probs[n].items())}
            for n in nodes
        },
        "profiles": {
            n: {
                "attacker": _plan_json(profile.attacker),
                "attacker_mixed": _mixed_json(scenario.trees[n], profile.attacker),
                "defender": _plan_json(profile.defender),
                "defender_mixed": _mixed_json(scenario.trees[n], profile.defender),
                "value": _round6(playbook.results[n].attacker_value),
            }
            for n, profile in sorted(playbook.profiles.items())
        },
        "value_trace": [
            {n: _round6(row[n]) for n in nodes} for row in playbook.value_trace
        ],
    }
    return doc


def diff_json(diff: DiffReport) -> dict:
    return {
        "changed_profiles": diff.changed_profiles,
        "added_nodes": diff.added_nodes,
        "removed_nodes": diff.removed_nodes,
        "strategy_rows_changed": diff.strategy_rows_changed,
        "strategy_delta": _round6(diff.strategy_delta),
        "value_delta": _round6(diff.value_delta),
        "extra_iterations": diff.extra_iterations,
        "empty": diff.empty,
        "description": diff.description,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def export_report(
    playbook: Playbook, scenario: Scenario, format: str = "tabular"
) -> dict[str, str]:
    """Render a playbook as named documents (file name -> content)."""
    nodes = list(scenario.network.nodes)
    if format == "tabular":
        return {
            "value_trace.csv": value_trace_csv(playbook, nodes),
            "strategy_matrix.csv": strategy_matrix_csv(playbook.strategy, nodes),
            "risk.csv": risk_csv(playbook, nodes),
        }
    if format == "structured":
        return {"playbook.json": dumps(playbook_json(playbook, scenario))}
    raise ReportError(f"unknown report format {format!r}")

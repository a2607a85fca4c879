"""Coupled solve loop producing converged penetration playbooks.

One iteration solves every node's local game under the current outcome
utilities, assembles the induced network strategy, evaluates it, and feeds
the resulting node values back into the next round of utilities. The loop
stops when neither the values nor the strategy move more than epsilon.
Playbooks are immutable snapshots; each iteration builds a new one.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from .network_mdp import (
    GlobalStrategy,
    Network,
    ValueFunction,
    mtg_utilities,
    policy_evaluation,
    strategy_from_profiles,
)
from .plans import BehavioralPlan, PlanProfile, PlayerValues, plan_distance
from .scenario import Scenario, ScenarioChange, apply_change, complete_defense
from .solvers import (
    Scheme,
    SolveResult,
    best_response,
    nash_equilibrium,
    purple_teaming,
)
from .trees import DEFAULT_PLAN_CAP, GameTree

log = logging.getLogger("megapt.engine")

DEFAULT_EPSILON = 1e-6
DEFAULT_MAX_ITERS = 200
CYCLE_TOL = 1e-9


class EngineError(ValueError):
    pass


@dataclass
class MetaOptions:
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = DEFAULT_MAX_ITERS
    initial_utilities: Mapping[str, Mapping[str, PlayerValues]] | None = None
    method: str = "lp"
    tolerance: float = 1e-6
    plan_cap: int = DEFAULT_PLAN_CAP
    threads: int | None = None

    def effective_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        return max(1, os.cpu_count() or 1)


@dataclass
class Playbook:
    """Converged (or best-effort) joint solution of the whole scenario."""

    scheme: Scheme
    profiles: dict[str, PlanProfile]
    results: dict[str, SolveResult]
    strategy: GlobalStrategy
    values: ValueFunction
    risk: dict[str, float]
    iterations: int
    converged: bool
    value_trace: list[dict[str, float]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def risk_score(values: ValueFunction, node: str, v_max: float) -> float:
    """Normalized exposure of a node: value over the worst-case damage,
    floored at zero and capped at one."""
    if v_max <= 0:
        raise EngineError(f"v_max must be positive, got {v_max:g}")
    return min(1.0, max(0.0, values[node]) / v_max)


def _strategy_tv(a: GlobalStrategy, b: GlobalStrategy) -> float:
    worst = 0.0
    for node, row_a in a.probs.items():
        row_b = b.probs[node]
        keys = set(row_a) | set(row_b)
        tv = 0.5 * sum(abs(row_a.get(k, 0.0) - row_b.get(k, 0.0)) for k in keys)
        worst = max(worst, tv)
    return worst


def convergence_metric(prev: Playbook, nxt: Playbook) -> float:
    """Max of the value sup-norm change and the worst per-node strategy
    total-variation distance."""
    if set(prev.values) != set(nxt.values) or set(prev.strategy.probs) != set(
        nxt.strategy.probs
    ):
        raise EngineError("playbooks cover different node sets")
    value_delta = max(
        abs(prev.values[node] - nxt.values[node]) for node in nxt.values
    )
    return max(value_delta, _strategy_tv(prev.strategy, nxt.strategy))


# ---------------------------------------------------------------------------
# micro stage


def _canonical_labels(tree: GameTree) -> dict[str, str]:
    labels = {tree.node_id: "@self"}
    for i, z in enumerate(sorted(x for x in tree.outcomes if x != tree.node_id)):
        labels[z] = f"@o{i}"
    return labels


def _tree_signature(tree: GameTree) -> str:
    """Canonical structural form of a tree, cached on the instance.

    Outcome labels are canonicalized (self first, the rest in sorted order)
    so interchangeable nodes that differ only in neighbour names collide.
    """
    cached = getattr(tree, "_canonical_signature", None)
    if cached is not None:
        return cached
    labels = _canonical_labels(tree)
    vertices = {}
    for vid in sorted(tree.vertices):
        v = tree.vertices[vid]
        vertices[vid] = (
            v.owner.value,
            v.actions,
            tuple(sorted(v.children.items())),
            v.chance_dist,
            labels.get(v.outcome) if v.outcome is not None else None,
        )
    sets = [
        (ks.id, ks.player.value, ks.members) for ks in
        sorted(tree.knowledge_sets, key=lambda k: k.id)
    ]
    signature = json.dumps([tree.root, sorted(vertices.items()), sets], default=str)
    tree._canonical_signature = signature
    return signature


def _canonical_key(
    tree: GameTree,
    utilities: Mapping[str, PlayerValues],
    defense: BehavioralPlan | None,
    scheme: Scheme,
) -> str:
    """Structural hash input: identical games solve once per stage."""
    labels = _canonical_labels(tree)
    utility_part = [
        (labels[z], round(float(utilities[z][0]), 9), round(float(utilities[z][1]), 9))
        for z in sorted(utilities, key=lambda z: labels[z])
    ]
    defense_part = (
        sorted((ks, tuple(dist)) for ks, dist in defense.dists.items())
        if defense is not None
        else None
    )
    return f"{scheme.value}|{_tree_signature(tree)}|{utility_part!r}|{defense_part!r}"


def solve_micro_stage(
    scenario: Scenario,
    scheme: Scheme,
    utilities: Mapping[str, Mapping[str, PlayerValues]],
    options: MetaOptions | None = None,
    memo: dict[str, SolveResult] | None = None,
) -> dict[str, tuple[PlanProfile, SolveResult]]:
    """Solve every node's game under the given utilities.

    Structurally identical (tree, utilities, defense) games are solved once
    and the result is shared; independent solves can run on a thread pool.
    """
    options = options or MetaOptions()
    memo = memo if memo is not None else {}
    nodes = scenario.non_terminal_nodes()
    for node in nodes:
        if node not in utilities:
            raise EngineError(f"no utilities supplied for node {node!r}")

    defenses: dict[str, BehavioralPlan | None] = {}
    for node in nodes:
        defenses[node] = (
            complete_defense(scenario, node) if scheme == Scheme.RED else None
        )

    keys = {
        node: _canonical_key(scenario.trees[node], utilities[node], defenses[node], scheme)
        for node in nodes
    }
    pending: dict[str, str] = {}
    for node in nodes:
        key = keys[node]
        if key not in memo and key not in pending:
            pending[key] = node

    def solve_one(node: str) -> SolveResult:
        tree = scenario.trees[node]
        node_utilities = utilities[node]
        try:
            if scheme == Scheme.RED:
                defense = defenses[node]
                assert defense is not None
                return best_response(tree, defense, node_utilities, options.plan_cap)
            if scheme == Scheme.PURPLE:
                return purple_teaming(
                    tree, node_utilities, options.method, options.tolerance, options.plan_cap
                )
            return nash_equilibrium(
                tree, node_utilities, options.method, options.tolerance, options.plan_cap
            )
        except Exception as exc:
            raise EngineError(f"solver failed at node {node!r}: {exc}") from exc

    workers = min(options.effective_threads(), max(1, len(pending)))
    if workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(solve_one, pending.values()))
    else:
        solved = [solve_one(node) for node in pending.values()]
    for key, result in zip(pending, solved):
        memo[key] = result

    stage: dict[str, tuple[PlanProfile, SolveResult]] = {}
    for node in nodes:
        base = memo[keys[node]]
        hit = pending.get(keys[node]) != node
        result = SolveResult(
            attacker_plan=base.attacker_plan,
            defender_plan=base.defender_plan,
            attacker_value=base.attacker_value,
            scheme=base.scheme,
            diagnostics=dict(base.diagnostics, memo_hit=hit),
        )
        stage[node] = (result.profile(), result)
    return stage


# ---------------------------------------------------------------------------
# the coupled loop


def _zero_utilities(scenario: Scenario) -> dict[str, dict[str, PlayerValues]]:
    out = {}
    for node in scenario.non_terminal_nodes():
        out[node] = {
            z: PlayerValues(0.0, 0.0) for z in scenario.network.successors(node)
        }
    return out


def _utilities_from_values(
    scenario: Scenario, values: ValueFunction
) -> dict[str, dict[str, PlayerValues]]:
    return {
        node: mtg_utilities(scenario.network, scenario.params, values, node)
        for node in scenario.non_terminal_nodes()
    }


def _average_strategy(a: GlobalStrategy, b: GlobalStrategy) -> GlobalStrategy:
    probs = {}
    for node, row_a in a.probs.items():
        row_b = b.probs[node]
        keys = set(row_a) | set(row_b)
        probs[node] = {
            k: 0.5 * (row_a.get(k, 0.0) + row_b.get(k, 0.0)) for k in keys
        }
    return GlobalStrategy(probs)


def _comparable(baseline: Playbook | None, network: Network) -> bool:
    return baseline is not None and set(baseline.values) == set(network.nodes)


def run_meta(
    scenario: Scenario,
    scheme: Scheme,
    options: MetaOptions | None = None,
    baseline: Playbook | None = None,
) -> Playbook:
    """Iterate micro solves and macro evaluation to a joint fixed point.

    Non-convergence is not an error: the best-effort playbook is returned
    with ``converged=False``. ``baseline`` warm-starts the utilities from a
    previous playbook's values and, when the node sets match, serves as the
    starting point for the convergence test.
    """
    options = options or MetaOptions()
    network, params = scenario.network, scenario.params
    network.validate()
    params.validate()

    if options.initial_utilities is not None:
        utilities = {
            node: dict(options.initial_utilities[node])
            for node in scenario.non_terminal_nodes()
        }
    elif baseline is not None:
        warm = {node: baseline.values.get(node, 0.0) for node in network.nodes}
        utilities = _utilities_from_values(scenario, warm)
    else:
        utilities = _zero_utilities(scenario)

    memo: dict[str, SolveResult] = {}
    prev = baseline if _comparable(baseline, network) else None
    trace: list[dict[str, float]] = []
    strategy_history: list[GlobalStrategy] = []
    averaged_once = False
    damped_at: int | None = None
    playbook: Playbook | None = None

    for iteration in range(1, options.max_iters + 1):
        stage = solve_micro_stage(scenario, scheme, utilities, options, memo)
        profiles = {node: pair[0] for node, pair in stage.items()}
        results = {node: pair[1] for node, pair in stage.items()}
        strategy = strategy_from_profiles(
            network, {node: (scenario.trees[node], profiles[node]) for node in profiles}
        )
        values = policy_evaluation(network, params, strategy)
        trace.append(dict(values))
        diagnostics: dict = {"epsilon": options.epsilon}
        if damped_at is not None:
            diagnostics["cycle_damped_at"] = damped_at
        playbook = Playbook(
            scheme=scheme,
            profiles=profiles,
            results=results,
            strategy=strategy,
            values=values,
            risk={n: risk_score(values, n, scenario.v_max) for n in network.nodes},
            iterations=iteration,
            converged=False,
            value_trace=trace,
            diagnostics=diagnostics,
        )

        if prev is not None:
            metric = convergence_metric(prev, playbook)
            log.debug("iteration %d metric %.3e", iteration, metric)
            playbook.diagnostics["final_metric"] = metric
            if metric < options.epsilon:
                playbook.converged = True
                return playbook

        cycle_at = next(
            (
                k
                for k in range(len(strategy_history) - 1)
                if _strategy_tv(strategy, strategy_history[k]) <= CYCLE_TOL
            ),
            None,
        )
        util_values = values
        if cycle_at is not None:
            if averaged_once:
                playbook.diagnostics["cycle"] = {
                    "first_seen": cycle_at + 1,
                    "iteration": iteration,
                }
                log.warning("strategy cycle persisted; returning unconverged playbook")
                return playbook
            # damp the loop once: evaluate a blend of the last two strategies
            averaged_once = True
            damped_at = iteration
            playbook.diagnostics["cycle_damped_at"] = iteration
            util_values = policy_evaluation(
                network, params, _average_strategy(strategy, strategy_history[-1])
            )

        utilities = _utilities_from_values(scenario, util_values)
        strategy_history.append(strategy)
        prev = playbook

    assert playbook is not None
    return playbook


# ---------------------------------------------------------------------------
# adaptation to scenario changes


@dataclass
class DiffReport:
    changed_profiles: list[str]
    added_nodes: list[str]
    removed_nodes: list[str]
    strategy_rows_changed: list[str]
    strategy_delta: float
    value_delta: float
    extra_iterations: int
    description: str = ""

    @property
    def empty(self) -> bool:
        return (
            not self.changed_profiles
            and not self.added_nodes
            and not self.removed_nodes
            and not self.strategy_rows_changed
        )


def _profile_changed(old: PlanProfile, new: PlanProfile, epsilon: float) -> bool:
    return (
        plan_distance(old.attacker, new.attacker) > epsilon
        or plan_distance(old.defender, new.defender) > epsilon
    )


def adapt(
    scenario: Scenario,
    playbook: Playbook,
    change: ScenarioChange,
    scheme: Scheme,
    options: MetaOptions | None = None,
) -> tuple[Playbook, DiffReport]:
    """Apply a local change and re-solve, warm-started from the old playbook.

    Returns the new playbook and a report of which profiles and strategy
    rows actually moved.
    """
    options = options or MetaOptions()
    changed = apply_change(scenario, change)
    new_playbook = run_meta(changed, scheme, options, baseline=playbook)

    old_nodes = set(playbook.profiles)
    new_nodes = set(new_playbook.profiles)
    changed_profiles = sorted(
        node
        for node in old_nodes & new_nodes
        if _profile_changed(playbook.profiles[node], new_playbook.profiles[node], options.epsilon)
    )
    rows_changed = []
    common_rows = set(playbook.strategy.probs) & set(new_playbook.strategy.probs)
    strategy_delta = 0.0
    for node in sorted(common_rows):
        row_a = playbook.strategy.probs[node]
        row_b = new_playbook.strategy.probs[node]
        keys = set(row_a) | set(row_b)
        tv = 0.5 * sum(abs(row_a.get(k, 0.0) - row_b.get(k, 0.0)) for k in keys)
        strategy_delta = max(strategy_delta, tv)
        if tv > options.epsilon:
            rows_changed.append(node)
    value_delta = max(
        (
            abs(playbook.values[n] - new_playbook.values[n])
            for n in set(playbook.values) & set(new_playbook.values)
        ),
        default=0.0,
    )
    report = DiffReport(
        changed_profiles=changed_profiles,
        added_nodes=sorted(new_nodes - old_nodes),
        removed_nodes=sorted(old_nodes - new_nodes),
        strategy_rows_changed=rows_changed,
        strategy_delta=strategy_delta,
        value_delta=value_delta,
        extra_iterations=max(0, new_playbook.iterations - 1),
        description=getattr(change, "description", ""),
    )
    return new_playbook, report

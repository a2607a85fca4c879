"""Solution concepts for node-level games.

Three schemes are supported: best response against a fixed defense (red
teaming), a leader-follower defense plan (purple teaming), and a Nash
equilibrium risk assessment. Purple and Nash reduce to the maximin solution
of the normal-form payoff matrix, computed by an exact simplex over rational
arithmetic with Bland's rule, with fictitious play available as a
tolerance-bounded fallback. Perfect-information trees can also be solved
directly by backward induction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .plans import (
    BehavioralPlan,
    MixedPlan,
    PlanProfile,
    PurePlan,
    expected_utility,
    mixed_to_behavioral,
    pure_to_behavioral,
)
from .trees import (
    DEFAULT_PLAN_CAP,
    GameTree,
    Player,
    TreeError,
    check_perfect_recall,
    enumerate_pure_plans,
)

ZERO_SUM_TOL = 1e-9
DEFAULT_TOLERANCE = 1e-6
FICTITIOUS_MAX_ITERS = 2_000_000


class SolverError(ValueError):
    pass


class Scheme(str, Enum):
    RED = "red"
    PURPLE = "purple"
    NASH = "nash"


@dataclass
class SolveResult:
    attacker_plan: BehavioralPlan
    defender_plan: BehavioralPlan
    attacker_value: float
    scheme: Scheme
    diagnostics: dict = field(default_factory=dict)

    def profile(self) -> PlanProfile:
        return PlanProfile(self.attacker_plan, self.defender_plan)


@dataclass
class PayoffMatrix:
    """Attacker payoffs over (attacker pure plan, defender pure plan) pairs."""

    row_plans: list[PurePlan]
    col_plans: list[PurePlan]
    values: np.ndarray


@dataclass
class _LeafTerm:
    outcome: str
    chance_prob: float
    # (knowledge set id, action index) constraints along the root path
    attacker_path: tuple[tuple[str, int], ...]
    defender_path: tuple[tuple[str, int], ...]


def _leaf_terms(tree: GameTree) -> list[_LeafTerm]:
    terms = []
    for leaf in tree.leaves():
        chance = 1.0
        attacker: list[tuple[str, int]] = []
        defender: list[tuple[str, int]] = []
        for vid, action in tree.path_from_root(leaf.id):
            vertex = tree.vertices[vid]
            index = vertex.actions.index(action)
            if vertex.owner == Player.CHANCE:
                assert vertex.chance_dist is not None
                chance *= vertex.chance_dist[index]
            else:
                ks_id = tree.knowledge_set_of(vid)
                assert ks_id is not None
                if vertex.owner == Player.ATTACKER:
                    attacker.append((ks_id, index))
                else:
                    defender.append((ks_id, index))
        assert leaf.outcome is not None
        terms.append(_LeafTerm(leaf.outcome, chance, tuple(attacker), tuple(defender)))
    return terms


def _consistent(plan: PurePlan, path: Sequence[tuple[str, int]]) -> bool:
    return all(plan.choices[ks_id] == idx for ks_id, idx in path)


def _attacker_utility(utilities: Mapping, outcome: str) -> float:
    if outcome not in utilities:
        raise SolverError(f"no utility defined for outcome {outcome!r}")
    return float(utilities[outcome][0])


def ensure_zero_sum(utilities: Mapping) -> None:
    for z, u in utilities.items():
        if abs(u[0] + u[1]) > ZERO_SUM_TOL:
            raise SolverError(
                f"utilities are not zero-sum at outcome {z!r} "
                f"({u[0]:g} + {u[1]:g} != 0)"
            )


def payoff_matrix(
    tree: GameTree, utilities: Mapping, cap: int = DEFAULT_PLAN_CAP
) -> PayoffMatrix:
    """Normal-form reduction: attacker expected utility with chance folded in."""
    rows = enumerate_pure_plans(tree, Player.ATTACKER, cap)
    cols = enumerate_pure_plans(tree, Player.DEFENDER, cap)
    values = np.zeros((len(rows), len(cols)))
    for term in _leaf_terms(tree):
        weight = term.chance_prob * _attacker_utility(utilities, term.outcome)
        if weight == 0.0:
            continue
        row_mask = np.fromiter(
            (_consistent(p, term.attacker_path) for p in rows), bool, len(rows)
        )
        col_mask = np.fromiter(
            (_consistent(p, term.defender_path) for p in cols), bool, len(cols)
        )
        values[np.ix_(row_mask, col_mask)] += weight
    if not np.all(np.isfinite(values)):
        raise SolverError("payoff matrix has non-finite entries")
    return PayoffMatrix(rows, cols, values)


def best_response(
    tree: GameTree,
    defender: BehavioralPlan,
    utilities: Mapping,
    cap: int = DEFAULT_PLAN_CAP,
) -> SolveResult:
    """Optimal attacker plan against a fixed defense (red teaming).

    A pure maximizer always exists because expected utility is linear in the
    attacker's mixing weights; ties go to the lexicographically first plan.
    """
    if not check_perfect_recall(tree, Player.ATTACKER):
        raise TreeError(f"attacker has imperfect recall at node {tree.node_id!r}")
    defender.validate(tree)
    plans = enumerate_pure_plans(tree, Player.ATTACKER, cap)
    scores = np.zeros(len(plans))
    for term in _leaf_terms(tree):
        static = term.chance_prob
        for ks_id, idx in term.defender_path:
            static *= defender.prob(ks_id, idx)
        weight = static * _attacker_utility(utilities, term.outcome)
        if weight == 0.0:
            continue
        for i, plan in enumerate(plans):
            if _consistent(plan, term.attacker_path):
                scores[i] += weight
    best = int(np.argmax(scores))
    return SolveResult(
        attacker_plan=pure_to_behavioral(tree, plans[best]),
        defender_plan=defender,
        attacker_value=float(scores[best]),
        scheme=Scheme.RED,
        diagnostics={"attacker_plans": len(plans), "best_plan_index": best},
    )


# ---------------------------------------------------------------------------
# exact simplex (rational arithmetic, Bland's rule)


def _simplex_max(
    c: list[Fraction], A: list[list[Fraction]], b: list[Fraction]
) -> tuple[list[Fraction], list[Fraction], Fraction, int]:
    """Maximize c.x subject to A.x <= b, x >= 0, with b >= 0.

    The all-slack basis is feasible, so no phase-1 is needed. Bland's rule
    keeps the pivot sequence finite and deterministic. Returns primal values,
    dual values (one per constraint), the optimum, and the pivot count.
    """
    m, n = len(A), len(c)
    zero, one = Fraction(0), Fraction(1)
    tableau = [list(row) + [one if j == i else zero for j in range(m)] + [b[i]]
               for i, row in enumerate(A)]
    obj = [-ci for ci in c] + [zero] * m + [zero]
    basis = list(range(n, n + m))

    pivots = 0
    while True:
        enter = -1
        for j in range(n + m):
            if obj[j] < 0:
                enter = j
                break
        if enter < 0:
            break
        leave = -1
        best_ratio = None
        for i in range(m):
            coeff = tableau[i][enter]
            if coeff > 0:
                ratio = tableau[i][-1] / coeff
                if (
                    best_ratio is None
                    or ratio < best_ratio
                    or (ratio == best_ratio and basis[i] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            raise SolverError("linear program is unbounded")
        pivot = tableau[leave][enter]
        tableau[leave] = [x / pivot for x in tableau[leave]]
        for i in range(m):
            if i != leave and tableau[i][enter] != 0:
                factor = tableau[i][enter]
                tableau[i] = [x - factor * y for x, y in zip(tableau[i], tableau[leave])]
        if obj[enter] != 0:
            factor = obj[enter]
            obj = [x - factor * y for x, y in zip(obj, tableau[leave])]
        basis[leave] = enter
        pivots += 1

    x = [zero] * n
    for i, var in enumerate(basis):
        if var < n:
            x[var] = tableau[i][-1]
    duals = [obj[n + i] for i in range(m)]
    return x, duals, obj[-1], pivots


def _solve_matrix_game_lp(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, dict]:
    m, n = matrix.shape
    entries = [[Fraction(float(matrix[i, j])) for j in range(n)] for i in range(m)]
    low = min(min(row) for row in entries)
    shift = Fraction(1) - low if low <= 0 else Fraction(0)
    B = [[e + shift for e in row] for row in entries]

    # column player's scaled strategy solves: max sum(q), B q <= 1, q >= 0;
    # the duals are the row player's scaled strategy.
    ones_n = [Fraction(1)] * n
    ones_m = [Fraction(1)] * m
    q, p, total, pivots = _simplex_max(ones_n, B, ones_m)
    if total <= 0:
        raise SolverError("degenerate game matrix (zero scaled value)")
    value = Fraction(1) / total - shift
    col_mix = np.array([float(qj / total) for qj in q])
    row_mix = np.array([float(pi / total) for pi in p])
    gap = _duality_gap(matrix, row_mix, col_mix)
    return row_mix, col_mix, float(value), {"method": "lp", "pivots": pivots, "duality_gap": gap}


def _duality_gap(matrix: np.ndarray, row_mix: np.ndarray, col_mix: np.ndarray) -> float:
    # what the column player could still concede vs what the row player secures
    upper = float(np.max(matrix @ col_mix))
    lower = float(np.min(row_mix @ matrix))
    return upper - lower


def _solve_matrix_game_fp(
    matrix: np.ndarray, tolerance: float, max_iters: int
) -> tuple[np.ndarray, np.ndarray, float, dict]:
    row_counts, col_counts, iters, gap = _kernels.fictitious_play(
        np.ascontiguousarray(matrix, dtype=np.float64), max_iters, tolerance
    )
    if gap > tolerance:
        raise SolverError(
            f"fictitious play did not reach gap {tolerance:g} within "
            f"{max_iters} iterations (gap {gap:.3e})"
        )
    row_mix = row_counts / row_counts.sum()
    col_mix = col_counts / col_counts.sum()
    value = float(row_mix @ matrix @ col_mix)
    return row_mix, col_mix, value, {
        "method": "fictitious_play",
        "iterations": int(iters),
        "duality_gap": float(gap),
    }


def solve_zero_sum(
    matrix: PayoffMatrix | np.ndarray,
    method: str = "lp",
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = FICTITIOUS_MAX_ITERS,
) -> tuple[np.ndarray, np.ndarray, float, dict]:
    """Maximin mixed strategies of a zero-sum matrix (row player maximizes).

    Returns (row mix, column mix, value, diagnostics). The LP method is
    exact; fictitious play stops once the duality gap is within tolerance
    and errors out at the iteration cap.
    """
    values = matrix.values if isinstance(matrix, PayoffMatrix) else np.asarray(matrix, float)
    if values.ndim != 2 or values.size == 0:
        raise SolverError("payoff matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(values)):
        raise SolverError("payoff matrix has non-finite entries")
    if method == "lp":
        row_mix, col_mix, value, diag = _solve_matrix_game_lp(values)
        if diag["duality_gap"] > tolerance:
            raise SolverError(f"duality gap {diag['duality_gap']:.3e} above {tolerance:g}")
        return row_mix, col_mix, value, diag
    if method == "fictitious":
        return _solve_matrix_game_fp(values, tolerance, max_iters)
    raise SolverError(f"unknown zero-sum method {method!r}")


def _mix_to_behavioral(
    tree: GameTree, plans: list[PurePlan], weights: np.ndarray, player: Player
) -> BehavioralPlan:
    support = [
        (plan, float(w)) for plan, w in zip(plans, weights) if w > 1e-15
    ]
    total = sum(w for _, w in support)
    support = [(p, w / total) for p, w in support]
    if not support:
        raise SolverError(f"empty {player.value} mix")
    return mixed_to_behavioral(tree, MixedPlan(player, support))


def purple_teaming(
    tree: GameTree,
    utilities: Mapping,
    method: str = "lp",
    tolerance: float = DEFAULT_TOLERANCE,
    cap: int = DEFAULT_PLAN_CAP,
) -> SolveResult:
    """Leader-follower defense plan under zero-sum utilities.

    With the defender committing first and utilities opposed, the optimal
    commitment is the column player's maximin mix of the payoff matrix; the
    anticipated attacker response is a best response to it.
    """
    _require_recall_both(tree)
    ensure_zero_sum(utilities)
    matrix = payoff_matrix(tree, utilities, cap)
    _, col_mix, value, diag = solve_zero_sum(matrix, method, tolerance)
    defender = _mix_to_behavioral(tree, matrix.col_plans, col_mix, Player.DEFENDER)
    response = best_response(tree, defender, utilities, cap)
    if abs(response.attacker_value - value) > max(tolerance, 1e-6):
        raise SolverError(
            f"best response value {response.attacker_value:g} drifted from "
            f"game value {value:g}"
        )
    diag = dict(diag, game_value=value, defender_value=-response.attacker_value)
    return SolveResult(
        attacker_plan=response.attacker_plan,
        defender_plan=defender,
        attacker_value=response.attacker_value,
        scheme=Scheme.PURPLE,
        diagnostics=diag,
    )


def nash_equilibrium(
    tree: GameTree,
    utilities: Mapping,
    method: str = "lp",
    tolerance: float = DEFAULT_TOLERANCE,
    cap: int = DEFAULT_PLAN_CAP,
) -> SolveResult:
    """Equilibrium profile of the zero-sum node game, with a deviation check."""
    _require_recall_both(tree)
    ensure_zero_sum(utilities)
    matrix = payoff_matrix(tree, utilities, cap)
    row_mix, col_mix, value, diag = solve_zero_sum(matrix, method, tolerance)
    check_tol = max(tolerance, 1e-6)
    row_payoffs = matrix.values @ col_mix
    col_payoffs = row_mix @ matrix.values
    if float(np.max(row_payoffs)) > value + check_tol:
        raise SolverError("attacker has a profitable pure deviation")
    if float(np.min(col_payoffs)) < value - check_tol:
        raise SolverError("defender has a profitable pure deviation")
    attacker = _mix_to_behavioral(tree, matrix.row_plans, row_mix, Player.ATTACKER)
    defender = _mix_to_behavioral(tree, matrix.col_plans, col_mix, Player.DEFENDER)
    realized = expected_utility(tree, PlanProfile(attacker, defender), _paired(utilities))
    if abs(realized.attacker - value) > check_tol:
        raise SolverError(
            f"equilibrium value {value:g} does not match realized utility "
            f"{realized.attacker:g}"
        )
    return SolveResult(
        attacker_plan=attacker,
        defender_plan=defender,
        attacker_value=float(realized.attacker),
        scheme=Scheme.NASH,
        diagnostics=dict(diag, game_value=value),
    )


def backward_induction(tree: GameTree, utilities: Mapping) -> SolveResult:
    """Pure subgame-perfect equilibrium of a perfect-information tree.

    Each decision vertex picks the child maximizing its owner's continuation
    value (chance vertices average); ties go to the lowest action index.
    """
    for ks in tree.knowledge_sets:
        if len(ks.members) > 1:
            raise TreeError(
                f"knowledge set {ks.id!r} has {len(ks.members)} members; "
                "backward induction needs perfect information"
            )
    choices: dict[Player, dict[str, int]] = {Player.ATTACKER: {}, Player.DEFENDER: {}}

    def walk(vertex_id: str) -> tuple[float, float]:
        vertex = tree.vertices[vertex_id]
        if vertex.is_leaf:
            assert vertex.outcome is not None
            if vertex.outcome not in utilities:
                raise SolverError(f"no utility defined for outcome {vertex.outcome!r}")
            u = utilities[vertex.outcome]
            return float(u[0]), float(u[1])
        values = [walk(vertex.children[a]) for a in vertex.actions]
        if vertex.owner == Player.CHANCE:
            assert vertex.chance_dist is not None
            ua = sum(p * v[0] for p, v in zip(vertex.chance_dist, values))
            ud = sum(p * v[1] for p, v in zip(vertex.chance_dist, values))
            return ua, ud
        side = 0 if vertex.owner == Player.ATTACKER else 1
        best = 0
        for i in range(1, len(values)):
            if values[i][side] > values[best][side]:
                best = i
        ks_id = tree.knowledge_set_of(vertex_id)
        assert ks_id is not None
        choices[vertex.owner][ks_id] = best
        return values[best]

    root_value = walk(tree.root)
    attacker = pure_to_behavioral(tree, PurePlan(Player.ATTACKER, choices[Player.ATTACKER]))
    defender = pure_to_behavioral(tree, PurePlan(Player.DEFENDER, choices[Player.DEFENDER]))
    return SolveResult(
        attacker_plan=attacker,
        defender_plan=defender,
        attacker_value=root_value[0],
        scheme=Scheme.NASH,
        diagnostics={"method": "backward_induction", "defender_value": root_value[1]},
    )


def _require_recall_both(tree: GameTree) -> None:
    for player in (Player.ATTACKER, Player.DEFENDER):
        if not check_perfect_recall(tree, player):
            raise TreeError(
                f"{player.value} has imperfect recall at node {tree.node_id!r}"
            )


def _paired(utilities: Mapping) -> dict:
    return {z: (float(u[0]), float(u[1])) for z, u in utilities.items()}

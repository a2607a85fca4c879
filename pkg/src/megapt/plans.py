"""Pure, mixed, and behavioral plans over game trees, plus their evaluation.

Behavioral form (a distribution per knowledge set) is the canonical internal
representation; mixed form (a distribution over full pure plans) is kept as a
view for analysis and export. For perfect-recall players the two are
outcome-equivalent and the conversions here witness that equivalence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .trees import (
    DEFAULT_PLAN_CAP,
    PROB_TOL,
    GameTree,
    PlanCapExceeded,
    Player,
    TreeError,
    check_perfect_recall,
)


class PlanError(ValueError):
    """A plan is malformed or inconsistent with the tree it is used on."""


@dataclass(frozen=True)
class PurePlan:
    """One technique per knowledge set, stored as an action index."""

    player: Player
    choices: Mapping[str, int]

    def action_index(self, ks_id: str) -> int:
        try:
            return self.choices[ks_id]
        except KeyError:
            raise PlanError(f"plan has no choice for knowledge set {ks_id!r}") from None


@dataclass
class MixedPlan:
    """Probability distribution over pure plans (support entries distinct)."""

    player: Player
    support: list[tuple[PurePlan, float]]

    def validate(self) -> None:
        total = sum(w for _, w in self.support)
        if abs(total - 1.0) > PROB_TOL:
            raise PlanError(f"mixed plan weights sum to {total:g}")
        if any(w < 0 for _, w in self.support):
            raise PlanError("mixed plan has a negative weight")
        keys = [tuple(sorted(p.choices.items())) for p, _ in self.support]
        if len(set(keys)) != len(keys):
            raise PlanError("mixed plan support contains duplicate pure plans")


@dataclass
class BehavioralPlan:
    """A probability vector over actions at each knowledge set."""

    player: Player
    dists: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def prob(self, ks_id: str, action_index: int) -> float:
        try:
            return self.dists[ks_id][action_index]
        except KeyError:
            raise PlanError(f"plan has no distribution for knowledge set {ks_id!r}") from None

    def validate(self, tree: GameTree) -> None:
        for ks in tree.player_knowledge_sets(self.player):
            dist = self.dists.get(ks.id)
            if dist is None:
                raise PlanError(
                    f"{self.player.value} plan misses knowledge set {ks.id!r}"
                )
            if len(dist) != len(ks.actions):
                raise PlanError(
                    f"distribution at {ks.id!r} has {len(dist)} entries for "
                    f"{len(ks.actions)} actions"
                )
            if any(p < 0 for p in dist):
                raise PlanError(f"negative probability at {ks.id!r}")
            if abs(sum(dist) - 1.0) > PROB_TOL:
                raise PlanError(f"distribution at {ks.id!r} sums to {sum(dist):g}")


def pure_to_behavioral(tree: GameTree, plan: PurePlan) -> BehavioralPlan:
    """Point-mass behavioral view of a pure plan."""
    dists = {}
    for ks in tree.player_knowledge_sets(plan.player):
        vec = [0.0] * len(ks.actions)
        vec[plan.action_index(ks.id)] = 1.0
        dists[ks.id] = tuple(vec)
    return BehavioralPlan(plan.player, dists)


@dataclass
class PlanProfile:
    """Attacker and defender behavioral plans; chance lives in the tree."""

    attacker: BehavioralPlan
    defender: BehavioralPlan

    def for_player(self, player: Player) -> BehavioralPlan:
        if player == Player.ATTACKER:
            return self.attacker
        if player == Player.DEFENDER:
            return self.defender
        raise PlanError("chance has no behavioral plan")

    def validate(self, tree: GameTree) -> None:
        self.attacker.validate(tree)
        self.defender.validate(tree)


@dataclass
class OutcomeDistribution:
    probs: dict[str, float]

    def validate(self) -> None:
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOL:
            raise PlanError(f"outcome probabilities sum to {total:g}")
        if any(p < -PROB_TOL for p in self.probs.values()):
            raise PlanError("negative outcome probability")


class PlayerValues(NamedTuple):
    attacker: float
    defender: float


def behavioral_to_mixed(
    tree: GameTree, plan: BehavioralPlan, cap: int = DEFAULT_PLAN_CAP
) -> MixedPlan:
    """Expand a behavioral plan into the equivalent mixture of pure plans.

    Each pure plan receives the product of its action probabilities across
    knowledge sets; zero-probability plans are pruned from the support.
    """
    _require_perfect_recall(tree, plan.player)
    plan.validate(tree)
    sets = tree.player_knowledge_sets(plan.player)
    supports: list[list[int]] = []
    size = 1
    for ks in sets:
        dist = plan.dists[ks.id]
        live = [i for i, p in enumerate(dist) if p > 0.0]
        size *= len(live)
        if size > cap:
            raise PlanCapExceeded(
                f"mixed support would exceed {cap} plans; "
                "use the behavioral (operational) form instead"
            )
        supports.append(live)

    support: list[tuple[PurePlan, float]] = []
    for combo in itertools.product(*supports):
        weight = 1.0
        for ks, idx in zip(sets, combo):
            weight *= plan.dists[ks.id][idx]
        if weight > 0.0:
            support.append(
                (PurePlan(plan.player, {ks.id: idx for ks, idx in zip(sets, combo)}), weight)
            )
    mixed = MixedPlan(plan.player, support)
    mixed.validate()
    return mixed


def mixed_to_behavioral(tree: GameTree, plan: MixedPlan) -> BehavioralPlan:
    """Collapse a mixture of pure plans into the equivalent behavioral plan.

    At each knowledge set the action probability is the weight of support
    plans that reach the set and choose the action, normalised by the weight
    of support plans that reach it. Reachability is judged on the player's
    own choices only, which is exactly what perfect recall licenses. Sets no
    support plan reaches get a uniform distribution.
    """
    _require_perfect_recall(tree, plan.player)
    plan.validate()
    dists = {}
    for ks in tree.player_knowledge_sets(plan.player):
        # perfect recall: every member shares one own-history
        history = tree.own_history(plan.player, ks.members[0])
        reach_mass = 0.0
        action_mass = [0.0] * len(ks.actions)
        for pure, weight in plan.support:
            if _plan_reaches(tree, pure, history):
                reach_mass += weight
                action_mass[pure.action_index(ks.id)] += weight
        if reach_mass <= 0.0:
            dists[ks.id] = tuple([1.0 / len(ks.actions)] * len(ks.actions))
        else:
            dists[ks.id] = tuple(m / reach_mass for m in action_mass)
    behavioral = BehavioralPlan(plan.player, dists)
    behavioral.validate(tree)
    return behavioral


def _plan_reaches(tree: GameTree, plan: PurePlan, history: Iterable[tuple[str, str]]) -> bool:
    for ks_id, action in history:
        ks = tree.knowledge_set(ks_id)
        if ks.actions[plan.action_index(ks_id)] != action:
            return False
    return True


def _require_perfect_recall(tree: GameTree, player: Player) -> None:
    if not check_perfect_recall(tree, player):
        raise TreeError(
            f"{player.value} has imperfect recall at node {tree.node_id!r}; "
            "plan conversion is not outcome-preserving"
        )


def reach_probabilities(tree: GameTree, profile: PlanProfile) -> dict[str, float]:
    """Probability of reaching each vertex under the profile (root = 1)."""
    probs = {tree.root: 1.0}
    stack = [tree.root]
    while stack:
        vid = stack.pop()
        vertex = tree.vertices[vid]
        if not vertex.actions:
            continue
        if vertex.owner == Player.CHANCE:
            assert vertex.chance_dist is not None
            dist = vertex.chance_dist
        else:
            ks_id = tree.knowledge_set_of(vid)
            if ks_id is None:
                raise PlanError(f"decision vertex {vid!r} belongs to no knowledge set")
            dist = profile.for_player(vertex.owner).dists[ks_id]
        here = probs[vid]
        for action, p in zip(vertex.actions, dist):
            child = vertex.children[action]
            probs[child] = here * p
            stack.append(child)
    return probs


def outcome_distribution(tree: GameTree, profile: PlanProfile) -> OutcomeDistribution:
    """Total probability of each tactic outcome under the profile."""
    reach = reach_probabilities(tree, profile)
    probs = {z: 0.0 for z in tree.outcomes}
    for leaf in tree.leaves():
        assert leaf.outcome is not None
        probs[leaf.outcome] += reach[leaf.id]
    dist = OutcomeDistribution(probs)
    dist.validate()
    return dist


def expected_utility(
    tree: GameTree,
    profile: PlanProfile,
    utilities: Mapping[str, PlayerValues | tuple[float, float]],
) -> PlayerValues:
    """Expected (attacker, defender) payoff of a profile.

    ``utilities`` must cover every outcome the tree declares.
    """
    dist = outcome_distribution(tree, profile)
    attacker = 0.0
    defender = 0.0
    for z, p in dist.probs.items():
        if z not in utilities:
            raise PlanError(f"no utility defined for outcome {z!r}")
        u = utilities[z]
        attacker += p * u[0]
        defender += p * u[1]
    return PlayerValues(attacker, defender)


def zero_sum_utilities(attacker: Mapping[str, float]) -> dict[str, PlayerValues]:
    """Attach the defender side of a zero-sum utility map."""
    return {z: PlayerValues(u, -u) for z, u in attacker.items()}


def plan_distance(a: BehavioralPlan, b: BehavioralPlan) -> float:
    """Max total-variation distance between two plans' action distributions.

    Plans over different knowledge-set structures are maximally distant.
    """
    if set(a.dists) != set(b.dists):
        return 1.0
    worst = 0.0
    for ks_id, dist_a in a.dists.items():
        dist_b = b.dists[ks_id]
        if len(dist_a) != len(dist_b):
            return 1.0
        tv = 0.5 * sum(abs(x - y) for x, y in zip(dist_a, dist_b))
        worst = max(worst, tv)
    return worst

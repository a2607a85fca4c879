"""Extensive-form game trees for node-level attacker/defender interactions.

A tree describes one network node's local game: attacker and defender take
turns applying techniques, chance vertices model system randomness, and each
leaf carries a tactic outcome label (the node the attacker ends up moving
toward, or the node itself for "stay").
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

PROB_TOL = 1e-9
DEFAULT_PLAN_CAP = 10**6


class Player(str, Enum):
    ATTACKER = "attacker"
    DEFENDER = "defender"
    CHANCE = "chance"


STRATEGIC_PLAYERS = (Player.ATTACKER, Player.DEFENDER)


class TreeError(ValueError):
    """Raised when an operation is asked to run on an unsuitable tree."""


class PlanCapExceeded(TreeError):
    """Pure-plan enumeration would exceed the configured cap."""


@dataclass
class Vertex:
    """One decision point or leaf in a game tree.

    A leaf has no actions and carries an outcome label; an internal vertex
    maps each action label to a child vertex id. ``chance_dist`` is present
    exactly when the vertex is owned by chance, aligned with ``actions``.
    """

    id: str
    owner: Player
    actions: tuple[str, ...] = ()
    children: dict[str, str] = field(default_factory=dict)
    chance_dist: tuple[float, ...] | None = None
    outcome: str | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.actions


@dataclass
class KnowledgeSet:
    """Decision vertices a strategic player cannot tell apart."""

    id: str
    player: Player
    members: tuple[str, ...]
    actions: tuple[str, ...]


@dataclass
class GameTree:
    """A rooted extensive-form game for one network node.

    Immutable after construction by convention: no operation in this package
    mutates a tree, so instances are safe to share across workers. Derived
    lookup tables are built once in ``__post_init__``.
    """

    node_id: str
    root: str
    vertices: dict[str, Vertex]
    knowledge_sets: list[KnowledgeSet]
    outcomes: tuple[str, ...]

    def __post_init__(self) -> None:
        self.outcomes = tuple(sorted(self.outcomes))
        self._ks_by_id = {ks.id: ks for ks in self.knowledge_sets}
        self._ks_of_vertex: dict[str, str] = {}
        for ks in self.knowledge_sets:
            for member in ks.members:
                # duplicate membership is reported by validate_tree
                self._ks_of_vertex.setdefault(member, ks.id)
        self._parent: dict[str, tuple[str, str]] = {}
        for vertex in self.vertices.values():
            for action, child in vertex.children.items():
                if child in self.vertices:
                    self._parent.setdefault(child, (vertex.id, action))

    def knowledge_set(self, ks_id: str) -> KnowledgeSet:
        return self._ks_by_id[ks_id]

    def knowledge_set_of(self, vertex_id: str) -> str | None:
        return self._ks_of_vertex.get(vertex_id)

    def player_knowledge_sets(self, player: Player) -> list[KnowledgeSet]:
        """Knowledge sets of ``player`` in deterministic (id-sorted) order."""
        return sorted(
            (ks for ks in self.knowledge_sets if ks.player == player),
            key=lambda ks: ks.id,
        )

    def leaves(self) -> list[Vertex]:
        return [v for v in self.vertices.values() if v.is_leaf]

    def parent_edge(self, vertex_id: str) -> tuple[str, str] | None:
        """(parent id, action) that leads to ``vertex_id``, None for the root."""
        return self._parent.get(vertex_id)

    def path_from_root(self, vertex_id: str) -> list[tuple[str, str]]:
        """Sequence of (vertex id, action) pairs from the root to ``vertex_id``."""
        steps: list[tuple[str, str]] = []
        cursor = vertex_id
        while cursor != self.root:
            edge = self._parent.get(cursor)
            if edge is None:
                raise TreeError(f"vertex {cursor!r} is not reachable from the root")
            steps.append(edge)
            cursor = edge[0]
        steps.reverse()
        return steps

    def own_history(self, player: Player, vertex_id: str) -> tuple[tuple[str, str], ...]:
        """The (knowledge set, action) pairs of ``player`` on the root path."""
        history = []
        for vid, action in self.path_from_root(vertex_id):
            vertex = self.vertices[vid]
            if vertex.owner == player:
                history.append((self._ks_of_vertex.get(vid, vid), action))
        return tuple(history)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_tree(tree: GameTree) -> ValidationReport:
    """Check every structural invariant of a game tree.

    Violations are collected into the report rather than raised, so a single
    pass surfaces everything that is wrong with a hand-written tree.
    """
    report = ValidationReport()
    if tree.root not in tree.vertices:
        report.add(f"root vertex {tree.root!r} is not defined")
        return report

    for vertex in tree.vertices.values():
        _validate_vertex(tree, vertex, report)

    _validate_shape(tree, report)
    _validate_knowledge_sets(tree, report)
    return report


def _validate_vertex(tree: GameTree, vertex: Vertex, report: ValidationReport) -> None:
    if vertex.is_leaf:
        if vertex.outcome is None:
            report.add(f"leaf {vertex.id!r} has no outcome")
        elif vertex.outcome not in tree.outcomes:
            report.add(
                f"leaf {vertex.id!r} outcome {vertex.outcome!r} is not in the outcome set"
            )
        if vertex.children:
            report.add(f"leaf {vertex.id!r} has children but no actions")
        if vertex.chance_dist is not None:
            report.add(f"leaf {vertex.id!r} carries a chance distribution")
        return

    if vertex.outcome is not None:
        report.add(f"internal vertex {vertex.id!r} carries outcome {vertex.outcome!r}")
    if set(vertex.children) != set(vertex.actions):
        report.add(
            f"vertex {vertex.id!r} children keys do not match its action list"
        )
    for child in vertex.children.values():
        if child not in tree.vertices:
            report.add(f"vertex {vertex.id!r} references missing child {child!r}")

    if vertex.owner == Player.CHANCE:
        dist = vertex.chance_dist
        if dist is None:
            report.add(f"chance vertex {vertex.id!r} has no distribution")
        else:
            if len(dist) != len(vertex.actions):
                report.add(
                    f"chance vertex {vertex.id!r} distribution length "
                    f"{len(dist)} != {len(vertex.actions)} actions"
                )
            if any(p < 0 for p in dist):
                report.add(f"chance vertex {vertex.id!r} has a negative probability")
            total = sum(dist)
            if abs(total - 1.0) > PROB_TOL:
                report.add(f"chance distribution sums to {total:g} at {vertex.id!r}")
    elif vertex.chance_dist is not None:
        report.add(f"non-chance vertex {vertex.id!r} carries a chance distribution")


def _validate_shape(tree: GameTree, report: ValidationReport) -> None:
    # child with two parents, or an edge into the root, breaks the tree shape
    seen_child: dict[str, str] = {}
    edge_count = 0
    for vertex in tree.vertices.values():
        for child in vertex.children.values():
            if child not in tree.vertices:
                continue
            edge_count += 1
            if child == tree.root:
                report.add(f"root {tree.root!r} has an incoming edge from {vertex.id!r}")
            if child in seen_child:
                report.add(
                    f"vertex {child!r} has two parents ({seen_child[child]!r}, {vertex.id!r})"
                )
            seen_child[child] = vertex.id

    reachable = set()
    stack = [tree.root]
    while stack:
        vid = stack.pop()
        if vid in reachable or vid not in tree.vertices:
            continue
        reachable.add(vid)
        stack.extend(tree.vertices[vid].children.values())
    unreachable = set(tree.vertices) - reachable
    for vid in sorted(unreachable):
        report.add(f"vertex {vid!r} is not reachable from the root")
    if edge_count != len(tree.vertices) - 1 and not unreachable:
        report.add(
            f"edge count {edge_count} != vertex count {len(tree.vertices)} - 1"
        )


def _validate_knowledge_sets(tree: GameTree, report: ValidationReport) -> None:
    covered: dict[str, str] = {}
    for ks in tree.knowledge_sets:
        if ks.player not in STRATEGIC_PLAYERS:
            report.add(f"knowledge set {ks.id!r} assigned to non-strategic player")
            continue
        for member in ks.members:
            vertex = tree.vertices.get(member)
            if vertex is None:
                report.add(f"knowledge set {ks.id!r} references missing vertex {member!r}")
                continue
            if vertex.owner != ks.player:
                report.add(
                    f"knowledge set {ks.id!r} member {member!r} is owned by "
                    f"{vertex.owner.value}, not {ks.player.value}"
                )
            if vertex.actions != ks.actions:
                report.add(f"action mismatch in knowledge set {ks.id!r} at {member!r}")
            if member in covered:
                report.add(
                    f"vertex {member!r} appears in knowledge sets "
                    f"{covered[member]!r} and {ks.id!r}"
                )
            covered[member] = ks.id
        _check_no_nested_members(tree, ks, report)

    for vertex in tree.vertices.values():
        if vertex.is_leaf or vertex.owner == Player.CHANCE:
            continue
        if vertex.id not in covered:
            report.add(f"decision vertex {vertex.id!r} belongs to no knowledge set")


def _check_no_nested_members(tree: GameTree, ks: KnowledgeSet, report: ValidationReport) -> None:
    members = set(ks.members)
    for member in ks.members:
        if member not in tree.vertices:
            continue
        try:
            ancestors = {vid for vid, _ in tree.path_from_root(member)}
        except TreeError:
            continue
        overlap = ancestors & (members - {member})
        for anc in sorted(overlap):
            report.add(
                f"knowledge set {ks.id!r} member {anc!r} is an ancestor of {member!r}"
            )


def check_perfect_recall(tree: GameTree, player: Player) -> bool:
    """True iff ``player`` never forgets their own knowledge sets and actions.

    Every member of each knowledge set must be preceded by the identical
    sequence of (own knowledge set, own action) pairs on the root path.
    """
    if player == Player.CHANCE:
        raise TreeError("perfect recall is defined for strategic players only")
    for ks in tree.player_knowledge_sets(player):
        histories = {tree.own_history(player, member) for member in ks.members}
        if len(histories) > 1:
            return False
    return True


def enumerate_pure_plans(
    tree: GameTree, player: Player, cap: int = DEFAULT_PLAN_CAP
) -> list["PurePlan"]:
    """All complete technique assignments for ``player``.

    Plans are ordered lexicographically over (knowledge-set id, action index),
    which fixes tie-breaking everywhere downstream. Raises PlanCapExceeded
    when the product of action counts is over ``cap``; at that size the
    normal-form reduction is the wrong tool.
    """
    from .plans import PurePlan  # local import avoids a module cycle

    if player not in STRATEGIC_PLAYERS:
        raise TreeError("pure plans are defined for strategic players only")
    sets = tree.player_knowledge_sets(player)
    count = 1
    for ks in sets:
        count *= len(ks.actions)
        if count > cap:
            raise PlanCapExceeded(
                f"{player.value} has more than {cap} pure plans at node "
                f"{tree.node_id!r}"
            )
    plans = []
    for combo in itertools.product(*(range(len(ks.actions)) for ks in sets)):
        plans.append(PurePlan(player, {ks.id: idx for ks, idx in zip(sets, combo)}))
    return plans

"""Shared builders: hand-rolled trees and seeded random generators."""

from __future__ import annotations

import itertools
import random
from collections import defaultdict

import pytest

from megapt import (
    BehavioralPlan,
    GameTree,
    KnowledgeSet,
    Network,
    PlanProfile,
    Player,
    Vertex,
    validate_tree,
)


def leaf(vid: str, outcome: str) -> Vertex:
    return Vertex(id=vid, owner=Player.CHANCE, outcome=outcome)


def build_tree(node_id, root, vertices, knowledge_sets, outcomes) -> GameTree:
    tree = GameTree(
        node_id=node_id,
        root=root,
        vertices={v.id: v for v in vertices},
        knowledge_sets=knowledge_sets,
        outcomes=tuple(outcomes),
    )
    report = validate_tree(tree)
    assert report.ok, report.violations
    return tree


@pytest.fixture
def simple_gate_tree() -> GameTree:
    """Attacker L/R at the root; R runs through a defender grant/deny gate."""
    return build_tree(
        "n0",
        "r",
        [
            Vertex(id="r", owner=Player.ATTACKER, actions=("L", "R"),
                   children={"L": "z_l", "R": "d"}),
            leaf("z_l", "z1"),
            Vertex(id="d", owner=Player.DEFENDER, actions=("grant", "deny"),
                   children={"grant": "z_g", "deny": "z_d"}),
            leaf("z_g", "z2"),
            leaf("z_d", "z1"),
        ],
        [
            KnowledgeSet("ka", Player.ATTACKER, ("r",), ("L", "R")),
            KnowledgeSet("kd", Player.DEFENDER, ("d",), ("grant", "deny")),
        ],
        ("z1", "z2"),
    )


def random_tree(
    rand: random.Random,
    max_depth: int = 3,
    outcomes: tuple[str, ...] = ("z0", "z1", "z2"),
    chance_share: float = 0.25,
    merge_share: float = 0.6,
    max_sets_per_player: int | None = None,
    max_actions: int = 3,
) -> GameTree:
    """Random valid tree with perfect recall built in.

    Knowledge sets group decision vertices that share the acting player's
    own history, which makes perfect recall hold by construction; groups
    are merged with probability ``merge_share`` to create imperfect
    information.
    """
    while True:
        tree = _grow_random_tree(rand, max_depth, outcomes, chance_share,
                                 merge_share, max_actions)
        if max_sets_per_player is not None:
            counts = defaultdict(int)
            for ks in tree.knowledge_sets:
                counts[ks.player] += 1
            if any(c > max_sets_per_player for c in counts.values()):
                continue
        return tree


def _grow_random_tree(rand, max_depth, outcomes, chance_share, merge_share, max_actions):
    vertices: dict[str, Vertex] = {}
    counter = itertools.count()

    def grow(depth: int) -> str:
        vid = f"v{next(counter)}"
        if depth >= max_depth or (depth > 0 and rand.random() < 0.35):
            vertices[vid] = leaf(vid, rand.choice(outcomes))
            return vid
        roll = rand.random()
        if roll < chance_share:
            owner = Player.CHANCE
        elif roll < chance_share + (1 - chance_share) / 2:
            owner = Player.ATTACKER
        else:
            owner = Player.DEFENDER
        n_actions = rand.randint(2, max_actions)
        actions = tuple(f"a{i}" for i in range(n_actions))
        children = {a: grow(depth + 1) for a in actions}
        dist = None
        if owner == Player.CHANCE:
            weights = [rand.random() + 0.05 for _ in actions]
            total = sum(weights)
            dist = tuple(w / total for w in weights)
        vertices[vid] = Vertex(id=vid, owner=owner, actions=actions,
                               children=children, chance_dist=dist)
        return vid

    root = grow(0)
    tree = GameTree(node_id="n0", root=root, vertices=vertices,
                    knowledge_sets=[], outcomes=outcomes)

    # group decision vertices by the acting player's own history so that
    # any merge keeps perfect recall
    sets: list[KnowledgeSet] = []
    for player in (Player.ATTACKER, Player.DEFENDER):
        buckets: dict[tuple, list[str]] = defaultdict(list)
        for vid in sorted(vertices):
            vertex = vertices[vid]
            if vertex.is_leaf or vertex.owner != player:
                continue
            own = []
            for uid, action in tree.path_from_root(vid):
                if vertices[uid].owner == player:
                    own.append((uid, action))
            buckets[(tuple(own), vertex.actions)].append(vid)
        for key in sorted(buckets, key=repr):
            members = buckets[key]
            if len(members) > 1 and rand.random() < merge_share:
                sets.append(KnowledgeSet(f"k{len(sets)}", player,
                                         tuple(members), key[1]))
            else:
                for vid in members:
                    sets.append(KnowledgeSet(f"k{len(sets)}", player,
                                             (vid,), key[1]))

    # own histories above were keyed by vertex ids; rebuilding with the real
    # knowledge sets preserves the grouping because ids refine set ids
    final = GameTree(node_id="n0", root=root, vertices=vertices,
                     knowledge_sets=sets, outcomes=outcomes)
    report = validate_tree(final)
    assert report.ok, report.violations
    return final


def random_perfect_info_tree(rand: random.Random, max_depth: int = 3,
                             outcomes=("z0", "z1", "z2")) -> GameTree:
    return random_tree(rand, max_depth=max_depth, outcomes=outcomes, merge_share=0.0)


def random_behavioral(tree: GameTree, player: Player, rand: random.Random) -> BehavioralPlan:
    dists = {}
    for ks in tree.player_knowledge_sets(player):
        weights = [rand.random() + 0.05 for _ in ks.actions]
        total = sum(weights)
        dists[ks.id] = tuple(w / total for w in weights)
    return BehavioralPlan(player, dists)


def random_profile(tree: GameTree, rand: random.Random) -> PlanProfile:
    return PlanProfile(
        random_behavioral(tree, Player.ATTACKER, rand),
        random_behavioral(tree, Player.DEFENDER, rand),
    )


def random_utilities(tree: GameTree, rand: random.Random, zero_sum: bool = True) -> dict:
    out = {}
    for z in tree.outcomes:
        ua = rand.uniform(-10, 10)
        out[z] = (ua, -ua if zero_sum else rand.uniform(-10, 10))
    return out


def ring_network(n: int, importance: float = 5.0) -> Network:
    nodes = tuple(f"n{i}" for i in range(n))
    edges = {(v, v) for v in nodes}
    for i in range(n):
        edges.add((nodes[i], nodes[(i + 1) % n]))
    return Network(
        nodes=nodes,
        edges=edges,
        initial=nodes[0],
        importance={v: importance for v in nodes},
        terminal=frozenset(),
    )

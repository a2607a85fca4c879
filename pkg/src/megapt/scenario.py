"""Scenario files: network topology, per-node game trees, parameters, defenses.

A scenario is a single JSON document (``format_version: 1``). Technique
labels are opaque strings; files may use ATT&CK-style technique ids but the
engine assigns them no semantics. Parsing is strict and reports every
problem it finds with a JSON-path location.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .network_mdp import MspParams, Network
from .plans import BehavioralPlan
from .trees import (
    PROB_TOL,
    GameTree,
    KnowledgeSet,
    Player,
    Vertex,
    check_perfect_recall,
    validate_tree,
)

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Parse or validation failure; the message carries JSON paths."""


@dataclass
class Scenario:
    network: Network
    params: MspParams
    trees: dict[str, GameTree]
    fixed_defense: dict[str, BehavioralPlan] = field(default_factory=dict)
    v_max: float = 100.0
    name: str = ""
    description: str = ""

    def non_terminal_nodes(self) -> list[str]:
        return [n for n in self.network.nodes if n not in self.network.terminal]


# ---------------------------------------------------------------------------
# parsing


def _require(doc: Mapping, key: str, path: str, issues: list[str]) -> Any:
    if key not in doc:
        issues.append(f"{path}: missing required key {key!r}")
        return None
    return doc[key]


def tree_from_json(node_id: str, doc: Mapping, outcomes: tuple[str, ...]) -> GameTree:
    vertices = {}
    for vid, vdoc in doc.get("vertices", {}).items():
        try:
            owner = Player(vdoc.get("owner", ""))
        except ValueError:
            raise ScenarioError(
                f"trees.{node_id}.vertices.{vid}: unknown owner {vdoc.get('owner')!r}"
            ) from None
        chance = vdoc.get("chance_dist")
        vertices[vid] = Vertex(
            id=vid,
            owner=owner,
            actions=tuple(vdoc.get("actions", ())),
            children=dict(vdoc.get("children", {})),
            chance_dist=tuple(float(p) for p in chance) if chance is not None else None,
            outcome=vdoc.get("outcome"),
        )
    knowledge_sets = []
    for i, ks_doc in enumerate(doc.get("knowledge_sets", [])):
        try:
            player = Player(ks_doc.get("player", ""))
        except ValueError:
            raise ScenarioError(
                f"trees.{node_id}.knowledge_sets[{i}]: unknown player "
                f"{ks_doc.get('player')!r}"
            ) from None
        members = tuple(sorted(ks_doc.get("members", ())))
        first = vertices.get(members[0]) if members else None
        knowledge_sets.append(
            KnowledgeSet(
                id=ks_doc.get("id", f"ks{i}"),
                player=player,
                members=members,
                actions=first.actions if first is not None else (),
            )
        )
    return GameTree(
        node_id=node_id,
        root=doc.get("root", ""),
        vertices=vertices,
        knowledge_sets=knowledge_sets,
        outcomes=outcomes,
    )


def parse_scenario(document: str | Mapping) -> Scenario:
    """Parse and fully validate a scenario document (JSON text or mapping)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(
                f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from None
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise ScenarioError("document root must be an object")

    issues: list[str] = []
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ScenarioError(
            f"format_version: expected {FORMAT_VERSION}, got {version!r}"
        )

    net_doc = _require(doc, "network", "network", issues) or {}
    nodes = []
    importance = {}
    terminal = set()
    for i, node_doc in enumerate(net_doc.get("nodes", [])):
        node_id = node_doc.get("id")
        if not node_id:
            issues.append(f"network.nodes[{i}]: missing id")
            continue
        nodes.append(node_id)
        importance[node_id] = float(node_doc.get("importance", 0.0))
        if node_doc.get("terminal", False):
            terminal.add(node_id)
    edges = {tuple(e) for e in net_doc.get("edges", [])}
    for i, e in enumerate(net_doc.get("edges", [])):
        if len(e) != 2:
            issues.append(f"network.edges[{i}]: an edge is a [from, to] pair")
    network = Network(
        nodes=tuple(nodes),
        edges={e for e in edges if len(e) == 2},
        initial=net_doc.get("initial", ""),
        importance=importance,
        terminal=frozenset(terminal),
    )
    issues.extend(f"network: {msg}" for msg in network.issues())

    params_doc = doc.get("params", {})
    params = MspParams(
        c_a=float(params_doc.get("c_a", 0.8)),
        m_a=float(params_doc.get("m_a", -15.0)),
        gamma=float(params_doc.get("gamma", 0.9)),
    )
    try:
        params.validate()
    except ValueError as exc:
        issues.append(f"params: {exc}")

    v_max = float(doc.get("v_max", 100.0))
    if v_max <= 0:
        issues.append(f"v_max: must be positive, got {v_max:g}")

    trees: dict[str, GameTree] = {}
    trees_doc = doc.get("trees", {})
    known = set(network.nodes)
    for node_id in sorted(trees_doc):
        if node_id not in known:
            issues.append(f"trees.{node_id}: unknown node")
            continue
        if node_id in network.terminal:
            issues.append(f"trees.{node_id}: terminal nodes carry no tree")
            continue
        outcomes = tuple(network.successors(node_id))
        try:
            trees[node_id] = tree_from_json(node_id, trees_doc[node_id], outcomes)
        except ScenarioError as exc:
            issues.append(str(exc))

    fixed_defense: dict[str, BehavioralPlan] = {}
    for node_id, dists in doc.get("fixed_defense", {}).items():
        fixed_defense[node_id] = BehavioralPlan(
            Player.DEFENDER,
            {ks: tuple(float(p) for p in vec) for ks, vec in dists.items()},
        )

    scenario = Scenario(
        network=network,
        params=params,
        trees=trees,
        fixed_defense=fixed_defense,
        v_max=v_max,
        name=doc.get("name", ""),
        description=doc.get("description", ""),
    )
    issues.extend(validate_scenario(scenario))
    if issues:
        raise ScenarioError("; ".join(issues))
    return scenario


def validate_scenario(scenario: Scenario) -> list[str]:
    """Cross-check trees, outcomes, and defenses against the network."""
    issues = [f"network: {msg}" for msg in scenario.network.issues()]
    try:
        scenario.params.validate()
    except ValueError as exc:
        issues.append(f"params: {exc}")
    if scenario.v_max <= 0:
        issues.append(f"v_max: must be positive, got {scenario.v_max:g}")

    for node in scenario.non_terminal_nodes():
        tree = scenario.trees.get(node)
        if tree is None:
            issues.append(f"trees.{node}: missing tree for node {node!r}")
            continue
        expected = tuple(sorted(scenario.network.successors(node)))
        if tree.outcomes != expected:
            issues.append(
                f"trees.{node}: outcome set {list(tree.outcomes)} does not match "
                f"outgoing edges {list(expected)}"
            )
        report = validate_tree(tree)
        issues.extend(f"trees.{node}: {msg}" for msg in report.violations)
        if report.ok:
            for player in (Player.ATTACKER, Player.DEFENDER):
                if not check_perfect_recall(tree, player):
                    issues.append(f"trees.{node}: {player.value} has imperfect recall")

    for node, plan in scenario.fixed_defense.items():
        tree = scenario.trees.get(node)
        if tree is None:
            issues.append(f"fixed_defense.{node}: no tree for node {node!r}")
            continue
        for ks_id, dist in plan.dists.items():
            ks = next((k for k in tree.knowledge_sets if k.id == ks_id), None)
            if ks is None:
                issues.append(
                    f"fixed_defense.{node}.{ks_id}: unknown knowledge set"
                )
                continue
            if ks.player != Player.DEFENDER:
                issues.append(
                    f"fixed_defense.{node}.{ks_id}: not a defender knowledge set"
                )
            if len(dist) != len(ks.actions):
                issues.append(
                    f"fixed_defense.{node}.{ks_id}: {len(dist)} probabilities "
                    f"for {len(ks.actions)} actions"
                )
            elif any(p < 0 for p in dist) or abs(sum(dist) - 1.0) > PROB_TOL:
                issues.append(
                    f"fixed_defense.{node}.{ks_id}: probabilities must be "
                    f"nonnegative and sum to 1"
                )
    return issues


def complete_defense(scenario: Scenario, node: str) -> BehavioralPlan:
    """Full defender plan for ``node`` under the fixed-defense scheme.

    Nodes whose trees have no defender decisions get the trivial empty plan;
    an uncovered defender knowledge set is an error naming the node.
    """
    tree = scenario.trees[node]
    supplied = scenario.fixed_defense.get(node)
    dists = dict(supplied.dists) if supplied is not None else {}
    for ks in tree.knowledge_sets:
        if ks.player == Player.DEFENDER and ks.id not in dists:
            raise ScenarioError(
                f"missing fixed defense plan for node {node!r} "
                f"(knowledge set {ks.id!r} uncovered)"
            )
    return BehavioralPlan(Player.DEFENDER, dists)


# ---------------------------------------------------------------------------
# serialization


def tree_to_json(tree: GameTree) -> dict:
    vertices = {}
    for vid in sorted(tree.vertices):
        vertex = tree.vertices[vid]
        vdoc: dict[str, Any] = {"owner": vertex.owner.value}
        if vertex.is_leaf:
            vdoc["outcome"] = vertex.outcome
        else:
            vdoc["actions"] = list(vertex.actions)
            vdoc["children"] = dict(vertex.children)
        if vertex.chance_dist is not None:
            vdoc["chance_dist"] = list(vertex.chance_dist)
        vertices[vid] = vdoc
    return {
        "root": tree.root,
        "vertices": vertices,
        "knowledge_sets": [
            {"id": ks.id, "player": ks.player.value, "members": list(ks.members)}
            for ks in sorted(tree.knowledge_sets, key=lambda k: k.id)
        ],
    }


def scenario_to_json(scenario: Scenario) -> dict:
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "name": scenario.name,
        "description": scenario.description,
        "network": {
            "nodes": [
                {
                    "id": node,
                    "importance": scenario.network.importance[node],
                    "terminal": node in scenario.network.terminal,
                }
                for node in scenario.network.nodes
            ],
            "edges": sorted([list(e) for e in scenario.network.edges]),
            "initial": scenario.network.initial,
        },
        "params": {
            "c_a": scenario.params.c_a,
            "m_a": scenario.params.m_a,
            "gamma": scenario.params.gamma,
        },
        "v_max": scenario.v_max,
        "trees": {node: tree_to_json(tree) for node, tree in scenario.trees.items()},
    }
    if scenario.fixed_defense:
        doc["fixed_defense"] = {
            node: {ks: list(dist) for ks, dist in plan.dists.items()}
            for node, plan in scenario.fixed_defense.items()
        }
    return doc


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical JSON text: sorted keys, stable layout, newline-terminated."""
    return json.dumps(scenario_to_json(scenario), sort_keys=True, indent=2) + "\n"


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------------------
# bundled scenarios


def _leaf(vid: str, outcome: str) -> Vertex:
    return Vertex(id=vid, owner=Player.CHANCE, outcome=outcome)


def peer_hop_tree(node_id: str, peers: list[str]) -> GameTree:
    """User-device game: survey for sessions, hop to a random peer or stall.

    Peer leaves use index-based action labels so every device in a cluster
    shares an identical tree modulo outcome labels.
    """
    peers = sorted(peers)
    share = 0.5 / len(peers)
    actions = tuple(f"link-{i}" for i in range(len(peers))) + ("no-link",)
    children = {f"link-{i}": f"u_hop_{i}" for i in range(len(peers))}
    children["no-link"] = "u_miss"
    vertices = {
        "u_root": Vertex(
            id="u_root",
            owner=Player.ATTACKER,
            actions=("survey-peers", "idle"),
            children={"survey-peers": "u_link", "idle": "u_idle"},
        ),
        "u_idle": _leaf("u_idle", node_id),
        "u_link": Vertex(
            id="u_link",
            owner=Player.CHANCE,
            actions=actions,
            children=children,
            chance_dist=tuple([share] * len(peers) + [0.5]),
        ),
        "u_miss": _leaf("u_miss", node_id),
    }
    for i, peer in enumerate(peers):
        vertices[f"u_hop_{i}"] = _leaf(f"u_hop_{i}", peer)
    return GameTree(
        node_id=node_id,
        root="u_root",
        vertices=vertices,
        knowledge_sets=[
            KnowledgeSet("u_move", Player.ATTACKER, ("u_root",), ("survey-peers", "idle"))
        ],
        outcomes=tuple([node_id] + peers),
    )


def _web_tree() -> GameTree:
    vertices = {
        "w_root": Vertex(
            id="w_root",
            owner=Player.ATTACKER,
            actions=("probe-services", "halt"),
            children={"probe-services": "w_scan", "halt": "w_stop"},
        ),
        "w_stop": _leaf("w_stop", "web"),
        "w_scan": Vertex(
            id="w_scan",
            owner=Player.ATTACKER,
            actions=("request-access", "exploit-legacy-rpc"),
            children={"request-access": "w_gate", "exploit-legacy-rpc": "w_rpc"},
        ),
        "w_gate": Vertex(
            id="w_gate",
            owner=Player.DEFENDER,
            actions=("grant", "deny"),
            children={"grant": "w_user_cred", "deny": "w_denied"},
        ),
        "w_user_cred": _leaf("w_user_cred", "user1"),
        "w_denied": _leaf("w_denied", "web"),
        "w_rpc": Vertex(
            id="w_rpc",
            owner=Player.CHANCE,
            actions=("stable-exploit", "crash"),
            children={"stable-exploit": "w_app_cred", "crash": "w_crash"},
            chance_dist=(0.05, 0.95),
        ),
        "w_app_cred": _leaf("w_app_cred", "app"),
        "w_crash": _leaf("w_crash", "web"),
    }
    return GameTree(
        node_id="web",
        root="w_root",
        vertices=vertices,
        knowledge_sets=[
            KnowledgeSet("w_access", Player.DEFENDER, ("w_gate",), ("grant", "deny")),
            KnowledgeSet("w_move", Player.ATTACKER, ("w_scan",),
                         ("request-access", "exploit-legacy-rpc")),
            KnowledgeSet("w_recon", Player.ATTACKER, ("w_root",), ("probe-services", "halt")),
        ],
        outcomes=("web", "app", "user1"),
    )


def _app_tree() -> GameTree:
    vertices = {
        "a_root": Vertex(
            id="a_root",
            owner=Player.ATTACKER,
            actions=("query-credentials", "idle"),
            children={"query-credentials": "a_gate", "idle": "a_idle"},
        ),
        "a_idle": _leaf("a_idle", "app"),
        "a_gate": Vertex(
            id="a_gate",
            owner=Player.DEFENDER,
            actions=("strict-auth", "lenient-auth"),
            children={"strict-auth": "a_blocked", "lenient-auth": "a_asset_cred"},
        ),
        "a_blocked": _leaf("a_blocked", "app"),
        "a_asset_cred": _leaf("a_asset_cred", "asset"),
    }
    return GameTree(
        node_id="app",
        root="a_root",
        vertices=vertices,
        knowledge_sets=[
            KnowledgeSet("a_auth", Player.DEFENDER, ("a_gate",),
                         ("strict-auth", "lenient-auth")),
            KnowledgeSet("a_probe", Player.ATTACKER, ("a_root",),
                         ("query-credentials", "idle")),
        ],
        outcomes=("app", "asset"),
    )


def _user2_tree() -> GameTree:
    vertices = {
        "t_root": Vertex(
            id="t_root",
            owner=Player.ATTACKER,
            actions=("enumerate-shares", "idle"),
            children={"enumerate-shares": "t_scan", "idle": "t_idle"},
        ),
        "t_idle": _leaf("t_idle", "user2"),
        "t_scan": Vertex(
            id="t_scan",
            owner=Player.CHANCE,
            actions=("asset-credential", "peer-session"),
            children={"asset-credential": "t_asset", "peer-session": "t_peer"},
            chance_dist=(0.7, 0.3),
        ),
        "t_asset": _leaf("t_asset", "asset"),
        "t_peer": _leaf("t_peer", "user1"),
    }
    return GameTree(
        node_id="user2",
        root="t_root",
        vertices=vertices,
        knowledge_sets=[
            KnowledgeSet("t_probe", Player.ATTACKER, ("t_root",),
                         ("enumerate-shares", "idle")),
        ],
        outcomes=("user2", "user1", "asset"),
    )


def _asset_tree() -> GameTree:
    vertices = {
        "s_root": Vertex(
            id="s_root",
            owner=Player.ATTACKER,
            actions=("inject-command", "abort"),
            children={"inject-command": "s_gate", "abort": "s_abort"},
        ),
        "s_abort": _leaf("s_abort", "asset"),
        "s_gate": Vertex(
            id="s_gate",
            owner=Player.DEFENDER,
            actions=("execute", "reject"),
            children={"execute": "s_down", "reject": "s_blocked"},
        ),
        "s_down": _leaf("s_down", "opdown"),
        "s_blocked": _leaf("s_blocked", "asset"),
    }
    return GameTree(
        node_id="asset",
        root="s_root",
        vertices=vertices,
        knowledge_sets=[
            KnowledgeSet("s_probe", Player.ATTACKER, ("s_root",),
                         ("inject-command", "abort")),
            KnowledgeSet("s_review", Player.DEFENDER, ("s_gate",), ("execute", "reject")),
        ],
        outcomes=("asset", "opdown"),
    )


def builtin_case_study() -> Scenario:
    """Six-node enterprise scenario: web server foothold, application server,
    two user devices, critical asset, and an absorbing compromised-operations
    node. Fixed defenses sit at the web access gate, the application
    authorization gate, and the asset command review."""
    network = Network(
        nodes=("web", "app", "user1", "user2", "asset", "opdown"),
        edges={
            ("web", "web"), ("app", "app"), ("user1", "user1"),
            ("user2", "user2"), ("asset", "asset"), ("opdown", "opdown"),
            ("web", "app"), ("web", "user1"),
            ("app", "asset"),
            ("user1", "user2"), ("user2", "user1"), ("user2", "asset"),
            ("asset", "opdown"),
        },
        initial="web",
        importance={
            "web": 0.0, "app": 20.0, "user1": 5.0,
            "user2": 5.0, "asset": 30.0, "opdown": 100.0,
        },
        terminal=frozenset({"opdown"}),
    )
    scenario = Scenario(
        network=network,
        params=MspParams(c_a=0.8, m_a=-15.0, gamma=0.9),
        trees={
            "web": _web_tree(),
            "app": _app_tree(),
            "user1": peer_hop_tree("user1", ["user2"]),
            "user2": _user2_tree(),
            "asset": _asset_tree(),
        },
        fixed_defense={
            "web": BehavioralPlan(Player.DEFENDER, {"w_access": (0.7, 0.3)}),
            "app": BehavioralPlan(Player.DEFENDER, {"a_auth": (0.3, 0.7)}),
            "asset": BehavioralPlan(Player.DEFENDER, {"s_review": (0.6, 0.4)}),
        },
        v_max=100.0,
        name="case-study",
        description="Web-facing enterprise segment with a critical asset",
    )
    _check_builtin(scenario)
    return scenario


def two_node_chain(c_a: float = 1.0) -> Scenario:
    """Minimal scenario: a foothold with one pivot into an absorbing prize."""
    network = Network(
        nodes=("entry", "prize"),
        edges={("entry", "entry"), ("prize", "prize"), ("entry", "prize")},
        initial="entry",
        importance={"entry": 0.0, "prize": 10.0},
        terminal=frozenset({"prize"}),
    )
    tree = GameTree(
        node_id="entry",
        root="c_root",
        vertices={
            "c_root": Vertex(
                id="c_root",
                owner=Player.ATTACKER,
                actions=("pivot", "idle"),
                children={"pivot": "c_jump", "idle": "c_stay"},
            ),
            "c_jump": _leaf("c_jump", "prize"),
            "c_stay": _leaf("c_stay", "entry"),
        },
        knowledge_sets=[
            KnowledgeSet("c_move", Player.ATTACKER, ("c_root",), ("pivot", "idle")),
        ],
        outcomes=("entry", "prize"),
    )
    scenario = Scenario(
        network=network,
        params=MspParams(c_a=c_a, m_a=-15.0, gamma=0.9),
        trees={"entry": tree},
        fixed_defense={},
        v_max=100.0,
        name="two-node-chain",
    )
    _check_builtin(scenario)
    return scenario


def _check_builtin(scenario: Scenario) -> None:
    issues = validate_scenario(scenario)
    if issues:  # pragma: no cover - guards the bundled builders
        raise ScenarioError("; ".join(issues))


BUILTIN_SCENARIOS = {
    "case-study": builtin_case_study,
    "two-node-chain": two_node_chain,
}


# ---------------------------------------------------------------------------
# scenario changes


@dataclass
class ReplaceTree:
    node: str
    tree: GameTree
    description: str = ""


@dataclass
class AddNodes:
    count: int
    template: str
    description: str = ""


@dataclass
class RemoveEdge:
    edge: tuple[str, str]
    description: str = ""


ScenarioChange = ReplaceTree | AddNodes | RemoveEdge


def case_study_app_lockdown() -> ReplaceTree:
    """Bundled change: the application server no longer yields any path to
    the critical asset; exploring it only ever stays on the node."""
    tree = GameTree(
        node_id="app",
        root="a_root",
        vertices={
            "a_root": Vertex(
                id="a_root",
                owner=Player.ATTACKER,
                actions=("query-credentials", "idle"),
                children={"query-credentials": "a_nothing", "idle": "a_idle"},
            ),
            "a_nothing": _leaf("a_nothing", "app"),
            "a_idle": _leaf("a_idle", "app"),
        },
        knowledge_sets=[
            KnowledgeSet("a_probe", Player.ATTACKER, ("a_root",),
                         ("query-credentials", "idle")),
        ],
        outcomes=("app", "asset"),
    )
    return ReplaceTree(
        node="app",
        tree=tree,
        description="credential store hardened: no asset material recoverable",
    )


BUILTIN_CHANGES = {"app-lockdown": case_study_app_lockdown}


def parse_change(document: str | Mapping) -> ScenarioChange:
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(
                f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from None
    else:
        doc = dict(document)
    kind = doc.get("kind")
    description = doc.get("description", "")
    if kind == "replace_tree":
        node = doc.get("node")
        if not node or "tree" not in doc:
            raise ScenarioError("replace_tree: needs 'node' and 'tree'")
        tree = tree_from_json(node, doc["tree"], ())
        return ReplaceTree(node=node, tree=tree, description=description)
    if kind == "add_nodes":
        return AddNodes(
            count=int(doc.get("count", 0)),
            template=doc.get("template", ""),
            description=description,
        )
    if kind == "remove_edge":
        edge = doc.get("edge", [])
        if len(edge) != 2:
            raise ScenarioError("remove_edge: 'edge' must be a [from, to] pair")
        return RemoveEdge(edge=(edge[0], edge[1]), description=description)
    raise ScenarioError(f"unknown change kind {kind!r}")


def _cluster_of(scenario: Scenario, template: str) -> list[str]:
    prefix = re.sub(r"\d+$", "", template)
    pattern = re.compile(re.escape(prefix) + r"\d*$")
    return [
        n
        for n in scenario.network.nodes
        if pattern.match(n) and n not in scenario.network.terminal
    ]


def apply_change(scenario: Scenario, change: ScenarioChange) -> Scenario:
    """Produce the changed scenario; raises ScenarioError if it no longer
    validates."""
    if isinstance(change, ReplaceTree):
        changed = _apply_replace_tree(scenario, change)
    elif isinstance(change, AddNodes):
        changed = _apply_add_nodes(scenario, change)
    elif isinstance(change, RemoveEdge):
        changed = _apply_remove_edge(scenario, change)
    else:
        raise ScenarioError(f"unknown change {change!r}")
    issues = validate_scenario(changed)
    if issues:
        raise ScenarioError("; ".join(issues))
    return changed


def _apply_replace_tree(scenario: Scenario, change: ReplaceTree) -> Scenario:
    if change.node not in scenario.trees:
        raise ScenarioError(f"replace_tree: unknown node {change.node!r}")
    outcomes = tuple(scenario.network.successors(change.node))
    tree = replace(change.tree, node_id=change.node, outcomes=outcomes)
    trees = dict(scenario.trees)
    trees[change.node] = tree
    # keep only defense entries whose knowledge sets survive the replacement
    fixed = dict(scenario.fixed_defense)
    if change.node in fixed:
        surviving = {ks.id for ks in tree.knowledge_sets if ks.player == Player.DEFENDER}
        kept = {
            ks: dist
            for ks, dist in fixed[change.node].dists.items()
            if ks in surviving
        }
        if kept:
            fixed[change.node] = BehavioralPlan(Player.DEFENDER, kept)
        else:
            del fixed[change.node]
    return replace(scenario, trees=trees, fixed_defense=fixed)


def _apply_remove_edge(scenario: Scenario, change: RemoveEdge) -> Scenario:
    edge = tuple(change.edge)
    if edge not in scenario.network.edges:
        raise ScenarioError(f"remove_edge: {edge!r} is not in the network")
    source = edge[0]
    network = replace(scenario.network, edges=scenario.network.edges - {edge})
    trees = dict(scenario.trees)
    if source in trees:
        trees[source] = replace(
            trees[source], outcomes=tuple(network.successors(source))
        )
    return replace(scenario, network=network, trees=trees)


def _apply_add_nodes(scenario: Scenario, change: AddNodes) -> Scenario:
    if change.count < 0:
        raise ScenarioError("add_nodes: count must be nonnegative")
    if change.template not in scenario.trees:
        raise ScenarioError(f"add_nodes: unknown template node {change.template!r}")
    cluster = _cluster_of(scenario, change.template)
    prefix = re.sub(r"\d+$", "", change.template)
    taken = [
        int(m.group(1))
        for n in cluster
        if (m := re.match(re.escape(prefix) + r"(\d+)$", n))
    ]
    next_index = max(taken, default=0) + 1
    new_nodes = [f"{prefix}{next_index + i}" for i in range(change.count)]
    cluster = cluster + new_nodes

    importance = dict(scenario.network.importance)
    for node in new_nodes:
        importance[node] = importance[change.template]

    # cluster members exchange sessions with every peer; outside links from
    # cluster members are dropped so all devices share one game shape
    edges = {
        (v, u)
        for v, u in scenario.network.edges
        if v not in cluster or u == v
    }
    for node in new_nodes:
        edges.add((node, node))
    for v in cluster:
        for u in cluster:
            if v != u:
                edges.add((v, u))
    network = Network(
        nodes=tuple(scenario.network.nodes) + tuple(new_nodes),
        edges=edges,
        initial=scenario.network.initial,
        importance=importance,
        terminal=scenario.network.terminal,
    )

    trees = dict(scenario.trees)
    fixed = dict(scenario.fixed_defense)
    for node in cluster:
        trees[node] = peer_hop_tree(node, [p for p in cluster if p != node])
        fixed.pop(node, None)
    return replace(scenario, network=network, trees=trees, fixed_defense=fixed)


def scaled_case_study(n_users: int) -> Scenario:
    """Case study rebuilt with ``n_users`` interchangeable user devices."""
    if n_users < 2:
        raise ScenarioError("the scaled scenario needs at least 2 user devices")
    base = builtin_case_study()
    return apply_change(base, AddNodes(count=n_users - 2, template="user1"))

import json
import random

import pytest

from megapt import (
    AddNodes,
    Player,
    RemoveEdge,
    ReplaceTree,
    ScenarioError,
    apply_change,
    builtin_case_study,
    case_study_app_lockdown,
    parse_scenario,
    scaled_case_study,
    serialize_scenario,
    two_node_chain,
)
from megapt.scenario import (
    complete_defense,
    parse_change,
    scenario_to_json,
    tree_from_json,
    tree_to_json,
    validate_scenario,
)

from conftest import random_tree


def test_case_study_shape():
    scenario = builtin_case_study()
    assert scenario.network.nodes == ("web", "app", "user1", "user2", "asset", "opdown")
    assert scenario.network.initial == "web"
    assert scenario.network.terminal == frozenset({"opdown"})
    assert scenario.network.importance["asset"] == 30.0
    assert scenario.network.importance["opdown"] == 100.0
    assert scenario.params.c_a == 0.8
    assert scenario.params.m_a == -15.0
    assert scenario.params.gamma == 0.9
    assert scenario.v_max == 100.0


def test_case_study_defense_covers_exactly_three_gates():
    scenario = builtin_case_study()
    assert set(scenario.fixed_defense) == {"web", "app", "asset"}
    assert scenario.fixed_defense["web"].dists["w_access"] == (0.7, 0.3)
    assert scenario.fixed_defense["app"].dists["a_auth"] == (0.3, 0.7)
    assert scenario.fixed_defense["asset"].dists["s_review"] == (0.6, 0.4)
    for node in scenario.non_terminal_nodes():
        complete_defense(scenario, node)  # raises if anything is uncovered


def test_case_study_outcomes_match_edges():
    scenario = builtin_case_study()
    assert validate_scenario(scenario) == []
    for node, tree in scenario.trees.items():
        assert set(tree.outcomes) == set(scenario.network.successors(node))


def test_round_trip_case_study():
    scenario = builtin_case_study()
    text = serialize_scenario(scenario)
    again = parse_scenario(text)
    assert again == scenario


def test_round_trip_after_change():
    scenario = builtin_case_study()
    changed = apply_change(scenario, case_study_app_lockdown())
    assert parse_scenario(serialize_scenario(changed)) == changed


def test_serialization_is_byte_stable():
    a = serialize_scenario(builtin_case_study())
    b = serialize_scenario(builtin_case_study())
    assert a == b


def test_round_trip_random_trees():
    rand = random.Random(51)
    for _ in range(25):
        tree = random_tree(rand)
        doc = tree_to_json(tree)
        again = tree_from_json(tree.node_id, doc, tree.outcomes)
        assert again == tree


def test_parse_rejects_syntax_errors():
    with pytest.raises(ScenarioError, match="syntax error at line"):
        parse_scenario("{not json")


def test_parse_rejects_wrong_version():
    with pytest.raises(ScenarioError, match="format_version"):
        parse_scenario(json.dumps({"format_version": 2}))


def test_parse_reports_missing_tree():
    doc = scenario_to_json(builtin_case_study())
    del doc["trees"]["app"]
    with pytest.raises(ScenarioError, match="missing tree for node 'app'"):
        parse_scenario(json.dumps(doc))


def test_parse_reports_outcome_edge_mismatch():
    doc = scenario_to_json(builtin_case_study())
    # user1's tree cannot promise an asset credential: there is no edge
    doc["trees"]["user1"]["vertices"]["u_hop_0"]["outcome"] = "asset"
    with pytest.raises(ScenarioError, match="trees.user1"):
        parse_scenario(json.dumps(doc))


def test_parse_reports_bad_defense_reference():
    doc = scenario_to_json(builtin_case_study())
    doc["fixed_defense"]["web"] = {"missing_set": [0.5, 0.5]}
    with pytest.raises(ScenarioError, match="fixed_defense.web"):
        parse_scenario(json.dumps(doc))


def test_parse_reports_chance_defect_with_location():
    doc = scenario_to_json(builtin_case_study())
    doc["trees"]["web"]["vertices"]["w_rpc"]["chance_dist"] = [0.6, 0.5]
    with pytest.raises(ScenarioError, match="trees.web"):
        parse_scenario(json.dumps(doc))


def test_parse_rejects_terminal_tree():
    doc = scenario_to_json(builtin_case_study())
    doc["trees"]["opdown"] = doc["trees"]["app"]
    with pytest.raises(ScenarioError, match="terminal"):
        parse_scenario(json.dumps(doc))


def test_two_node_chain_validates():
    scenario = two_node_chain(c_a=0.5)
    assert validate_scenario(scenario) == []
    assert scenario.network.terminal == frozenset({"prize"})


def test_replace_tree_change_revalidates():
    scenario = builtin_case_study()
    changed = apply_change(scenario, case_study_app_lockdown())
    assert validate_scenario(changed) == []
    # asset edge survives; the new tree just never reaches it
    assert ("app", "asset") in changed.network.edges
    assert all(
        v.outcome == "app" for v in changed.trees["app"].leaves()
    )
    # the replaced tree has no defender gate, so its defense entry is gone
    assert "app" not in changed.fixed_defense


def test_replace_tree_unknown_node():
    with pytest.raises(ScenarioError, match="unknown node"):
        apply_change(
            builtin_case_study(),
            ReplaceTree(node="nope", tree=builtin_case_study().trees["app"]),
        )


def test_remove_edge_unused_target_is_fine():
    scenario = builtin_case_study()
    lockdown = apply_change(scenario, case_study_app_lockdown())
    # after the lockdown no leaf references asset, so the edge can go
    changed = apply_change(lockdown, RemoveEdge(edge=("app", "asset")))
    assert ("app", "asset") not in changed.network.edges
    assert changed.trees["app"].outcomes == ("app",)


def test_remove_edge_in_use_fails_revalidation():
    scenario = builtin_case_study()
    with pytest.raises(ScenarioError):
        apply_change(scenario, RemoveEdge(edge=("app", "asset")))
    with pytest.raises(ScenarioError, match="not in the network"):
        apply_change(scenario, RemoveEdge(edge=("app", "web")))


def test_add_nodes_builds_symmetric_cluster():
    scenario = builtin_case_study()
    grown = apply_change(scenario, AddNodes(count=2, template="user1"))
    users = [n for n in grown.network.nodes if n.startswith("user")]
    assert users == ["user1", "user2", "user3", "user4"]
    for u in users:
        others = [p for p in users if p != u]
        assert set(grown.network.successors(u)) == set(others) | {u}
        assert grown.network.importance[u] == 5.0
    # scaled devices no longer expose the old asset share
    assert ("user2", "asset") not in grown.network.edges
    assert validate_scenario(grown) == []


def test_scaled_case_study_sizes():
    for n in (2, 5):
        scenario = scaled_case_study(n)
        users = [x for x in scenario.network.nodes if x.startswith("user")]
        assert len(users) == n
    with pytest.raises(ScenarioError):
        scaled_case_study(1)


def test_parse_change_document_forms():
    lockdown = case_study_app_lockdown()
    doc = {
        "kind": "replace_tree",
        "node": "app",
        "tree": tree_to_json(lockdown.tree),
        "description": "hardened",
    }
    change = parse_change(json.dumps(doc))
    assert isinstance(change, ReplaceTree) and change.node == "app"
    assert isinstance(parse_change({"kind": "add_nodes", "count": 3, "template": "user1"}), AddNodes)
    assert isinstance(parse_change({"kind": "remove_edge", "edge": ["a", "b"]}), RemoveEdge)
    with pytest.raises(ScenarioError, match="unknown change kind"):
        parse_change({"kind": "bogus"})
    with pytest.raises(ScenarioError, match="syntax error"):
        parse_change("{oops")


def test_complete_defense_missing_gate_names_node():
    scenario = builtin_case_study()
    scenario.fixed_defense.pop("web")
    with pytest.raises(ScenarioError, match="'web'"):
        complete_defense(scenario, "web")


def test_complete_defense_trivial_for_defenderless_tree():
    scenario = builtin_case_study()
    plan = complete_defense(scenario, "user1")
    assert plan.player == Player.DEFENDER and plan.dists == {}

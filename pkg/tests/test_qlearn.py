import numpy as np
import pytest

from megapt import (
    FlatMdp,
    FlattenError,
    MetaOptions,
    MspParams,
    Network,
    QLearnConfig,
    Scheme,
    builtin_case_study,
    flatten,
    q_learn,
    run_meta,
    scaled_case_study,
    two_node_chain,
)
from megapt.qlearn import (
    enumerated_state_count,
    greedy_value,
    optimal_values,
)
from megapt.scenario import Scenario, peer_hop_tree

OPTS = MetaOptions(threads=1)


def _toy_pair() -> Scenario:
    """Two mutually-linked devices, one attacker knowledge set each."""
    network = Network(
        nodes=("boxA", "boxB"),
        edges={("boxA", "boxA"), ("boxB", "boxB"), ("boxA", "boxB"), ("boxB", "boxA")},
        initial="boxA",
        importance={"boxA": 5.0, "boxB": 5.0},
        terminal=frozenset(),
    )
    return Scenario(
        network=network,
        params=MspParams(c_a=0.8, m_a=-15.0, gamma=0.9),
        trees={
            "boxA": peer_hop_tree("boxA", ["boxB"]),
            "boxB": peer_hop_tree("boxB", ["boxA"]),
        },
        fixed_defense={},
        v_max=100.0,
    )


def test_enumerated_count_formula_toy():
    scenario = _toy_pair()
    assert enumerated_state_count(scenario) == 2 * 2 * 2  # |V| x 2^1 x 2^1
    assert flatten(scenario).n_states_enumerated == 8


def test_enumerated_count_grows_with_each_device():
    base = scaled_case_study(2)
    grown = scaled_case_study(3)
    # each added device multiplies the flag space by its own domain (2)
    ratio = enumerated_state_count(grown) / enumerated_state_count(base)
    assert ratio == pytest.approx(2 * len(grown.network.nodes) / len(base.network.nodes))


def test_flatten_cap_reports_count():
    scenario = scaled_case_study(16)
    with pytest.raises(FlattenError, match="20971520"):
        flatten(scenario, cap=10**7)


def test_flatten_requires_covered_defense():
    scenario = builtin_case_study()
    scenario.fixed_defense.pop("web")
    with pytest.raises(Exception, match="web"):
        flatten(scenario)


def test_chain_flat_mdp_shape_and_dp():
    scenario = two_node_chain(c_a=1.0)
    mdp = flatten(scenario)
    assert mdp.states[mdp.start_state] == ("entry", "c_root")
    assert optimal_values(mdp)[mdp.start_state] == pytest.approx(10.0, abs=1e-9)


def test_flat_optimum_matches_meta_on_chain():
    for c_a in (1.0, 0.5):
        scenario = two_node_chain(c_a=c_a)
        mdp = flatten(scenario)
        value = optimal_values(mdp)[mdp.start_state]
        playbook = run_meta(scenario, Scheme.RED, OPTS)
        assert value == pytest.approx(playbook.values["entry"], abs=1e-3)


def test_flat_optimum_matches_meta_on_case_study():
    scenario = builtin_case_study()
    mdp = flatten(scenario)
    value = optimal_values(mdp)[mdp.start_state]
    playbook = run_meta(scenario, Scheme.RED, OPTS)
    assert value == pytest.approx(playbook.values["web"], abs=1e-3)


def test_q_learning_chain_reaches_oracle():
    scenario = two_node_chain(c_a=1.0)
    mdp = flatten(scenario)
    table = q_learn(mdp, QLearnConfig(episodes=5_000, seed=3))
    oracle = run_meta(scenario, Scheme.RED, OPTS).values["entry"]
    assert abs(greedy_value(mdp, table) - oracle) <= 0.5
    assert oracle == pytest.approx(10.0)


def test_q_learning_is_seed_deterministic():
    mdp = flatten(two_node_chain(c_a=0.5))
    a = q_learn(mdp, QLearnConfig(episodes=3_000, seed=11))
    b = q_learn(mdp, QLearnConfig(episodes=3_000, seed=11))
    assert dict(a.q) == dict(b.q)
    assert dict(a.visits) == dict(b.visits)
    assert np.array_equal(a.returns, b.returns)
    c = q_learn(mdp, QLearnConfig(episodes=3_000, seed=12))
    assert dict(a.q) != dict(c.q)


def test_bandit_greedy_picks_high_reward():
    # one decision state, two arms paying 1 and 5 into a terminal sink
    mdp = FlatMdp(
        node_order=("arm",),
        states=[("arm", "root"), ("arm", "@terminal")],
        enumerated_ids=[0, 1],
        n_states_enumerated=2,
        start_state=0,
        action_ptr=np.array([0, 2, 2], dtype=np.int64),
        action_labels=["low", "high"],
        outcome_ptr=np.array([0, 1, 2], dtype=np.int64),
        out_state=np.array([1, 1], dtype=np.int64),
        out_prob=np.array([1.0, 1.0]),
        out_reward=np.array([1.0, 5.0]),
        out_discount=np.array([0.9, 0.9]),
        terminal=np.array([False, True]),
        loc_of_state=np.array([0, 0], dtype=np.int64),
        word_of_state=np.array([0, 0], dtype=np.int64),
        node_stride=np.array([1], dtype=np.int64),
        word_space=1,
        max_actions=2,
    )
    table = q_learn(mdp, QLearnConfig(episodes=500, seed=5))
    assert table.greedy_action(0) == 1
    assert table.value(0, 1) == pytest.approx(5.0, abs=0.5)


def test_toy_pair_learns_to_dp_value():
    scenario = _toy_pair()
    mdp = flatten(scenario)
    dp = optimal_values(mdp)[mdp.start_state]
    table = q_learn(mdp, QLearnConfig(episodes=50_000, seed=1))
    assert abs(greedy_value(mdp, table) - dp) <= 0.5


def test_returns_trace_has_one_entry_per_episode():
    mdp = flatten(two_node_chain(c_a=1.0))
    table = q_learn(mdp, QLearnConfig(episodes=123, seed=0))
    assert table.returns.shape == (123,)
    # with c_a=1 a pivot episode collects exactly the entry reward
    assert table.returns.max() == pytest.approx(10.0)


def test_dynamics_probabilities_are_stochastic():
    mdp = flatten(builtin_case_study())
    for k in range(mdp.n_state_actions):
        lo, hi = mdp.outcome_ptr[k], mdp.outcome_ptr[k + 1]
        assert mdp.out_prob[lo:hi].sum() == pytest.approx(1.0, abs=1e-9)


def test_enumerated_ids_are_unique_and_decodable():
    mdp = flatten(builtin_case_study())
    assert len(set(mdp.enumerated_ids)) == mdp.n_states
    assert all(0 <= i < mdp.n_states_enumerated for i in mdp.enumerated_ids)


def test_greedy_policy_maps_states_to_techniques():
    scenario = two_node_chain(c_a=1.0)
    mdp = flatten(scenario)
    table = q_learn(mdp, QLearnConfig(episodes=3_000, seed=4))
    policy = table.greedy_policy()
    assert policy[("entry", "c_root")] == "pivot"


def test_enumerated_ids_decode_back():
    mdp = flatten(builtin_case_study())
    node_index = {n: i for i, n in enumerate(mdp.node_order)}
    for s, enum_id in enumerate(mdp.enumerated_ids):
        node, words = mdp.decode(enum_id)
        assert node_index[node] == mdp.loc_of_state[s]
        assert words[node] == mdp.word_of_state[s]
        assert all(w == 0 for n, w in words.items() if n != node)

import numpy as np
import pytest

from megapt import _kernels
from megapt.qlearn import QLearnConfig, QTable, _new_tables, flatten, train_more
from megapt.scenario import two_node_chain


def _kernel_args(mdp, table, episodes, config):
    return (
        mdp.action_ptr, mdp.outcome_ptr, mdp.out_state, mdp.out_prob,
        mdp.out_reward, mdp.out_discount, mdp.terminal,
        mdp.loc_of_state, mdp.word_of_state, mdp.node_stride,
        mdp.word_space, mdp.max_actions, mdp.start_state,
        episodes, config.step_cap, config.alpha, config.epsilon,
        config.epsilon_end, config.seed, table.q, table.visits, table.q_init,
    )


@pytest.mark.skipif(not _kernels.JIT_ENABLED, reason="JIT disabled in this run")
def test_q_learning_jit_matches_interpreted_path():
    mdp = flatten(two_node_chain(c_a=0.5))
    config = QLearnConfig(episodes=2_000, seed=9)
    q, visits = _new_tables()
    jit_table = QTable(mdp=mdp, q=q, visits=visits)
    jit_returns = train_more(mdp, jit_table, config.episodes, config)
    py_table = QTable(mdp=mdp, q={}, visits={})
    py_returns = _kernels._q_learn_impl(*_kernel_args(mdp, py_table, config.episodes, config))
    assert {int(k): v for k, v in dict(jit_table.q).items()} == pytest.approx(
        {int(k): v for k, v in py_table.q.items()}
    )
    assert np.array_equal(jit_returns, py_returns)


@pytest.mark.skipif(not _kernels.JIT_ENABLED, reason="JIT disabled in this run")
def test_fictitious_play_jit_matches_interpreted_path():
    rng = np.random.default_rng(17)
    payoff = rng.normal(size=(5, 7))
    jit = _kernels.fictitious_play(payoff, 5_000, 0.0)
    py = _kernels._fictitious_play_impl(payoff, 5_000, 0.0)
    assert np.array_equal(jit[0], py[0])
    assert np.array_equal(jit[1], py[1])
    assert jit[2] == py[2] and jit[3] == py[3]


def test_fictitious_play_gap_shrinks():
    pennies = np.array([[1.0, -1.0], [-1.0, 1.0]])
    rows, cols, iters, gap = _kernels.fictitious_play(pennies, 3_000_000, 1e-3)
    assert gap <= 1e-3
    assert rows.sum() == iters
    assert rows[0] / rows.sum() == pytest.approx(0.5, abs=0.05)


def test_value_iteration_kernel_geometric_series():
    mdp = flatten(two_node_chain(c_a=1.0))
    values = _kernels.value_iteration_kernel(
        mdp.action_ptr, mdp.outcome_ptr, mdp.out_state, mdp.out_prob,
        mdp.out_reward, mdp.out_discount, mdp.terminal, 1e-12, 100_000,
    )
    assert values[mdp.start_state] == pytest.approx(10.0, abs=1e-9)

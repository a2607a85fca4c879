"""Timing comparison of the JIT-compiled kernels against the interpreted path.

Run as ``python -m megapt.kernel_bench``. The same source functions back
both paths (see ``_kernels``), so this measures compilation benefit only.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import _kernels
from .qlearn import QLearnConfig, QTable, _new_tables, flatten, train_more
from .scenario import scaled_case_study


def _time(fn) -> float:
    tic = time.perf_counter()
    fn()
    return time.perf_counter() - tic


def bench_q_learning(episodes: int) -> tuple[float, float]:
    mdp = flatten(scaled_case_study(4))
    config = QLearnConfig(episodes=episodes)

    def args(table: QTable):
        return (
            mdp.action_ptr, mdp.outcome_ptr, mdp.out_state, mdp.out_prob,
            mdp.out_reward, mdp.out_discount, mdp.terminal,
            mdp.loc_of_state, mdp.word_of_state, mdp.node_stride,
            mdp.word_space, mdp.max_actions, mdp.start_state,
            episodes, config.step_cap, config.alpha, config.epsilon,
            config.epsilon_end, config.seed, table.q, table.visits,
            table.q_init,
        )

    def fresh() -> QTable:
        q, visits = _new_tables()
        return QTable(mdp=mdp, q=q, visits=visits)

    if _kernels.JIT_ENABLED:
        train_more(mdp, fresh(), 1, config)  # compile outside the timer
        jit_s = _time(lambda: _kernels.q_learn_kernel(*args(fresh())))
    else:
        jit_s = float("nan")
    py_s = _time(lambda: _kernels._q_learn_impl(*args(QTable(mdp=mdp, q={}, visits={}))))
    return jit_s, py_s


def bench_fictitious_play(iterations: int) -> tuple[float, float]:
    rng = np.random.default_rng(7)
    payoff = rng.normal(size=(24, 24))
    if _kernels.JIT_ENABLED:
        _kernels.fictitious_play(payoff, 10, 0.0)
        jit_s = _time(lambda: _kernels.fictitious_play(payoff, iterations, 0.0))
    else:
        jit_s = float("nan")
    py_s = _time(lambda: _kernels._fictitious_play_impl(payoff, iterations, 0.0))
    return jit_s, py_s


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=2000)
    parser.add_argument("--fp-iterations", type=int, default=50_000)
    args = parser.parse_args(argv)

    print(f"JIT enabled: {_kernels.JIT_ENABLED} (set MEGA_PT_NO_JIT=1 to disable)")
    rows = [
        ("q_learning", *bench_q_learning(args.episodes)),
        ("fictitious_play", *bench_fictitious_play(args.fp_iterations)),
    ]
    print(f"{'kernel':<18}{'jit_s':>10}{'python_s':>12}{'speedup':>10}")
    for name, jit_s, py_s in rows:
        speedup = py_s / jit_s if jit_s == jit_s and jit_s > 0 else float("nan")
        print(f"{name:<18}{jit_s:>10.4f}{py_s:>12.4f}{speedup:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Hot numeric kernels, JIT-compiled when numba is available.

Each kernel is written once as a plain-numpy loop; the module compiles it
with ``numba.njit`` unless the ``MEGA_PT_NO_JIT`` environment variable is set
(or numba cannot be imported), in which case the interpreted fallback runs.
Both paths execute the identical statement sequence, so results match
bit-for-bit. ``python -m megapt.kernel_bench`` times one against the other.
"""

from __future__ import annotations

import os

import numpy as np


def _jit_disabled_by_env() -> bool:
    return os.environ.get("MEGA_PT_NO_JIT", "").strip().lower() in {"1", "true", "yes", "on"}


def _fictitious_play_impl(payoff, max_iters, tolerance):
    """Alternating empirical best responses on a zero-sum matrix.

    Returns (row counts, column counts, iterations, final duality gap).
    """
    m, n = payoff.shape
    row_counts = np.zeros(m, dtype=np.float64)
    col_counts = np.zeros(n, dtype=np.float64)
    # cumulative payoff of each pure row vs the column history, and vice versa
    row_score = np.zeros(m, dtype=np.float64)
    col_score = np.zeros(n, dtype=np.float64)
    gap = np.inf
    iters = 0
    for t in range(1, max_iters + 1):
        best_row = 0
        for i in range(1, m):
            if row_score[i] > row_score[best_row]:
                best_row = i
        best_col = 0
        for j in range(1, n):
            if col_score[j] < col_score[best_col]:
                best_col = j
        row_counts[best_row] += 1.0
        col_counts[best_col] += 1.0
        for i in range(m):
            row_score[i] += payoff[i, best_col]
        for j in range(n):
            col_score[j] += payoff[best_row, j]
        upper = row_score[0]
        for i in range(1, m):
            if row_score[i] > upper:
                upper = row_score[i]
        lower = col_score[0]
        for j in range(1, n):
            if col_score[j] < lower:
                lower = col_score[j]
        gap = (upper - lower) / t
        iters = t
        if gap <= tolerance:
            break
    return row_counts, col_counts, iters, gap


def _q_learn_impl(
    action_ptr,
    outcome_ptr,
    out_state,
    out_prob,
    out_reward,
    out_discount,
    terminal,
    loc_of_state,
    word_of_state,
    node_stride,
    word_space,
    max_actions,
    start_state,
    episodes,
    step_cap,
    alpha,
    eps_start,
    eps_end,
    seed,
    q,
    visits,
    q_init,
):
    """Tabular Q-learning over a compiled flat MDP.

    The environment steps over the compiled core (``action_ptr`` indexes
    states, ``outcome_ptr`` indexes state-action pairs, every outcome row
    carries next state / probability / reward / discount). The *learner*
    keys its table on the full flattened state: the core position combined
    with the accumulated knowledge words of every other node, which is what
    makes the table blow up as devices are added. ``q`` and ``visits`` are
    dictionaries with ``q_init`` as the unvisited default, updated in place
    so training can resume; returns the per-episode discounted returns.

    Epsilon decays linearly from ``eps_start`` to ``eps_end`` over episodes.
    """
    np.random.seed(seed)
    returns = np.zeros(episodes, dtype=np.float64)
    n_nodes = node_stride.shape[0]
    words = np.zeros(n_nodes, dtype=np.int64)

    for ep in range(episodes):
        if episodes > 1:
            eps = eps_start + (eps_end - eps_start) * (ep / (episodes - 1.0))
        else:
            eps = eps_start
        state = start_state
        for i in range(n_nodes):
            words[i] = 0
        v = loc_of_state[state]
        words[v] = word_of_state[state]
        acc = words[v] * node_stride[v]
        total = 0.0
        running_discount = 1.0
        for _ in range(step_cap):
            if terminal[state]:
                break
            lo = action_ptr[state]
            hi = action_ptr[state + 1]
            n_actions = hi - lo
            if n_actions <= 0:
                break
            v = loc_of_state[state]
            # context excludes the current node's word: the core state
            # already resolves the live position there
            key_base = (state * word_space + acc - words[v] * node_stride[v]) * max_actions
            if np.random.random() < eps:
                a = int(np.random.random() * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            else:
                a = 0
                best = q.get(key_base, q_init)
                for j in range(1, n_actions):
                    cand = q.get(key_base + j, q_init)
                    if cand > best:
                        best = cand
                        a = j
            # sample the environment outcome for this state-action pair
            pair = lo + a
            draw = np.random.random()
            acc_p = 0.0
            row = outcome_ptr[pair + 1] - 1
            for k in range(outcome_ptr[pair], outcome_ptr[pair + 1]):
                acc_p += out_prob[k]
                if draw < acc_p:
                    row = k
                    break
            next_state = out_state[row]
            reward = out_reward[row]
            discount = out_discount[row]

            # knowledge words only ever accumulate
            nv = loc_of_state[next_state]
            grown = words[nv] | word_of_state[next_state]
            acc += (grown - words[nv]) * node_stride[nv]
            words[nv] = grown

            best_next = 0.0
            if not terminal[next_state]:
                nlo = action_ptr[next_state]
                nhi = action_ptr[next_state + 1]
                if nhi > nlo:
                    nkb = (
                        next_state * word_space
                        + acc
                        - words[nv] * node_stride[nv]
                    ) * max_actions
                    best_next = q.get(nkb, q_init)
                    for j in range(1, nhi - nlo):
                        cand = q.get(nkb + j, q_init)
                        if cand > best_next:
                            best_next = cand
            key = key_base + a
            old = q.get(key, q_init)
            q[key] = old + alpha * (reward + discount * best_next - old)
            visits[key] = visits.get(key, 0) + 1
            total += running_discount * reward
            running_discount *= discount
            state = next_state
        returns[ep] = total
    return returns


def _greedy_rollout_impl(
    action_ptr,
    outcome_ptr,
    out_state,
    out_prob,
    out_reward,
    out_discount,
    terminal,
    loc_of_state,
    word_of_state,
    node_stride,
    word_space,
    max_actions,
    start_state,
    rollouts,
    step_cap,
    seed,
    q,
    q_init,
):
    """Monte-Carlo value of the greedy policy read off the Q dictionary."""
    np.random.seed(seed)
    n_nodes = node_stride.shape[0]
    words = np.zeros(n_nodes, dtype=np.int64)
    total = 0.0
    for _ in range(rollouts):
        state = start_state
        for i in range(n_nodes):
            words[i] = 0
        v = loc_of_state[state]
        words[v] = word_of_state[state]
        acc = words[v] * node_stride[v]
        ret = 0.0
        running_discount = 1.0
        for _ in range(step_cap):
            if terminal[state]:
                break
            lo = action_ptr[state]
            hi = action_ptr[state + 1]
            n_actions = hi - lo
            if n_actions <= 0:
                break
            v = loc_of_state[state]
            key_base = (state * word_space + acc - words[v] * node_stride[v]) * max_actions
            a = 0
            best = q.get(key_base, q_init)
            for j in range(1, n_actions):
                cand = q.get(key_base + j, q_init)
                if cand > best:
                    best = cand
                    a = j
            pair = lo + a
            draw = np.random.random()
            acc_p = 0.0
            row = outcome_ptr[pair + 1] - 1
            for k in range(outcome_ptr[pair], outcome_ptr[pair + 1]):
                acc_p += out_prob[k]
                if draw < acc_p:
                    row = k
                    break
            next_state = out_state[row]
            nv = loc_of_state[next_state]
            grown = words[nv] | word_of_state[next_state]
            acc += (grown - words[nv]) * node_stride[nv]
            words[nv] = grown
            ret += running_discount * out_reward[row]
            running_discount *= out_discount[row]
            state = next_state
        total += ret
    return total / rollouts


def _value_iteration_impl(
    action_ptr,
    outcome_ptr,
    out_state,
    out_prob,
    out_reward,
    out_discount,
    terminal,
    tolerance,
    max_sweeps,
):
    """Optimal values of a compiled flat MDP by synchronous value iteration."""
    n_states = action_ptr.shape[0] - 1
    values = np.zeros(n_states, dtype=np.float64)
    for _ in range(max_sweeps):
        delta = 0.0
        for s in range(n_states):
            if terminal[s]:
                continue
            lo = action_ptr[s]
            hi = action_ptr[s + 1]
            if hi <= lo:
                continue
            best = -np.inf
            for a in range(lo, hi):
                total = 0.0
                for k in range(outcome_ptr[a], outcome_ptr[a + 1]):
                    total += out_prob[k] * (
                        out_reward[k] + out_discount[k] * values[out_state[k]]
                    )
                if total > best:
                    best = total
            diff = abs(best - values[s])
            if diff > delta:
                delta = diff
            values[s] = best
        if delta <= tolerance:
            break
    return values


JIT_ENABLED = False
if not _jit_disabled_by_env():
    try:
        from numba import njit

        JIT_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False

if JIT_ENABLED:
    fictitious_play = njit(cache=True)(_fictitious_play_impl)
    q_learn_kernel = njit(cache=True)(_q_learn_impl)
    greedy_rollout_kernel = njit(cache=True)(_greedy_rollout_impl)
    value_iteration_kernel = njit(cache=True)(_value_iteration_impl)
else:
    fictitious_play = _fictitious_play_impl
    q_learn_kernel = _q_learn_impl
    greedy_rollout_kernel = _greedy_rollout_impl
    value_iteration_kernel = _value_iteration_impl

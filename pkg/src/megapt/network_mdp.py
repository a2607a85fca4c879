"""Network-level strategic process: lateral movement as a Markov decision process.

States are network nodes, actions are outgoing edges. Moving along a non-self
edge succeeds with the attacker-capability probability and pays the entered
node's importance; failing (or deliberately staying) pays the stay penalty.
Terminal nodes absorb with value zero, so their importance is a one-time
payoff collected on the entering transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .plans import PlanProfile, PlayerValues, outcome_distribution
from .trees import PROB_TOL, GameTree

RESIDUAL_TOL = 1e-9


class NetworkError(ValueError):
    pass


@dataclass
class Network:
    """Directed graph with per-node importance and absorbing terminal nodes."""

    nodes: tuple[str, ...]
    edges: set[tuple[str, str]]
    initial: str
    importance: dict[str, float]
    terminal: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        self.nodes = tuple(self.nodes)
        self.edges = set(tuple(e) for e in self.edges)
        self.terminal = frozenset(self.terminal)
        self._index = {node: i for i, node in enumerate(self.nodes)}
        self._successors: dict[str, list[str]] = {n: [] for n in self.nodes}
        for v, u in self.edges:
            if v in self._successors and u in self._index:
                self._successors[v].append(u)
        for targets in self._successors.values():
            targets.sort(key=self._index.__getitem__)

    def index(self, node: str) -> int:
        return self._index[node]

    def successors(self, node: str) -> list[str]:
        return list(self._successors[node])

    def issues(self) -> list[str]:
        problems = []
        if self.initial not in self._index:
            problems.append(f"initial node {self.initial!r} is not in the network")
        for v, u in sorted(self.edges):
            if v not in self._index or u not in self._index:
                problems.append(f"edge ({v!r}, {u!r}) references an unknown node")
        for node in self.nodes:
            if (node, node) not in self.edges:
                problems.append(f"node {node!r} has no self-loop")
            if self.importance.get(node, -1.0) < 0:
                problems.append(f"node {node!r} needs a nonnegative importance")
        for node in self.terminal:
            if node not in self._index:
                problems.append(f"terminal node {node!r} is not in the network")
                continue
            extra = [u for u in self.successors(node) if u != node]
            if extra:
                problems.append(
                    f"terminal node {node!r} has outgoing edges to {extra}"
                )
        return problems

    def validate(self) -> None:
        problems = self.issues()
        if problems:
            raise NetworkError("; ".join(problems))


@dataclass
class MspParams:
    """Attacker capability, stay penalty, and discount factor."""

    c_a: float = 0.8
    m_a: float = -15.0
    gamma: float = 0.9

    def validate(self) -> None:
        if not 0.0 <= self.c_a <= 1.0:
            raise NetworkError(f"capability c_a={self.c_a:g} must lie in [0, 1]")
        if self.m_a >= 0.0:
            raise NetworkError(f"stay penalty m_a={self.m_a:g} must be negative")
        if not 0.0 < self.gamma <= 1.0:
            raise NetworkError(f"discount gamma={self.gamma:g} must lie in (0, 1]")


@dataclass
class GlobalStrategy:
    """Per-node probability vector over that node's outgoing edges."""

    probs: dict[str, dict[str, float]] = field(default_factory=dict)

    def row(self, node: str) -> dict[str, float]:
        return self.probs[node]

    def validate(self, network: Network) -> None:
        for node in network.nodes:
            row = self.probs.get(node)
            if row is None:
                raise NetworkError(f"strategy has no row for node {node!r}")
            allowed = set(network.successors(node))
            for target, p in row.items():
                if target not in allowed:
                    raise NetworkError(
                        f"strategy at {node!r} uses missing edge to {target!r}"
                    )
                if p < -PROB_TOL:
                    raise NetworkError(f"negative probability at {node!r}->{target!r}")
            total = sum(row.values())
            if abs(total - 1.0) > PROB_TOL:
                raise NetworkError(f"strategy row at {node!r} sums to {total:g}")


ValueFunction = dict[str, float]


def transition_prob(
    s: str, action: tuple[str, str], s_next: str, params: MspParams
) -> float:
    """Piecewise lateral-movement kernel."""
    v, u = action
    if v != s:
        raise NetworkError(f"action {action!r} does not start at state {s!r}")
    if u == v:
        return 1.0 if s_next == v else 0.0
    if s_next == u:
        return params.c_a
    if s_next == v:
        return 1.0 - params.c_a
    return 0.0


def movement_reward(
    s: str,
    action: tuple[str, str],
    s_next: str,
    network: Network,
    params: MspParams,
) -> float:
    """Stay penalty on any transition that lands back at the source,
    entered-node importance on a successful move."""
    v, u = action
    if action not in network.edges:
        raise NetworkError(f"action {action!r} is not an edge of the network")
    if transition_prob(s, action, s_next, params) <= 0.0:
        raise NetworkError(f"state {s_next!r} is unreachable via {action!r}")
    if s_next == v:
        return params.m_a
    return network.importance[u]


def _linear_system(
    network: Network, params: MspParams, pi: GlobalStrategy
) -> tuple[np.ndarray, np.ndarray]:
    n = len(network.nodes)
    P = np.zeros((n, n))
    r = np.zeros(n)
    for node in network.nodes:
        i = network.index(node)
        if node in network.terminal:
            continue
        for target, weight in pi.row(node).items():
            if weight == 0.0:
                continue
            if target == node:
                P[i, i] += weight
                r[i] += weight * params.m_a
            else:
                j = network.index(target)
                P[i, j] += weight * params.c_a
                r[i] += weight * params.c_a * network.importance[target]
                P[i, i] += weight * (1.0 - params.c_a)
                r[i] += weight * (1.0 - params.c_a) * params.m_a
    return P, r


def bellman_residual(
    network: Network,
    params: MspParams,
    pi: GlobalStrategy,
    values: ValueFunction,
) -> float:
    P, r = _linear_system(network, params, pi)
    v = np.array([values[node] for node in network.nodes])
    resid = r + params.gamma * P @ v - v
    for node in network.terminal:
        resid[network.index(node)] = values[node]
    return float(np.max(np.abs(resid)))


def policy_evaluation(
    network: Network,
    params: MspParams,
    pi: GlobalStrategy,
    method: str = "direct",
    tolerance: float = RESIDUAL_TOL,
    max_sweeps: int = 1_000_000,
) -> ValueFunction:
    """Value of the global strategy at every node (terminal nodes pinned to 0).

    Solves (I - gamma * P) V = r directly by default; the iterative fallback
    sweeps to the same residual bound.
    """
    network.validate()
    params.validate()
    pi.validate(network)
    P, r = _linear_system(network, params, pi)
    n = len(network.nodes)
    if method == "direct":
        A = np.eye(n) - params.gamma * P
        try:
            v = np.linalg.solve(A, r)
        except np.linalg.LinAlgError as exc:
            raise NetworkError(
                "policy evaluation system is singular (gamma=1 with a "
                "recurrent non-terminal class)"
            ) from exc
    elif method == "iterative":
        v = np.zeros(n)
        for _ in range(max_sweeps):
            nxt = r + params.gamma * P @ v
            done = float(np.max(np.abs(nxt - v))) <= tolerance
            v = nxt
            if done:
                # one more application shrinks the residual below the change
                v = r + params.gamma * P @ v
                break
        else:
            raise NetworkError("iterative policy evaluation did not converge")
    else:
        raise NetworkError(f"unknown policy evaluation method {method!r}")

    for node in network.terminal:
        v[network.index(node)] = 0.0
    resid = float(np.max(np.abs(r + params.gamma * P @ v - v)))
    if resid > tolerance:
        raise NetworkError(f"Bellman residual {resid:.3e} above {tolerance:g}")
    return {node: float(v[network.index(node)]) for node in network.nodes}


def strategy_from_profiles(
    network: Network, profiles: Mapping[str, tuple[GameTree, PlanProfile]]
) -> GlobalStrategy:
    """Macro strategy induced by node-level outcome distributions.

    The outcome probability of label z at node v becomes the probability of
    the edge (v, z); terminal nodes self-loop with probability one.
    """
    probs: dict[str, dict[str, float]] = {}
    for node in network.nodes:
        if node in network.terminal:
            probs[node] = {node: 1.0}
            continue
        if node not in profiles:
            raise NetworkError(f"no plan profile for node {node!r}")
        tree, profile = profiles[node]
        dist = outcome_distribution(tree, profile)
        allowed = set(network.successors(node))
        row = {}
        for z, p in dist.probs.items():
            if z not in allowed:
                raise NetworkError(
                    f"outcome {z!r} at node {node!r} has no matching edge"
                )
            row[z] = p
        probs[node] = row
    strategy = GlobalStrategy(probs)
    strategy.validate(network)
    return strategy


def mtg_utilities(
    network: Network,
    params: MspParams,
    values: ValueFunction,
    v: str,
) -> dict[str, PlayerValues]:
    """Outcome utilities for the game at node ``v`` induced by the values.

    Reaching outcome u != v means attempting the edge (v, u); reaching v
    means staying put. The defender's utility mirrors the attacker's.
    """
    for node in network.nodes:
        if node not in values:
            raise NetworkError(f"value function misses node {node!r}")
    utilities = {}
    stay = params.m_a + params.gamma * values[v]
    for u in network.successors(v):
        if u == v:
            ua = stay
        else:
            ua = params.c_a * (network.importance[u] + params.gamma * values[u]) + (
                1.0 - params.c_a
            ) * stay
        utilities[u] = PlayerValues(ua, -ua)
    return utilities

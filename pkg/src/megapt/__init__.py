"""Meta-game penetration testing engine.

Node-level attacker/defender games (extensive form) coupled to a
network-level movement process; the fixed point of the two is a
penetration playbook with per-node risk scores.
"""

from .engine import (
    DiffReport,
    EngineError,
    MetaOptions,
    Playbook,
    adapt,
    convergence_metric,
    risk_score,
    run_meta,
    solve_micro_stage,
)
from .network_mdp import (
    GlobalStrategy,
    MspParams,
    Network,
    NetworkError,
    movement_reward,
    mtg_utilities,
    policy_evaluation,
    strategy_from_profiles,
    transition_prob,
)
from .plans import (
    BehavioralPlan,
    MixedPlan,
    OutcomeDistribution,
    PlanError,
    PlanProfile,
    PlayerValues,
    PurePlan,
    behavioral_to_mixed,
    expected_utility,
    mixed_to_behavioral,
    outcome_distribution,
    reach_probabilities,
    zero_sum_utilities,
)
from .qlearn import FlatMdp, FlattenError, QLearnConfig, QTable, benchmark_scaling, flatten, q_learn
from .scenario import (
    AddNodes,
    RemoveEdge,
    ReplaceTree,
    Scenario,
    ScenarioError,
    apply_change,
    builtin_case_study,
    case_study_app_lockdown,
    parse_scenario,
    scaled_case_study,
    serialize_scenario,
    two_node_chain,
)
from .solvers import (
    PayoffMatrix,
    Scheme,
    SolveResult,
    SolverError,
    backward_induction,
    best_response,
    nash_equilibrium,
    payoff_matrix,
    purple_teaming,
    solve_zero_sum,
)
from .trees import (
    GameTree,
    KnowledgeSet,
    PlanCapExceeded,
    Player,
    TreeError,
    ValidationReport,
    Vertex,
    check_perfect_recall,
    enumerate_pure_plans,
    validate_tree,
)

__version__ = "0.1.0"

"""Optimal online attacks and robust defenses for tabular reinforcement learning."""

from .constraints import AttackConstraints, AttackerObjective, build_constraints, identity_constraints
from .defense import (
    DefenseSolution,
    defense_backward_induction,
    enumerate_defense_oracle,
    solve_zero_sum_tbsg,
)
from .errors import *  # noqa: F401,F403
from .gridworld import (
    GridLayout,
    GridScenario,
    build_gridworld,
    build_region_constraints,
    reference_layout,
    render_trajectory,
    run_scenario,
)
from .linear import LinearComponents, MetaFeatures, build_meta_features, verify_linear_consistency
from .mdp import (
    TabularPOMDP,
    ValueTable,
    VictimPolicy,
    backward_induction,
    evaluate_policy,
    make_pomdp,
    validate_policy,
    validate_pomdp,
    value_iteration,
)
from .meta import MetaMDP, MetaState, Tag, build_meta_game, build_meta_mdp, build_meta_mdp_compact
from .planner import (
    AttackEnvironment,
    AttackSolution,
    enumerate_attack_oracle,
    learn_attack_qlearning,
    plan_attack,
)
from .policy import AttackPolicy
from .sim import Trajectory, exact_values, monte_carlo_values, run_episode

__version__ = "0.1.0"

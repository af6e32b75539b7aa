"""Constrained risk-averse planning for MDPs and POMDPs.

Expectation, CVaR and EVaR nested risk; a Lagrangian value-iteration
solver for MDPs, finite-state-controller policy iteration for POMDPs, and
a grid-world harness with Monte Carlo robustness evaluation.
"""
from .dual import Status
from .estimators import RiskAverseFSCPlanner, RiskAverseMDPPlanner
from .exceptions import *  # noqa: F401,F403
from .gridworld import GridSpec, GridWorld, build_mdp, build_pomdp, generate_layout, perturb_obstacles
from .mdp_solver import (
    MdpSolveResult,
    SolverParams,
    bellman_backup,
    brute_force_constrained_oracle,
    export_dcp,
    extract_policy,
    policy_risk_evaluation,
    risk_value_iteration,
    solve_constrained,
)
from .model import (
    Belief,
    Fsc,
    Mdp,
    Pomdp,
    ProductChain,
    belief_update,
    initial_belief,
    load_json,
    policy_action_distribution,
    product_chain,
    save_json,
    validate,
)
from .pomdp_solver import (
    FscSolveResult,
    PiParams,
    add_istates,
    evaluate_fsc,
    improve_istate,
    policy_iteration,
    select_initial_istate,
)
from .risk import InnerSolveParams, RiskKind, RiskMeasure, sigma, static_risk
from .sim import McSummary, RolloutRecord, export_heatmap, monte_carlo, rollout

__version__ = "0.1.0"

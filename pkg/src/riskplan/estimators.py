"""scikit-learn style front ends for the two planners.

``fit`` takes a model (object, dict or JSON path) instead of a sample
matrix, since planning has no training data. ``predict`` maps states (or
I-state/observation pairs) to actions. Hyperparameters live in
``__init__`` untouched, so ``get_params``/``set_params``/``clone`` work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mdp_solver import SolverParams, policy_risk_evaluation, solve_constrained
from .pomdp_solver import PiParams, policy_iteration
from .risk import InnerSolveParams
from .validation import check_mdp, check_measure, check_pomdp

__all__ = ["RiskAverseMDPPlanner", "RiskAverseFSCPlanner"]


def _solver_params(est):
    return SolverParams(
        vi_tol=est.vi_tol,
        vi_max_iters=est.vi_max_iters,
        dual_step0=est.dual_step0,
        dual_iters=est.dual_iters,
        lambda_cap=est.lambda_cap,
        inner=InnerSolveParams(zeta_max=est.zeta_max, method=est.evar_method),
    )


class RiskAverseMDPPlanner(BaseEstimator):
    """Constrained risk-averse planner for fully observed models.

    After ``fit``: ``value_``, ``policy_``, ``multipliers_``,
    ``lower_bound_``, ``constraint_values_``, ``status_`` and ``result_``.
    """

    def __init__(self, measure="cvar", epsilon=0.2, vi_tol=1e-8, vi_max_iters=100000,
                 dual_step0=1.0, dual_iters=200, lambda_cap=1e6, zeta_max=1e4,
                 evar_method="newton"):
        self.measure = measure
        self.epsilon = epsilon
        self.vi_tol = vi_tol
        self.vi_max_iters = vi_max_iters
        self.dual_step0 = dual_step0
        self.dual_iters = dual_iters
        self.lambda_cap = lambda_cap
        self.zeta_max = zeta_max
        self.evar_method = evar_method

    def fit(self, X, y=None):
        mdp = check_mdp(X)
        self.measure_ = check_measure(self.measure, self.epsilon)
        res = solve_constrained(mdp, self.measure_, _solver_params(self))
        self.model_ = mdp
        self.result_ = res
        self.value_ = res.value
        self.policy_ = res.policy
        self.multipliers_ = res.multipliers
        self.lower_bound_ = res.lower_bound
        self.constraint_values_ = res.constraint_values
        self.status_ = res.status
        self.n_states_ = mdp.num_states
        return self

    def predict(self, X):
        """Greedy action for each state index in ``X``."""
        check_is_fitted(self, "policy_")
        s = np.asarray(X, dtype=int)
        if np.any((s < 0) | (s >= self.n_states_)):
            raise IndexError(f"state indices must lie in [0, {self.n_states_})")
        return self.policy_[s]

    def score(self, X=None, y=None):
        """Negated nested risk of the fitted policy from the initial distribution.

        ``X`` defaults to the fitted model; pass another model of the same
        size to score the policy there. Higher is better, as sklearn expects.
        """
        check_is_fitted(self, "policy_")
        mdp = self.model_ if X is None else check_mdp(X)
        v = policy_risk_evaluation(mdp, self.policy_, self.measure_, "cost", _solver_params(self))
        return -float(mdp.initial_dist @ v)


class RiskAverseFSCPlanner(BaseEstimator):
    """Finite-state-controller planner for partially observed models.

    After ``fit``: ``fsc_``, ``value_`` (S, G), ``g_init_``,
    ``multipliers_``, ``lower_bound_``, ``status_`` and ``result_``.
    """

    def __init__(self, measure="cvar", epsilon=0.2, n_max=6, n_new=1, max_iterations=100,
                 improvement_tol=1e-7, vi_tol=1e-8, vi_max_iters=100000, dual_step0=1.0,
                 dual_iters=200, lambda_cap=1e6, zeta_max=1e4, evar_method="newton",
                 pg_step=0.1, pg_iters=5000):
        self.measure = measure
        self.epsilon = epsilon
        self.n_max = n_max
        self.n_new = n_new
        self.max_iterations = max_iterations
        self.improvement_tol = improvement_tol
        self.vi_tol = vi_tol
        self.vi_max_iters = vi_max_iters
        self.dual_step0 = dual_step0
        self.dual_iters = dual_iters
        self.lambda_cap = lambda_cap
        self.zeta_max = zeta_max
        self.evar_method = evar_method
        self.pg_step = pg_step
        self.pg_iters = pg_iters

    def fit(self, X, y=None):
        pomdp = check_pomdp(X)
        self.measure_ = check_measure(self.measure, self.epsilon)
        params = PiParams(
            n_max=self.n_max,
            n_new=self.n_new,
            max_iterations=self.max_iterations,
            improvement_tol=self.improvement_tol,
            solver=_solver_params(self),
            pg_step=self.pg_step,
            pg_iters=self.pg_iters,
        )
        res = policy_iteration(pomdp, self.measure_, params)
        self.model_ = pomdp
        self.result_ = res
        self.fsc_ = res.fsc
        self.value_ = res.value
        self.g_init_ = res.g_init
        self.multipliers_ = res.multipliers
        self.lower_bound_ = res.lower_bound
        self.constraint_values_ = res.constraint_values
        self.status_ = res.status
        return self

    def predict_proba(self, X):
        """Action distribution for each row ``(g, o)`` of ``X``."""
        check_is_fitted(self, "fsc_")
        go = np.atleast_2d(np.asarray(X, dtype=int))
        if go.shape[1] != 2:
            raise ValueError("X must have rows of (istate, observation)")
        w = self.fsc_.omega
        return w[go[:, 0], go[:, 1]].sum(axis=1)

    def predict(self, X):
        """Most likely action for each ``(g, o)`` row, lowest index on ties."""
        return np.argmax(self.predict_proba(X), axis=1)

"""Constrained risk-averse MDP planning.

For a fixed multiplier vector λ the Lagrangian problem is solved exactly by
risk-averse value iteration on the stage cost c + ⟨λ, d⟩. The multipliers
are then pushed up by projected subgradient ascent (:mod:`riskplan.dual`),
using nested risks of the constraint costs under the greedy policy as the
subgradient. Every evaluated ⟨κ0, V_λ⟩ − ⟨λ, β⟩ is a lower bound on the
constrained optimum; the best one is reported.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dual import DualPoint, Status, dual_ascent
from .exceptions import DimensionMismatch, IterationCap, TooLarge
from .model import ensure_valid
from .risk import DEFAULT_INNER, InnerSolveParams, RiskKind, RiskMeasure, sigma_batch

__all__ = [
    "SolverParams",
    "ViResult",
    "MdpSolveResult",
    "OracleResult",
    "lagrangian_cost",
    "q_values",
    "bellman_backup",
    "risk_value_iteration",
    "policy_risk_evaluation",
    "constraint_risks",
    "extract_policy",
    "solve_constrained",
    "export_dcp",
    "brute_force_constrained_oracle",
]


@dataclass(frozen=True)
class SolverParams:
    vi_tol: float = 1e-8
    vi_max_iters: int = 100_000
    dual_step0: float = 1.0
    dual_iters: int = 200
    lambda_cap: float = 1e6
    inner: InnerSolveParams = field(default_factory=lambda: DEFAULT_INNER)

    def __post_init__(self):
        for name in ("vi_tol", "vi_max_iters", "dual_step0", "dual_iters", "lambda_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return {
            "vi_tol": self.vi_tol,
            "vi_max_iters": self.vi_max_iters,
            "dual_step0": self.dual_step0,
            "dual_iters": self.dual_iters,
            "lambda_cap": self.lambda_cap,
            "inner": {
                "zeta_max": self.inner.zeta_max,
                "tol": self.inner.tol,
                "max_iters": self.inner.max_iters,
                "method": self.inner.method,
            },
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        inner = d.pop("inner", None)
        if inner is not None:
            d["inner"] = InnerSolveParams(**inner)
        return cls(**d)


DEFAULT_PARAMS = SolverParams()


def _lam(mdp, lam):
    lam = np.zeros(mdp.num_constraints) if lam is None else np.asarray(lam, dtype=float).ravel()
    if lam.shape != (mdp.num_constraints,):
        raise DimensionMismatch(f"need {mdp.num_constraints} multipliers, got {lam.size}")
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    return lam


def lagrangian_cost(mdp, lam):
    """c(s, a) + ⟨λ, d(s, a)⟩."""
    lam = _lam(mdp, lam)
    return mdp.stage_cost + np.tensordot(lam, mdp.constraint_costs, axes=1)


def _sigma_sa(mdp, measure, v, params, rows=None, warm=None):
    """σ(v, T[s, a]) for every (s, a), or for the ``rows`` selection.

    ``warm`` is a dict carrying the EVaR ζ of the previous call between sweeps.
    """
    idx, prob = mdp.successors
    if rows is not None:
        idx, prob = idx[rows], prob[rows]
    shape = idx.shape[:-1]
    K = idx.shape[-1]
    zeta0 = None if warm is None else warm.get("zeta")
    out = sigma_batch(measure, v[idx].reshape(-1, K), prob.reshape(-1, K), params.inner, zeta0)
    if warm is not None:
        warm["zeta"] = out.zeta
    return out.value.reshape(shape)


def q_values(mdp, measure, lam, v, params=DEFAULT_PARAMS, cost=None, warm=None):
    """Q[s, a] = cost(s, a) + γ σ(v, T[s, a])."""
    cost = lagrangian_cost(mdp, lam) if cost is None else cost
    return cost + mdp.discount * _sigma_sa(mdp, measure, np.asarray(v, dtype=float), params,
                                           warm=warm)


class Backup(NamedTuple):
    value: np.ndarray
    policy: np.ndarray


def bellman_backup(mdp, measure, lam, v, params=DEFAULT_PARAMS):
    """One Jacobi sweep of the risk-averse Bellman operator.

    Ties are broken towards the lowest action index.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.num_states,):
        raise DimensionMismatch(f"value must have length {mdp.num_states}")
    q = q_values(mdp, measure, lam, v, params)
    pol = np.argmin(q, axis=1)
    return Backup(q[np.arange(mdp.num_states), pol], pol)


class ViResult(NamedTuple):
    value: np.ndarray
    policy: np.ndarray
    iterations: int
    residuals: np.ndarray


def _iterate(step, v, tol, max_iters, what):
    """Run ``v <- step(v)`` until the sup-norm change is at most ``tol``.

    ``step`` returns (new value, aux). Returns the last *input* v, whose
    aux is consistent with it, so v and aux describe the same point.
    """
    residuals = []
    for it in range(1, max_iters + 1):
        nv, aux = step(v)
        r = float(np.max(np.abs(nv - v))) if v.size else 0.0
        residuals.append(r)
        # an absolute tolerance below the rounding noise of large values is unattainable
        floor = 4.0 * np.finfo(float).eps * float(np.max(np.abs(nv))) if v.size else 0.0
        if r <= max(tol, floor):
            return v, aux, it, np.array(residuals)
        v = nv
    raise IterationCap(f"{what} did not reach tolerance {tol} in {max_iters} sweeps "
                       f"(last residual {residuals[-1]:.3g})", partial=v)


def risk_value_iteration(mdp, measure, lam=None, params=DEFAULT_PARAMS, v0=None):
    """Fixed point of the Lagrangian risk Bellman operator.

    The returned value satisfies ‖backup(V) − V‖∞ ≤ ``params.vi_tol`` and the
    returned policy is the greedy (lowest-index) policy at that V.
    """
    lam = _lam(mdp, lam)
    cost = lagrangian_cost(mdp, lam)
    states = np.arange(mdp.num_states)
    warm = {}

    def step(v):
        q = q_values(mdp, measure, lam, v, params, cost=cost, warm=warm)
        pol = np.argmin(q, axis=1)
        return q[states, pol], pol

    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    v, pol, it, res = _iterate(step, v, params.vi_tol, params.vi_max_iters, "value iteration")
    return ViResult(v, pol, it, res)


def _selected_cost(mdp, cost_selector):
    if cost_selector is None or cost_selector == "cost":
        return mdp.stage_cost
    if isinstance(cost_selector, (int, np.integer)):
        if not 0 <= cost_selector < mdp.num_constraints:
            raise DimensionMismatch(f"constraint index {cost_selector} out of range")
        return mdp.constraint_costs[cost_selector]
    arr = np.asarray(cost_selector, dtype=float)
    if arr.shape != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatch("explicit cost must have shape (S, A)")
    return arr


def policy_risk_evaluation(mdp, policy, measure, cost_selector="cost", params=DEFAULT_PARAMS,
                           v0=None):
    """Nested discounted risk of one cost stream under a deterministic policy.

    ``cost_selector`` is ``"cost"`` for the objective, an integer ``i`` for
    constraint cost d^i, or an explicit (S, A) cost array. Returns V with
    V(s) = cost(s, π(s)) + γ σ(V, T[s, π(s)]).
    """
    pol = np.asarray(policy, dtype=int)
    S = mdp.num_states
    if pol.shape != (S,) or np.any((pol < 0) | (pol >= mdp.num_actions)):
        raise DimensionMismatch("policy must map every state to a valid action")
    cost = _selected_cost(mdp, cost_selector)[np.arange(S), pol]
    rows = (np.arange(S), pol)

    warm = {}

    def step(v):
        return cost + mdp.discount * _sigma_sa(mdp, measure, v, params, rows=rows, warm=warm), None

    v = np.zeros(S) if v0 is None else np.array(v0, dtype=float)
    v, _, _, _ = _iterate(step, v, params.vi_tol, params.vi_max_iters, "policy evaluation")
    return v


def constraint_risks(mdp, policy, measure, params=DEFAULT_PARAMS, warm=None):
    """D^i = ⟨κ0, V_{d^i}⟩ for each constraint, plus the value functions."""
    vals = []
    for i in range(mdp.num_constraints):
        v0 = None if warm is None else warm[i]
        vals.append(policy_risk_evaluation(mdp, policy, measure, i, params, v0=v0))
    D = np.array([mdp.initial_dist @ v for v in vals])
    return D, vals


def extract_policy(mdp, measure, v, lam=None, params=DEFAULT_PARAMS):
    """Greedy policy at v with lowest-index tie-breaking."""
    return np.argmin(q_values(mdp, measure, lam, v, params), axis=1)


@dataclass
class MdpSolveResult:
    value: np.ndarray
    multipliers: np.ndarray
    policy: np.ndarray
    lower_bound: float
    constraint_values: np.ndarray
    trace: list
    status: Status
    measure: RiskMeasure = None
    vi_iterations: int = 0

    def to_dict(self):
        return {
            "measure": None if self.measure is None else self.measure.to_dict(),
            "value": self.value.tolist(),
            "multipliers": self.multipliers.tolist(),
            "policy": self.policy.tolist(),
            "lower_bound": self.lower_bound,
            "constraint_values": self.constraint_values.tolist(),
            "status": self.status.value,
            "trace": [t.to_dict() for t in self.trace],
        }


def solve_constrained(mdp, measure, params=DEFAULT_PARAMS):
    """Lagrangian lower bound and greedy policy for the constrained problem.

    Runs risk value iteration at each multiplier iterate (warm-started from
    the previous value) inside projected subgradient ascent on λ, and
    returns the iterate with the largest bound ⟨κ0, V⟩ − ⟨λ, β⟩.
    """
    ensure_valid(mdp)
    beta = mdp.budgets
    state = {"v": None, "dv": None, "sweeps": 0}

    def evaluate(lam):
        vi = risk_value_iteration(mdp, measure, lam, params, v0=state["v"])
        state["v"] = vi.value
        state["sweeps"] += vi.iterations
        D, dvals = constraint_risks(mdp, vi.policy, measure, params, warm=state["dv"])
        state["dv"] = dvals
        bound = float(mdp.initial_dist @ vi.value - lam @ beta)
        return DualPoint(bound, D, vi)

    out = dual_ascent(evaluate, beta, step0=params.dual_step0, iters=params.dual_iters,
                      lambda_cap=params.lambda_cap)
    vi = out.point.payload
    lam = out.multipliers
    return MdpSolveResult(
        value=vi.value,
        multipliers=lam,
        policy=vi.policy,
        lower_bound=float(mdp.initial_dist @ vi.value - lam @ beta),
        constraint_values=np.asarray(out.point.constraint_values, dtype=float),
        trace=out.trace,
        status=out.status,
        measure=measure,
        vi_iterations=state["sweeps"],
    )


# --- DCP export ----------------------------------------------------------------


def export_dcp(mdp, measure, beta=None):
    """Describe the joint (V, λ) program as a difference-of-convex problem.

    Layout: maximise ⟨κ0, V⟩ − ⟨λ, β⟩, i.e. minimise f0(λ) − g0(V) with
    f0 = ⟨λ, β⟩ and g0 = ⟨κ0, V⟩, subject to, for every (s, a),
    f1(V) − g1(λ) − g2(V) ≤ 0 with f1 = V(s), g1 = c(s,a) + ⟨λ, d(s,a)⟩ and
    g2 = γ σ(V, T[s, a]). The σ block spells out the auxiliary variable and
    the term structure for each measure.
    """
    beta = mdp.budgets if beta is None else np.asarray(beta, dtype=float)
    S, A, nc = mdp.num_states, mdp.num_actions, mdp.num_constraints
    kind = measure.kind
    variables = [
        {"name": "V", "shape": [S], "domain": "real"},
        {"name": "lambda", "shape": [nc], "domain": "nonnegative"},
    ]
    if kind is RiskKind.CVAR:
        variables.append({"name": "zeta", "shape": [S, A], "domain": "real"})
    elif kind is RiskKind.EVAR:
        variables.append({"name": "zeta", "shape": [S, A], "domain": "positive"})

    idx, prob = mdp.successors
    constraints = []
    for s in range(S):
        for a in range(A):
            keep = prob[s, a] > 0
            succ = idx[s, a][keep].tolist()
            p = prob[s, a][keep].tolist()
            if kind is RiskKind.EXPECTATION:
                g2 = {"curvature": "affine", "form": "linear", "gamma": mdp.discount,
                      "successors": succ, "probs": p}
            elif kind is RiskKind.CVAR:
                g2 = {"curvature": "convex", "form": "cvar", "gamma": mdp.discount,
                      "zeta": [s, a], "successors": succ, "probs": p,
                      "positive_part_coefficient": 1.0 / measure.epsilon}
            else:
                g2 = {"curvature": "convex", "form": "log_sum_exp", "gamma": mdp.discount,
                      "zeta": [s, a], "successors": succ, "probs": p,
                      "log_epsilon": math.log(measure.epsilon)}
            constraints.append({
                "state": s,
                "action": a,
                "f1": {"curvature": "affine", "V": s},
                "g1": {"curvature": "affine", "constant": float(mdp.stage_cost[s, a]),
                       "lambda": mdp.constraint_costs[:, s, a].tolist()},
                "g2": g2,
            })
    return {
        "format": "dc-program/1",
        "measure": measure.to_dict(),
        "sense": "minimize f0 - g0",
        "variables": variables,
        "f0": {"curvature": "affine", "lambda": beta.tolist()},
        "g0": {"curvature": "affine", "V": mdp.initial_dist.tolist()},
        "constraints": constraints,
        "constraint_form": "f1 - g1 - g2 <= 0",
    }


# --- brute-force oracle ----------------------------------------------------------


@dataclass
class OracleResult:
    """Exhaustive evaluation of every deterministic stationary policy."""

    policies: np.ndarray          # (P, S)
    objective: np.ndarray         # (P,) ⟨κ0, nested risk of c⟩
    constraints: np.ndarray       # (P, n_c)
    feasible: bool
    feasible_optimum: float       # best deterministic feasible objective (inf if none)
    best_policy: np.ndarray       # argmin of the above (None if infeasible)
    mixed_optimum: float          # lower convex hull at D = β (one constraint), else = feasible_optimum
    lagrangian_bound: float       # max over the λ grid of min_π J + ⟨λ, D − β⟩


def _nested_risk_all(mdp, measure, policies, costs, horizon, params):
    """V_H for every (policy, cost stream) by H backward recursion steps."""
    idx, prob = mdp.successors
    P, S = policies.shape
    K = idx.shape[-1]
    sidx = idx[np.arange(S)[None, :], policies]          # (P, S, K)
    sprob = prob[np.arange(S)[None, :], policies].reshape(-1, K)
    rows = np.arange(P)[:, None, None] * S + sidx        # into flattened (P*S)
    out = []
    for cost in costs:
        c = cost[np.arange(S)[None, :], policies].ravel()
        v = np.zeros(P * S)
        for _ in range(horizon):
            v = c + mdp.discount * sigma_batch(measure, v[rows].reshape(-1, K), sprob,
                                               params.inner).value
        out.append(v.reshape(P, S) @ mdp.initial_dist)
    return out


def brute_force_constrained_oracle(mdp, measure, beta=None, horizon_truncation=None,
                                   params=DEFAULT_PARAMS, lambda_grid=None):
    """Exhaustive search over deterministic stationary policies.

    Nested risks are evaluated by a truncated backward recursion that shares
    nothing with value iteration. The default horizon makes the tail term
    c_max γ^H / (1 − γ) smaller than 1e-11.
    """
    S, A = mdp.num_states, mdp.num_actions
    if S > 6 or A > 3:
        raise TooLarge(f"oracle limited to |S| <= 6 and |A| <= 3, got {S} and {A}")
    beta = mdp.budgets if beta is None else np.asarray(beta, dtype=float).ravel()
    nc = mdp.num_constraints
    if horizon_truncation is None:
        cmax = max(float(mdp.stage_cost.max(initial=0.0)),
                   float(mdp.constraint_costs.max(initial=0.0)), 1.0)
        g = mdp.discount
        horizon_truncation = int(math.ceil(math.log(1e-11 * (1 - g) / cmax) / math.log(g)))
    policies = np.array(list(itertools.product(range(A), repeat=S)), dtype=int)
    costs = [mdp.stage_cost] + [mdp.constraint_costs[i] for i in range(nc)]
    vals = _nested_risk_all(mdp, measure, policies, costs, horizon_truncation, params)
    J = vals[0]
    D = np.stack(vals[1:], axis=1) if nc else np.zeros((len(J), 0))
    ok = np.all(D <= beta + 1e-9, axis=1)
    if ok.any():
        i = int(np.flatnonzero(ok)[np.argmin(J[ok])])
        feas_opt, best = float(J[i]), policies[i]
    else:
        feas_opt, best = math.inf, None

    mixed = feas_opt
    if nc == 1:
        d = D[:, 0]
        lo, hi = d <= beta[0], d > beta[0]
        for i in np.flatnonzero(lo):
            dj, jj = d[hi], J[hi]
            if dj.size:
                w = (beta[0] - d[i]) / (dj - d[i])
                mixed = min(mixed, float(np.min(J[i] + w * (jj - J[i]))))

    if lambda_grid is None:
        lambda_grid = np.round(np.arange(0.0, 50.0 + 1e-9, 0.1), 10)
    grid = np.asarray(lambda_grid, dtype=float)
    if nc == 0:
        lag = float(J.min())
    else:
        lag = -math.inf
        for lam in itertools.product(grid, repeat=nc):
            lam = np.asarray(lam)
            lag = max(lag, float(np.min(J + (D - beta) @ lam)))
    return OracleResult(policies, J, D, bool(ok.any()), feas_opt, best, mixed, lag)

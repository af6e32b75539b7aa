"""Risk-averse finite-state-controller synthesis by policy iteration.

The controller is evaluated on the product chain over [s, g]; each I-state
is then improved by re-optimising its ω rows against the current value with
the auxiliary ζ of every product state held fixed. Holding ζ fixed turns
the risk term into its inner objective, which upper-bounds σ, so any
decrease it certifies is a genuine decrease of the evaluated cost.

Costs are minimised throughout. An accepted improvement therefore lowers
V pointwise at fixed λ, and with it ⟨ι_init, V⟩ − ⟨λ, β⟩.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dual import DualPoint, Status, dual_ascent
from .exceptions import DimensionMismatch
from .mdp_solver import DEFAULT_PARAMS, SolverParams, _iterate, _lam, lagrangian_cost
from .model import (
    Fsc,
    check_compatible,
    ensure_valid,
    observation_weighted_omega,
    product_successors,
    uniform_fsc,
)
from .optim import linprog_simplex, project_simplex_blocks
from .risk import RiskKind, RiskMeasure, sigma_batch

__all__ = [
    "PiParams",
    "FscEvaluation",
    "Improvement",
    "PiTraceEntry",
    "FscSolveResult",
    "evaluate_fsc",
    "select_initial_istate",
    "improve_istate",
    "add_istates",
    "fsc_constraint_risks",
    "policy_iteration",
]


@dataclass(frozen=True)
class PiParams:
    n_max: int = 6
    n_new: int = 1
    max_iterations: int = 100
    improvement_tol: float = 1e-7
    solver: SolverParams = field(default_factory=lambda: DEFAULT_PARAMS)
    pg_step: float = 0.1
    pg_iters: int = 5000

    def __post_init__(self):
        if not 1 <= self.n_new <= self.n_max:
            raise ValueError("need 1 <= n_new <= n_max")
        if self.max_iterations < 1 or self.improvement_tol <= 0:
            raise ValueError("max_iterations and improvement_tol must be positive")
        if self.pg_step <= 0 or self.pg_iters < 0:
            raise ValueError("pg_step must be positive and pg_iters nonnegative")

    def to_dict(self):
        return {
            "n_max": self.n_max,
            "n_new": self.n_new,
            "max_iterations": self.max_iterations,
            "improvement_tol": self.improvement_tol,
            "solver": self.solver.to_dict(),
            "pg_step": self.pg_step,
            "pg_iters": self.pg_iters,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "solver" in d:
            d["solver"] = SolverParams.from_dict(d["solver"])
        return cls(**d)


DEFAULT_PI = PiParams()


class FscEvaluation(NamedTuple):
    value: np.ndarray  # (S, G)
    iterations: int


class _Closed(NamedTuple):
    """Closed-loop quantities shared by evaluation and improvement."""

    idx: np.ndarray    # (S, K) union successor lists
    prob: np.ndarray   # (S, G, K, G) product transition rows
    pa: np.ndarray     # (S, G, A) action marginals


def _closed_loop(pomdp, fsc):
    W = observation_weighted_omega(pomdp, fsc)
    idx, prob = product_successors(pomdp, fsc, W)
    return _Closed(idx, prob, W.sum(axis=2))


def _row_sigma(measure, V, cl, params, zeta0=None):
    S, G, K, _ = cl.prob.shape
    vals = np.broadcast_to(V[cl.idx][:, None, :, :], (S, G, K, G)).reshape(S * G, K * G)
    return sigma_batch(measure, vals, cl.prob.reshape(S * G, K * G), params.inner, zeta0)


def evaluate_fsc(pomdp, fsc, measure, lam=None, params=DEFAULT_PARAMS, v0=None, cost=None):
    """Risk value of the controller on every product state [s, g].

    Fixed point of V[s, g] = Σ_a p(a | s, g) c̃(s, a) + γ σ(V, T^M(·|[s, g]))
    with c̃ = c + ⟨λ, d⟩, or the explicit (S, A) ``cost`` if given.
    """
    check_compatible(pomdp, fsc)
    m = pomdp.mdp
    c = lagrangian_cost(m, lam) if cost is None else np.asarray(cost, dtype=float)
    cl = _closed_loop(pomdp, fsc)
    S, G = m.num_states, fsc.num_istates
    stage = np.einsum("sga,sa->sg", cl.pa, c)
    warm = {}

    def step(v):
        out = _row_sigma(measure, v.reshape(S, G), cl, params, warm.get("zeta"))
        warm["zeta"] = out.zeta
        return (stage + m.discount * out.value.reshape(S, G)).ravel(), None

    v = np.zeros(S * G) if v0 is None else np.array(v0, dtype=float).reshape(S * G)
    v, _, it, _ = _iterate(step, v, params.vi_tol, params.vi_max_iters, "controller evaluation")
    return FscEvaluation(v.reshape(S, G), it)


def select_initial_istate(value, initial_dist):
    """I-state with the smallest expected value under the initial state law."""
    V = np.asarray(value, dtype=float)
    return int(np.argmin(np.asarray(initial_dist, dtype=float) @ V))


def fsc_constraint_risks(pomdp, fsc, measure, params=DEFAULT_PARAMS, warm=None):
    """D^i = ⟨ι_init, V_{d^i}⟩ on the product chain, plus the value functions."""
    m = pomdp.mdp
    iota = np.outer(m.initial_dist, fsc.kappa)
    vals, D = [], []
    for i in range(m.num_constraints):
        v0 = None if warm is None or warm[i].shape != iota.shape else warm[i]
        ev = evaluate_fsc(pomdp, fsc, measure, None, params, v0=v0, cost=m.constraint_costs[i])
        vals.append(ev.value)
        D.append(float(np.sum(iota * ev.value)))
    return np.array(D), vals


# --- I-state improvement -------------------------------------------------------


class Improvement(NamedTuple):
    rows: np.ndarray  # new omega[g] block (O, G, A), or None
    epsilon: float


_EXP_CUT = 40.0
_GROW_TOL = 1e-9


def _frozen_zeta(measure, vals, probs, params):
    """Inner-optimal ζ for each row of the current controller.

    EVaR rows whose infimum is only reached as ζ → ∞ (the worst outcome
    already carries mass ≥ ε) get a huge finite ζ, which reproduces the
    support maximum to within round-off.
    """
    out = sigma_batch(measure, vals, probs, params.inner)
    zeta = np.array(out.zeta, dtype=float)
    if measure.kind is RiskKind.EVAR:
        huge = 1e12 / (np.abs(vals).max(axis=1) + 1.0)
        zeta = np.where(np.isfinite(zeta) & (zeta > 0), zeta, huge)
    return zeta


def _linear_pieces(pomdp, fsc, g, V, lam, measure, params, cl):
    """Per-state right-hand sides as functions of the rows ω[g, obs].

    With x = ω[g, obs].ravel() for the observations ``obs`` that can occur:

    * expectation / CVaR: RHS_s(x) = coef[s] @ x + const[s], exactly;
    * EVaR: RHS_s(x) = coef[s] @ x + const[s] + w_s log(mgf[s] @ x), with
      ``curv = (mgf, w)``.

    ``allowed`` flags the columns that may carry mass. EVaR excludes
    choices that would reach outcomes far above the current worst one at
    some state, where the frozen-ζ bound is uninformative.
    """
    m = pomdp.mdp
    S, A = m.num_states, m.num_actions
    G = fsc.num_istates
    O = pomdp.observation
    obs = np.flatnonzero((O > 0).any(axis=0))
    c = lagrangian_cost(m, lam)
    idx = cl.idx
    K = idx.shape[1]
    Tk = np.take_along_axis(m.transition, np.broadcast_to(idx[:, None, :], (S, A, K)), axis=2)
    Vs = V[idx]  # (S, K, G)
    Os = O[:, obs]  # (S, R)
    gamma = m.discount
    curv = None
    allowed = np.ones(obs.size * G * A, dtype=bool)
    kind = measure.kind
    if kind is RiskKind.EVAR and measure.epsilon == 1.0:
        kind = RiskKind.EXPECTATION

    if kind is RiskKind.EXPECTATION:
        q = c[:, None, :] + gamma * np.einsum("sak,skh->sha", Tk, Vs)
        const = np.zeros(S)
    else:
        vals = Vs.reshape(S, K * G)
        p0 = cl.prob[:, g].reshape(S, K * G)
        zeta = _frozen_zeta(measure, vals, p0, params)
        if kind is RiskKind.CVAR:
            excess = np.maximum(Vs - zeta[:, None, None], 0.0)
            q = c[:, None, :] + gamma / measure.epsilon * np.einsum("sak,skh->sha", Tk, excess)
            const = gamma * zeta
        else:
            top = np.where(p0 > 0, vals, -np.inf).max(axis=1)
            expo = zeta[:, None, None] * (Vs - top[:, None, None])
            reach = np.einsum("sak,skh->sha", Tk, (expo > _EXP_CUT).astype(float)) > 0
            bad = np.einsum("so,sha->oha", Os, reach.astype(float)) > 0
            allowed = ~bad.ravel()
            mg = np.einsum("sak,skh->sha", Tk, np.exp(np.minimum(expo, _EXP_CUT)))
            q = np.broadcast_to(c[:, None, :], (S, G, A))
            const = gamma * top - gamma * math.log(measure.epsilon) / zeta
            mgf = (Os[:, :, None, None] * mg[:, None, :, :]).reshape(S, -1)
            curv = (mgf, gamma / zeta)
    coef = (Os[:, :, None, None] * q[:, None, :, :]).reshape(S, -1)
    return coef, const, obs, curv, allowed


def _rhs(x, coef, const, curv):
    out = coef @ x + const
    if curv is not None:
        mgf, w = curv
        out = out + w * np.log(np.maximum(mgf @ x, 1e-300))
    return out


def _max_min_lp(A, b, E):
    """max ε s.t. A x + ε ≤ b, E x = 1, x ≥ 0 (ε free)."""
    S, n = A.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((S, 1))])
    A_eq = np.hstack([E, np.zeros((E.shape[0], 1))])
    free = np.zeros(n + 1, dtype=bool)
    free[-1] = True
    res = linprog_simplex(c, A_ub, b, A_eq, np.ones(E.shape[0]), free=free)
    if res.status != "optimal":
        return None, -math.inf
    return res.x[:n], float(res.x[-1])


def _sum_lp(A, b, E):
    """max Σ e_s s.t. A x + e ≤ b, e ≥ 0, E x = 1, x ≥ 0."""
    S, n = A.shape
    c = np.concatenate([np.zeros(n), -np.ones(S)])
    A_ub = np.hstack([A, np.eye(S)])
    A_eq = np.hstack([E, np.zeros((E.shape[0], S))])
    res = linprog_simplex(c, A_ub, b, A_eq, np.ones(E.shape[0]))
    if res.status != "optimal":
        return None, 0.0
    return res.x[:n], float(np.max(res.x[n:], initial=0.0))


def _solve_restricted(solve, A, b, block, allowed):
    """Run an LP over the allowed columns only; disallowed entries stay 0."""
    n = A.shape[1]
    E = np.kron(np.eye(n // block), np.ones((1, block)))[:, allowed]
    x, eps = solve(A[:, allowed], b, E)
    if x is None:
        return None, eps
    full = np.zeros(n)
    full[allowed] = x
    return full, eps


def _clean_rows(x, block):
    x = np.maximum(x.reshape(-1, block), 0.0)
    return (x / x.sum(axis=1, keepdims=True)).ravel()


def _projected_gradient(x0, target, coef, const, curv, block, allowed, step, iters):
    """Ascent on min_s (target_s − RHS_s(x)) over the product of simplices.

    Each step moves along the normalised gradient of the tightest state's
    margin with a fixed step length and projects back; the best iterate
    is returned with its margin.
    """
    mgf, w = curv
    x = x0.copy()
    best_x, best = x0, float(np.min(target - _rhs(x0, coef, const, curv)))
    for _ in range(iters):
        margin = target - _rhs(x, coef, const, curv)
        s = int(np.argmin(margin))
        grad = -(coef[s] + w[s] * mgf[s] / max(mgf[s] @ x, 1e-300))
        grad[~allowed] = 0.0
        norm = np.linalg.norm(grad)
        if norm == 0.0:
            break
        # disallowed entries are sent far below the simplex and project to 0
        x = project_simplex_blocks(np.where(allowed, x + step * grad / norm, -1e18), block)
        val = float(np.min(target - _rhs(x, coef, const, curv)))
        if val > best:
            best_x, best = x, val
    return best_x, best


def _block_descent(pomdp, fsc, g, V, lam, measure, params, tol):
    """Exact coordinate descent over observation blocks of ω[g].

    Visits observations in index order. For each, every deterministic
    choice (g', a) is scored with the exact risk of the resulting product
    rows at the states that can emit that observation; the choice with
    the largest total decrease is kept if no such state gets worse.
    Returns (rows, largest per-state decrease) or (None, 0).
    """
    m = pomdp.mdp
    S, A = m.num_states, m.num_actions
    G = fsc.num_istates
    O = pomdp.observation
    c = lagrangian_cost(m, lam)
    idx, _ = m.successors
    uidx = _closed_loop(pomdp, fsc).idx
    K = uidx.shape[1]
    Tk = np.take_along_axis(m.transition, np.broadcast_to(uidx[:, None, :], (S, A, K)), axis=2)
    Vs = V[uidx].reshape(S, K * G)
    rows = np.array(fsc.omega[g])  # (O, G, A)

    # per-state product rows and stage cost under the current block choices
    prob = np.einsum("so,oha,sak->skh", O, rows, Tk)          # (S, K, G)
    cost = np.einsum("so,oha,sa->s", O, rows, c)
    cur = cost + m.discount * sigma_batch(measure, Vs, prob.reshape(S, -1), params.inner).value
    start = cur.copy()
    changed = False
    eye = np.eye(G)
    for o in range(O.shape[1]):
        aff = np.flatnonzero(O[:, o] > 0)
        if aff.size == 0:
            continue
        w = O[aff, o]
        old = np.einsum("ha,sak->skh", rows[o], Tk[aff])           # (n, K, G)
        base = prob[aff] - w[:, None, None] * old
        # option (h, a): all of block o on next I-state h and action a
        opt = np.einsum("sak,hj->shakj", Tk[aff], eye)             # (n, G, A, K, G)
        cand = base[:, None, None] + w[:, None, None, None, None] * opt
        ccost = cost[aff, None, None] + w[:, None, None] * (
            c[aff][:, None, :] - np.einsum("ha,sa->s", rows[o], c[aff])[:, None, None])
        ccost = np.broadcast_to(ccost, (aff.size, G, A))
        n = aff.size
        sig = sigma_batch(measure, np.repeat(Vs[aff], G * A, axis=0),
                          cand.reshape(n * G * A, K * G), params.inner).value
        val = ccost + m.discount * sig.reshape(n, G, A)            # (n, G, A)
        dec = cur[aff, None, None] - val
        ok = np.all(dec >= 0.0, axis=0) & np.any(dec > tol, axis=0)
        if not ok.any():
            continue
        total = np.where(ok, dec.sum(axis=0), -np.inf)
        j = int(np.argmax(total))
        h, a = divmod(j, A)
        rows[o] = 0.0
        rows[o, h, a] = 1.0
        prob[aff] = cand[:, h, a]
        cost[aff] = ccost[:, h, a]
        cur[aff] = val[:, h, a]
        changed = True
    if not changed:
        return None, 0.0
    return rows, float(np.max(start - cur))


def improve_istate(pomdp, fsc, g, value, lam, measure, params=DEFAULT_PI):
    """Re-optimise the ω rows of I-state ``g`` against ``value``.

    First maximises the uniform margin ε in RHS_s(ω) + ε ≤ V[s, g] over all
    states s. If that margin is not positive (typically because some state
    is already greedy-optimal), maximises the total margin with every
    per-state margin kept nonnegative, and reports the largest one.
    Expectation and CVaR give linear programs. For EVaR the uniform-margin
    step runs projected gradient on the exact concave right-hand side; the
    fallback linearises the log term at the current rows, which
    over-estimates it, so the LP's certificate stays valid.

    Returns ``Improvement(rows, epsilon)`` with ``rows=None`` unless
    ``epsilon > params.improvement_tol``.
    """
    check_compatible(pomdp, fsc)
    V = np.asarray(value, dtype=float)
    G = fsc.num_istates
    if V.shape != (pomdp.num_states, G):
        raise DimensionMismatch(f"value must have shape ({pomdp.num_states}, {G})")
    lam = _lam(pomdp.mdp, lam)
    cl = _closed_loop(pomdp, fsc)
    coef, const, obs, curv, allowed = _linear_pieces(pomdp, fsc, g, V, lam, measure,
                                                     params.solver, cl)
    block = G * pomdp.num_actions
    x0 = fsc.omega[g, obs].ravel()
    target = V[:, g]
    R = obs.size
    tol = params.improvement_tol

    def pack(x):
        rows = np.array(fsc.omega[g])
        rows[obs] = _clean_rows(x, block).reshape(R, G, pomdp.num_actions)
        return rows

    if curv is None:
        for solve in (_max_min_lp, _sum_lp):
            x, eps = _solve_restricted(solve, coef, target - const, block, allowed)
            if x is not None and eps > tol:
                return Improvement(pack(x), eps)
        return Improvement(*_block_descent(pomdp, fsc, g, V, lam, measure, params.solver, tol))

    if params.pg_iters:
        x, eps = _projected_gradient(x0, target, coef, const, curv, block, allowed,
                                     params.pg_step, params.pg_iters)
        if eps > tol:
            return Improvement(pack(x), eps)
    # tangent of the concave log term at the current rows: an upper bound
    mgf, w = curv
    y0 = np.maximum(mgf @ x0, 1e-300)
    lin = coef + (w / y0)[:, None] * mgf
    lconst = const + w * (np.log(y0) - 1.0)
    for solve in (_max_min_lp, _sum_lp):
        x, eps = _solve_restricted(solve, lin, target - lconst, block, allowed)
        if x is None or not eps > tol:
            continue
        margin = target - _rhs(_clean_rows(x, block), coef, const, curv)
        eps = float(margin.min() if solve is _max_min_lp else margin.max())
        if eps > tol and margin.min() >= -1e-12:
            return Improvement(pack(x), eps)
    return Improvement(*_block_descent(pomdp, fsc, g, V, lam, measure, params.solver, tol))


# --- I-state growth -------------------------------------------------------------


def _deterministic_q(pomdp, V, lam, measure, params):
    """Q[s, g', a]: cost of taking a at s and moving to I-state g' for sure."""
    m = pomdp.mdp
    S, A = m.num_states, m.num_actions
    G = V.shape[1]
    idx, prob = m.successors
    K = idx.shape[-1]
    vals = V[idx]  # (S, A, K, G)
    vals = np.moveaxis(vals, 3, 1).reshape(-1, K)  # (S*G*A, K)
    probs = np.broadcast_to(prob[:, None], (S, G, A, K)).reshape(-1, K)
    sig = sigma_batch(measure, vals, probs, params.inner).value.reshape(S, G, A)
    return lagrangian_cost(m, lam)[:, None, :] + m.discount * sig


def add_istates(fsc, pomdp, value, lam, measure, n_new, params=DEFAULT_PARAMS):
    """Append up to ``n_new`` I-states built from a one-step greedy backup.

    For each observation o the candidate scores every deterministic choice
    (g', a) by Σ_s O(o|s) Q[s, g', a]; candidate j takes the j-th best choice
    for every o. Candidates duplicating an existing I-state are dropped.
    Returns (grown controller, number added).
    """
    check_compatible(pomdp, fsc)
    if n_new <= 0:
        return fsc, 0
    V = np.asarray(value, dtype=float)
    G, O, _, A = fsc.omega.shape
    Q = _deterministic_q(pomdp, V, lam, measure, params)            # (S, G, A)
    score = np.einsum("so,sga->oga", pomdp.observation, Q).reshape(O, G * A)
    order = np.argsort(score, axis=1, kind="stable")

    existing = [fsc.omega[g].reshape(O, G * A) for g in range(G)]
    best = V.min(axis=1)
    Qf = Q.reshape(Q.shape[0], G * A)
    new_rows = []
    for j in range(min(n_new, G * A)):
        cand = np.zeros((O, G * A))
        cand[np.arange(O), order[:, j]] = 1.0
        if any(np.max(np.abs(cand - e)) <= 1e-9 for e in existing + new_rows):
            continue
        backup = np.einsum("so,so->s", pomdp.observation, Qf[:, order[:, j]])
        if not np.any(backup < best - _GROW_TOL):
            continue
        new_rows.append(cand)
    if not new_rows:
        return fsc, 0
    k = len(new_rows)
    G2 = G + k
    w = np.zeros((G2, O, G2, A))
    w[:G, :, :G, :] = fsc.omega
    for j, rows in enumerate(new_rows):
        w[G + j, :, :G, :] = rows.reshape(O, G, A)
    kappa = np.concatenate([fsc.kappa, np.zeros(k)])
    return Fsc(w, kappa), k


# --- policy iteration -------------------------------------------------------------


@dataclass(frozen=True)
class PiTraceEntry:
    iteration: int
    num_istates: int
    lower_bound: float
    improved: bool
    grown: int
    multipliers: tuple

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "num_istates": self.num_istates,
            "lower_bound": self.lower_bound,
            "improved": self.improved,
            "grown": self.grown,
            "multipliers": list(self.multipliers),
        }


@dataclass
class FscSolveResult:
    fsc: Fsc
    value: np.ndarray
    multipliers: np.ndarray
    g_init: int
    lower_bound: float
    constraint_values: np.ndarray
    trace: list
    dual_trace: list
    status: Status
    measure: RiskMeasure = None

    def to_dict(self):
        from .model import to_dict
        return {
            "measure": None if self.measure is None else self.measure.to_dict(),
            "fsc": to_dict(self.fsc),
            "value": self.value.tolist(),
            "multipliers": self.multipliers.tolist(),
            "g_init": self.g_init,
            "lower_bound": self.lower_bound,
            "constraint_values": self.constraint_values.tolist(),
            "status": self.status.value,
            "trace": [t.to_dict() for t in self.trace],
            "dual_trace": [t.to_dict() for t in self.dual_trace],
        }


def _bound(pomdp, V, g0, lam):
    m = pomdp.mdp
    return float(m.initial_dist @ V[:, g0] - lam @ m.budgets)


def policy_iteration(pomdp, measure, params=DEFAULT_PI, fsc0=None):
    """Constrained risk-averse controller synthesis.

    For each multiplier iterate, alternates controller evaluation and
    I-state improvement (in index order), growing the controller when no
    I-state improves, until nothing changes or ``max_iterations`` is hit.
    The multipliers follow the same projected subgradient ascent as the
    MDP solver, with constraint risks evaluated on the product chain.
    """
    ensure_valid(pomdp)
    m = pomdp.mdp
    sp = params.solver
    fsc = uniform_fsc(pomdp.num_observations, pomdp.num_actions) if fsc0 is None else fsc0
    ensure_valid(fsc)
    check_compatible(pomdp, fsc)
    state = {"fsc": fsc, "v": None, "dv": None, "it": 0, "capped": False}
    trace = []

    def inner(lam):
        fsc = state["fsc"]
        v0 = state["v"]
        for _ in range(params.max_iterations):
            warm = v0 if v0 is not None and v0.shape == (m.num_states, fsc.num_istates) else None
            ev = evaluate_fsc(pomdp, fsc, measure, lam, sp, v0=warm)
            V = ev.value
            g0 = select_initial_istate(V, m.initial_dist)
            fsc = fsc.with_kappa(np.eye(fsc.num_istates)[g0])
            improved = False
            for g in range(fsc.num_istates):
                imp = improve_istate(pomdp, fsc, g, V, lam, measure, params)
                if imp.rows is not None:
                    fsc = fsc.with_rows(g, imp.rows)
                    improved = True
            grown = 0
            if not improved and fsc.num_istates < params.n_max:
                n = min(params.n_new, params.n_max - fsc.num_istates)
                fsc, grown = add_istates(fsc, pomdp, V, lam, measure, n, sp)
                if grown:
                    V = np.hstack([V, np.repeat(V.min(axis=1, keepdims=True), grown, axis=1)])
            trace.append(PiTraceEntry(state["it"], int(V.shape[1] - grown), _bound(pomdp, ev.value, g0, lam),
                                      improved, grown, tuple(float(x) for x in lam)))
            state["it"] += 1
            v0 = V
            if not improved and not grown:
                break
        else:
            state["capped"] = True
            # the last accepted change has not been evaluated yet
            ev = evaluate_fsc(pomdp, fsc, measure, lam, sp, v0=v0 if v0.shape == (m.num_states, fsc.num_istates) else None)
            V = ev.value
            g0 = select_initial_istate(V, m.initial_dist)
            fsc = fsc.with_kappa(np.eye(fsc.num_istates)[g0])
        state["fsc"], state["v"] = fsc, V
        D, dv = fsc_constraint_risks(pomdp, fsc, measure, sp, warm=state["dv"])
        state["dv"] = dv
        return DualPoint(_bound(pomdp, V, g0, lam), D, (fsc, V, g0))

    out = dual_ascent(inner, m.budgets, step0=sp.dual_step0, iters=sp.dual_iters,
                      lambda_cap=sp.lambda_cap)
    fsc, V, g0 = out.point.payload
    lam = out.multipliers
    status = out.status
    if state["capped"] and status is Status.CONVERGED:
        status = Status.ITERATION_CAP
    return FscSolveResult(
        fsc=fsc,
        value=V,
        multipliers=lam,
        g_init=g0,
        lower_bound=_bound(pomdp, V, g0, lam),
        constraint_values=np.asarray(out.point.constraint_values, dtype=float),
        trace=trace,
        dual_trace=out.trace,
        status=status,
        measure=measure,
    )

"""Projected subgradient ascent on Lagrange multipliers.

Both solvers reduce constrained planning to the concave dual function
q(λ) = min_π L(π, λ) − ⟨λ, β⟩, which they can evaluate for any λ ⪰ 0
together with a supergradient D(π_λ) − β. This module owns the outer loop:
step0/√(k+1) projected ascent with best-iterate tracking, a bisection
polish for the single-constraint case, and the divergence guard.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

__all__ = ["Status", "DualPoint", "TraceEntry", "DualOutcome", "dual_ascent"]


class Status(str, enum.Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    INFEASIBLE_SUSPECTED = "infeasible_suspected"


@dataclass
class DualPoint:
    """What the caller's evaluator returns for one multiplier vector."""

    bound: float              # q(λ)
    constraint_values: np.ndarray  # D(π_λ)
    payload: Any = None       # solver-specific state (value function, policy, ...)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    multipliers: tuple
    lower_bound: float
    residuals: tuple
    phase: str

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "multipliers": list(self.multipliers),
            "lower_bound": self.lower_bound,
            "residuals": list(self.residuals),
            "phase": self.phase,
        }


@dataclass
class DualOutcome:
    multipliers: np.ndarray
    point: DualPoint
    trace: list
    status: Status


def dual_ascent(evaluate: Callable[[np.ndarray], DualPoint], budgets, *, step0=1.0,
                iters=200, lambda_cap=1e6, patience=10, polish_iters=80, polish_tol=1e-10):
    """Maximise the dual function by projected subgradient ascent.

    ``evaluate(lam)`` must return a :class:`DualPoint`. The best iterate by
    bound is returned. With one constraint the subgradient phase is followed
    by bisection on the sign of the supergradient, which pins the kink of
    the piecewise-linear dual far more tightly than the diminishing steps.
    """
    beta = np.asarray(budgets, dtype=float)
    nc = beta.size
    lam = np.zeros(nc)
    trace = []
    best = None
    over_cap = 0
    status = Status.ITERATION_CAP
    seen = []  # (lam scalar, subgradient) pairs for the polish bracket

    def record(k, lam, point, phase):
        nonlocal best
        resid = np.asarray(point.constraint_values, dtype=float) - beta
        trace.append(TraceEntry(k, tuple(float(x) for x in lam), float(point.bound),
                                tuple(float(x) for x in resid), phase))
        if best is None or point.bound > best[1].bound:
            best = (lam.copy(), point)
        if nc == 1:
            seen.append((float(lam[0]), float(resid[0])))
        return resid

    def guard(lam, resid):
        nonlocal over_cap
        if np.any((lam > lambda_cap) & (resid > 0)):
            over_cap += 1
        else:
            over_cap = 0
        return over_cap >= patience

    k = 0
    if nc == 0:
        point = evaluate(lam)
        record(0, lam, point, "unconstrained")
        return DualOutcome(lam, point, trace, Status.CONVERGED)

    for k in range(iters):
        point = evaluate(lam)
        resid = record(k, lam, point, "subgradient")
        if guard(lam, resid):
            status = Status.INFEASIBLE_SUSPECTED
            break
        new = np.maximum(0.0, lam + step0 / math.sqrt(k + 1) * resid)
        if np.array_equal(new, lam):
            # λ is a fixed point of the projected step: the supergradient is
            # zero or points out of the feasible orthant.
            status = Status.CONVERGED
            break
        lam = new

    if nc == 1 and status is Status.ITERATION_CAP:
        status = _polish(evaluate, record, guard, seen, k + 1, polish_iters, polish_tol, lambda_cap)

    lam_best, point_best = best
    return DualOutcome(lam_best, point_best, trace, status)


def _polish(evaluate, record, guard, seen, k, iters, tol, cap):
    pos = [l for l, g in seen if g > 0]
    nonpos = [l for l, g in seen if g <= 0]
    lo = max(pos) if pos else 0.0
    hi = min((l for l in nonpos if l >= lo), default=None)
    if pos and hi is None:
        # constraint still violated at every λ tried: grow λ geometrically
        hi = max(2.0 * lo, 1.0)
        while True:
            lam = np.array([hi])
            point = evaluate(lam)
            resid = record(k, lam, point, "expand")
            k += 1
            if resid[0] <= 0:
                break
            lo = hi
            if guard(lam, resid):
                return Status.INFEASIBLE_SUSPECTED
            hi *= 2.0
            if hi > 1e3 * cap:
                return Status.INFEASIBLE_SUSPECTED
    if not pos:
        # λ = 0 was evaluated with a nonpositive supergradient: optimal
        return Status.CONVERGED
    for _ in range(iters):
        if hi - lo <= tol * (1.0 + hi):
            return Status.CONVERGED
        mid = 0.5 * (lo + hi)
        lam = np.array([mid])
        point = evaluate(lam)
        resid = record(k, lam, point, "bisect")
        k += 1
        if resid[0] > 0:
            lo = mid
        else:
            hi = mid
    return Status.CONVERGED if hi - lo <= tol * (1.0 + hi) else Status.ITERATION_CAP

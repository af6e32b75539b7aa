import numpy as np
import pytest

from riskplan.dual import DualPoint, Status, dual_ascent


def _finite_policies(costs, usage):
    """Dual of min_i costs[i] st usage[i] <= beta over a finite policy set."""
    costs, usage = np.asarray(costs, float), np.asarray(usage, float)

    def make(beta):
        def evaluate(lam):
            L = costs + usage @ lam if usage.ndim == 2 else costs + usage * lam[0]
            i = int(np.argmin(L))
            return DualPoint(float(L[i] - lam @ np.atleast_1d(beta)),
                             np.atleast_1d(usage[..., i] if usage.ndim == 1 else usage[:, i]), i)
        return evaluate
    return make


def test_slack_constraint_stops_at_zero():
    ev = _finite_policies([1.0, 2.0], [0.0, 5.0])(10.0)
    out = dual_ascent(ev, [10.0])
    assert out.status is Status.CONVERGED
    assert out.multipliers[0] == 0.0
    assert out.point.bound == pytest.approx(1.0)


def test_binding_constraint_reaches_mixed_optimum():
    # policies (cost, usage): (0, 10) and (6, 2); beta = 4 mixes them
    ev = _finite_policies([0.0, 6.0], [10.0, 2.0])(4.0)
    out = dual_ascent(ev, [4.0])
    # kink at lam = 6/8, value = 0 + 10*0.75 - 4*0.75 = 4.5
    assert out.point.bound == pytest.approx(4.5, abs=1e-8)
    assert out.multipliers[0] == pytest.approx(0.75, abs=1e-6)
    assert out.status is Status.CONVERGED


def test_bound_is_best_iterate():
    ev = _finite_policies([0.0, 6.0], [10.0, 2.0])(4.0)
    out = dual_ascent(ev, [4.0], iters=5, polish_iters=0)
    assert out.point.bound == max(t.lower_bound for t in out.trace)


def test_infeasible_is_flagged():
    ev = _finite_policies([0.0, 1.0], [10.0, 5.0])(1.0)
    out = dual_ascent(ev, [1.0], step0=1e5, lambda_cap=1e3)
    assert out.status is Status.INFEASIBLE_SUSPECTED


def test_two_constraints_move_toward_feasibility():
    costs = np.array([0.0, 3.0, 3.0, 8.0])
    usage = np.array([[5.0, 1.0, 5.0, 1.0], [5.0, 5.0, 1.0, 1.0]])

    def evaluate(lam):
        L = costs + usage.T @ lam
        i = int(np.argmin(L))
        return DualPoint(float(L[i] - lam @ [2.0, 2.0]), usage[:, i], i)

    out = dual_ascent(evaluate, [2.0, 2.0], iters=400)
    assert np.all(out.multipliers >= 0)
    # mixed optimum of the LP relaxation is 5.5; the dual bound cannot exceed it
    assert out.point.bound <= 5.5 + 1e-9
    assert out.point.bound > 4.5


def test_no_constraints():
    out = dual_ascent(lambda lam: DualPoint(3.0, np.zeros(0)), [])
    assert out.status is Status.CONVERGED and out.point.bound == 3.0

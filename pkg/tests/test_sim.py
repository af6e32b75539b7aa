import numpy as np
import pytest

from riskplan.gridworld import GridSpec, GridWorld, generate_layout
from riskplan.mdp_solver import policy_risk_evaluation, solve_constrained
from riskplan.model import Mdp, uniform_fsc
from riskplan.risk import RiskMeasure
from riskplan.sim import heatmap_csv, monte_carlo, records_csv, rollout, summarize

E = RiskMeasure.expectation()


@pytest.fixture(scope="module")
def small():
    return generate_layout(GridSpec(rows=5, cols=5, n_uncertain=1, seed=1))


@pytest.fixture(scope="module")
def small_policy(small):
    return solve_constrained(small.mdp(), E).policy


def test_no_obstacles_no_collisions():
    spec = GridSpec(rows=4, cols=4, obstacle_density=0.0, n_uncertain=0)
    w = GridWorld(spec, np.zeros(16, dtype=bool), ())
    pol = np.zeros(16, dtype=int)
    for i in range(20):
        assert not rollout(w.mdp(), pol, 50, (0, i), obstacle_mask=w.obstacles).collided


def test_absorbing_start_costs_nothing():
    T = np.ones((1, 1, 1))
    m = Mdp(T, [1.0], [[0.0]], [[[0.0]]], [1.0], 0.9)
    r = rollout(m, [0], 100, 3)
    assert r.discounted_cost == 0.0 and r.states.size == 0


def test_rollout_is_deterministic(small, small_policy):
    a = rollout(small.mdp(), small_policy, 400, (7, 1))
    b = rollout(small.mdp(), small_policy, 400, (7, 1))
    np.testing.assert_array_equal(a.states, b.states)
    assert a.discounted_cost == b.discounted_cost


def test_discounted_cost_recomputes(small, small_policy):
    m = small.mdp()
    r = rollout(m, small_policy, 400, 11)
    want = sum(m.discount ** t * c for t, c in enumerate(r.costs))
    assert r.discounted_cost == pytest.approx(want, abs=1e-10)
    np.testing.assert_allclose(r.costs, m.stage_cost[r.states, r.actions])
    assert len(r.trajectory()) == r.states.size


def test_horizon_truncates(small, small_policy):
    assert rollout(small.mdp(), small_policy, 3, 0).states.size <= 3


def test_summary_statistics(small, small_policy):
    s, recs = monte_carlo(small, small_policy, n_runs=30, keep_records=True)
    costs = [r.discounted_cost for r in recs]
    assert s.mean_cost == pytest.approx(np.mean(costs), abs=1e-12)
    assert s.failure_rate == pytest.approx(np.mean([r.collided for r in recs]))
    assert s.mean_cost <= s.cvar_cost + 1e-9 <= s.evar_cost + 2e-9
    assert s.n_runs == 30 and s.budgets == [50.0]
    # summary does not depend on record order
    assert summarize(recs[::-1], [50.0]).to_dict() == summarize(recs, [50.0]).to_dict()


def test_monte_carlo_is_reproducible(small, small_policy):
    a = monte_carlo(small, small_policy, n_runs=15, master_seed=4)
    b = monte_carlo(small.spec, small_policy, n_runs=15, master_seed=4)
    assert a.to_dict() == b.to_dict()
    c = monte_carlo(small, small_policy, n_runs=15, master_seed=5)
    assert a.to_dict() != c.to_dict()


def test_trial_outcome_independent_of_run_count(small, small_policy):
    _, few = monte_carlo(small, small_policy, n_runs=5, keep_records=True)
    _, many = monte_carlo(small, small_policy, n_runs=12, keep_records=True)
    for a, b in zip(few, many):
        np.testing.assert_array_equal(a.states, b.states)


def test_mc_mean_agrees_with_policy_value(small, small_policy):
    m = small.mdp()
    v = policy_risk_evaluation(m, small_policy, E)
    s = monte_carlo(small, small_policy, n_runs=2000, perturb=False)
    assert abs(s.mean_cost - m.initial_dist @ v) <= 3 * s.std_error


def test_pomdp_rollout_with_controller(small):
    p = small.pomdp()
    fsc = uniform_fsc(p.num_observations, 8, num_istates=2)
    r = rollout(p, fsc, 200, 2, obstacle_mask=small.obstacles)
    assert r.istates.size == r.states.size
    assert np.all((r.istates >= 0) & (r.istates < 2))
    s = monte_carlo(small, fsc, n_runs=5)
    assert 0.0 <= s.failure_rate <= 1.0


def test_controller_type_checked(small):
    with pytest.raises(ValueError):
        rollout(small.pomdp(), np.zeros(25, dtype=int))
    with pytest.raises(ValueError):
        rollout(small.mdp(), np.zeros(3, dtype=int))


def test_heatmap_two_by_two():
    spec = GridSpec(rows=2, cols=2, obstacle_density=0.0, n_uncertain=0, start=(0, 0))
    w = GridWorld(spec, np.zeros(4, dtype=bool), ())
    text = heatmap_csv([1.0, 2.0, 3.0, 0.0], [0, 1, 2, 3], w)
    lines = text.strip().split("\n")
    assert lines[0] == "x,y,value,action_label,obstacle_flag,goal_flag"
    assert len(lines) == 5
    goal = [l for l in lines[1:] if l.endswith(",1")]
    assert len(goal) == 1 and goal[0].startswith("1,1,")
    assert text == heatmap_csv([1.0, 2.0, 3.0, 0.0], [0, 1, 2, 3], w)
    with pytest.raises(ValueError):
        heatmap_csv([1.0], None, w)


def test_records_csv(small, small_policy):
    _, recs = monte_carlo(small, small_policy, n_runs=3, keep_records=True)
    text = records_csv(recs)
    assert text.count("\n") == 4 and text.split("\n")[1].startswith("0:0:1,")

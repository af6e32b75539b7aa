import numpy as np
import pytest
from scipy.optimize import linprog

from riskplan.optim import linprog_simplex, project_simplex, project_simplex_blocks


def test_small_lp():
    # max x + y st x + 2y <= 4, 3x + y <= 6
    res = linprog_simplex([-1, -1], [[1, 2], [3, 1]], [4, 6])
    assert res.status == "optimal"
    np.testing.assert_allclose(res.x, [1.6, 1.2], atol=1e-10)
    assert res.fun == pytest.approx(-2.8)


def test_infeasible_and_unbounded():
    assert linprog_simplex([1, 1], A_eq=[[1, 1]], b_eq=[-1]).status == "infeasible"
    assert linprog_simplex([-1, 0], [[0, 1]], [1]).status == "unbounded"


def test_free_variable():
    # min t st t >= x_i - 3 for x = (1, 5), t free
    res = linprog_simplex([1], [[-1], [-1]], [2, -2], free=[True])
    assert res.x[0] == pytest.approx(2.0)
    res = linprog_simplex([1], [[-1]], [5], free=[True])
    assert res.x[0] == pytest.approx(-5.0)


def test_redundant_equalities():
    res = linprog_simplex([1, 2, 3], A_eq=[[1, 1, 1], [2, 2, 2]], b_eq=[1, 2])
    assert res.status == "optimal"
    np.testing.assert_allclose(res.x, [1, 0, 0], atol=1e-12)


def test_degenerate_cycling_example():
    # Beale's example cycles under naive Dantzig pricing
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    res = linprog_simplex(c, A, [0, 0, 1])
    assert res.status == "optimal"
    assert res.fun == pytest.approx(-0.05)


def test_matches_highs_on_random_lps(rng):
    for _ in range(60):
        n, m_ub, m_eq = rng.integers(2, 8), rng.integers(1, 6), rng.integers(0, 3)
        c = rng.normal(size=n)
        A_ub = rng.normal(size=(m_ub, n))
        b_ub = rng.uniform(0.5, 3, size=m_ub)
        A_eq = rng.uniform(0, 1, size=(m_eq, n))
        b_eq = A_eq @ rng.uniform(0, 1, size=n)
        ours = linprog_simplex(c, A_ub, b_ub, A_eq if m_eq else None, b_eq if m_eq else None)
        ref = linprog(c, A_ub, b_ub, A_eq if m_eq else None, b_eq if m_eq else None, method="highs")
        if ref.status == 0:
            assert ours.status == "optimal"
            assert ours.fun == pytest.approx(ref.fun, abs=1e-7)
        elif ref.status == 3:
            assert ours.status == "unbounded"
        elif ref.status == 2:
            assert ours.status == "infeasible"


def test_projection_properties(rng):
    v = rng.normal(scale=3, size=(100, 7))
    x = project_simplex(v)
    assert np.all(x >= 0)
    np.testing.assert_allclose(x.sum(axis=1), 1.0)
    # optimality: any feasible point is no closer
    for _ in range(20):
        y = rng.dirichlet(np.ones(7), size=100)
        assert np.all(np.linalg.norm(v - x, axis=1) <= np.linalg.norm(v - y, axis=1) + 1e-12)


def test_projection_fixes_simplex_points(rng):
    y = rng.dirichlet(np.ones(5))
    np.testing.assert_allclose(project_simplex(y), y, atol=1e-15)
    np.testing.assert_allclose(project_simplex([3.0, 1.0]), [1.0, 0.0])


def test_block_projection(rng):
    x = rng.normal(size=12)
    out = project_simplex_blocks(x, 4).reshape(3, 4)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_mdp(rng, n_states, n_actions, n_constraints=1, discount=0.9, sparse=False, budget=None):
    """Random well-formed Mdp used across solver tests."""
    from riskplan.model import Mdp

    T = rng.random((n_states, n_actions, n_states)) ** 3
    if sparse:
        T *= rng.random(T.shape) < 0.6
        T[..., 0] += 1e-3
    T /= T.sum(axis=2, keepdims=True)
    c = rng.uniform(0.0, 5.0, (n_states, n_actions))
    d = rng.uniform(0.0, 3.0, (n_constraints, n_states, n_actions))
    kappa = rng.random(n_states)
    kappa /= kappa.sum()
    if budget is None:
        budget = np.full(n_constraints, 1e6)
    return Mdp(
        transition=T,
        initial_dist=kappa,
        stage_cost=c,
        constraint_costs=d,
        budgets=np.broadcast_to(np.asarray(budget, float), (n_constraints,)).copy(),
        discount=discount,
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

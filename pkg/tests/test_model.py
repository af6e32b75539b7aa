import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskplan.exceptions import DimensionMismatch, ImpossibleObservation, InvalidModel
from riskplan.model import (
    Belief,
    Fsc,
    Mdp,
    Pomdp,
    belief_update,
    deterministic_fsc,
    ensure_valid,
    from_dict,
    initial_belief,
    load_json,
    policy_action_distribution,
    product_chain,
    save_json,
    to_dict,
    uniform_fsc,
    validate,
)

from conftest import random_mdp


def two_state(T=None, kappa=(0.5, 0.5)):
    T = np.tile(np.eye(2)[:, None, :], (1, 2, 1)) if T is None else T
    return Mdp(T, kappa, np.ones((2, 2)), np.ones((1, 2, 2)), [10.0], 0.95)


def random_pomdp(rng, S=4, A=2, O=3):
    m = random_mdp(rng, S, A)
    obs = rng.dirichlet(np.ones(O), size=S)
    return Pomdp(m, obs)


def random_fsc(rng, G, O, A):
    w = rng.dirichlet(np.ones(G * A), size=(G, O)).reshape(G, O, G, A)
    return Fsc(w, rng.dirichlet(np.ones(G)))


# --- validation --------------------------------------------------------------


def test_valid_mdp_has_empty_report():
    assert validate(two_state()) == []


def test_bad_transition_row_is_named():
    T = np.tile(np.eye(2)[:, None, :], (1, 2, 1)).astype(float)
    T[1, 0] = [0.0, 0.9]
    report = validate(two_state(T))
    assert [(v.invariant, v.location) for v in report] == [("transition sums to 1", (1, 0))]
    with pytest.raises(InvalidModel):
        ensure_valid(two_state(T))


def test_negative_omega_entry_is_named():
    w = np.zeros((2, 1, 2, 3))
    w[:, 0, 0, 0] = 1.0
    w[1, 0, 1, 2] = -0.25
    w[1, 0, 0, 1] = 0.25
    locs = [v.location for v in validate(Fsc(w)) if v.invariant == "omega nonnegative"]
    assert locs == [(1, 0, 1, 2)]


def test_other_invariants_reported():
    m = Mdp(np.ones((1, 1, 1)), [1.0], [[-1.0]], [[[1.0]]], [0.0], 1.0)
    names = {v.invariant for v in validate(m)}
    assert {"stage_cost nonnegative", "budget positive", "discount in (0, 1)"} <= names
    p = Pomdp(two_state(), [[0.5, 0.6], [1.0, 0.0]])
    assert [v.location for v in validate(p)] == [(0,)]


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        Mdp(np.ones((2, 1, 3)) / 3, [0.5, 0.5], np.ones((2, 1)))
    with pytest.raises(DimensionMismatch):
        Pomdp(two_state(), np.ones((3, 2)) / 2)


def test_arrays_are_frozen():
    m = two_state()
    with pytest.raises(ValueError):
        m.transition[0, 0, 0] = 0.5


# --- beliefs -----------------------------------------------------------------


def test_bayes_update_example():
    p = Pomdp(two_state(), [[0.8, 0.2], [0.3, 0.7]])
    post = belief_update(p, Belief([0.5, 0.5]), 0, 0)
    np.testing.assert_allclose(post.probs, np.array([0.8, 0.3]) / 1.1, atol=1e-12)
    assert post.probs[0] == pytest.approx(0.7273, abs=1e-4)


def test_deterministic_chain_collapses_belief():
    T = np.zeros((3, 1, 3))
    T[:, 0, 2] = 1.0
    m = Mdp(T, [1 / 3] * 3, np.zeros((3, 1)))
    O = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    post = belief_update(Pomdp(m, O), Belief([0.2, 0.5, 0.3]), 0, 1)
    np.testing.assert_allclose(post.probs, [0, 0, 1], atol=1e-15)


def test_uninformative_update_keeps_prior():
    p = Pomdp(two_state(), np.full((2, 3), 1 / 3))
    post = belief_update(p, Belief([0.5, 0.5]), 1, 2)
    np.testing.assert_allclose(post.probs, [0.5, 0.5])


def test_impossible_observation():
    p = Pomdp(two_state(), [[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ImpossibleObservation):
        belief_update(p, Belief([0.5, 0.5]), 0, 1)
    with pytest.raises(ImpossibleObservation):
        initial_belief(p, 1)


def test_initial_belief_examples():
    p = Pomdp(two_state(kappa=(0.9, 0.1)), [[0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_allclose(initial_belief(p, 1).probs, np.array([0.45, 0.10]) / 0.55)
    p = Pomdp(two_state(kappa=(1.0, 0.0)), [[0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_allclose(initial_belief(p, 0).probs, [1.0, 0.0])
    p = Pomdp(two_state(), np.full((2, 2), 0.5))
    np.testing.assert_allclose(initial_belief(p, 0).probs, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_belief_update_is_a_distribution(seed):
    rng = np.random.default_rng(seed)
    p = random_pomdp(rng)
    prior = Belief(rng.dirichlet(np.ones(4)))
    post = belief_update(p, prior, int(rng.integers(2)), int(rng.integers(3)))
    assert np.all(post.probs >= 0) and post.probs.sum() == pytest.approx(1.0, abs=1e-12)


# --- closed loop ---------------------------------------------------------------


def test_memoryless_deterministic_fsc_reproduces_mdp_chain(rng):
    p = random_pomdp(rng)
    for a in range(2):
        fsc = deterministic_fsc([a] * 3, 2)
        chain = product_chain(p, fsc)
        np.testing.assert_allclose(chain.dense_transition(), p.mdp.transition[:, a, :], atol=1e-12)
        np.testing.assert_allclose(chain.lifted_cost, p.mdp.stage_cost[:, a], atol=1e-12)


def test_uniform_fsc_averages_actions(rng):
    p = random_pomdp(rng)
    chain = product_chain(p, uniform_fsc(3, 2))
    np.testing.assert_allclose(chain.dense_transition(), p.mdp.transition.mean(axis=1), atol=1e-12)


def test_initial_product_law(rng):
    p = random_pomdp(rng)
    fsc = random_fsc(rng, 3, 3, 2).with_kappa([0, 1, 0])
    chain = product_chain(p, fsc)
    iota = chain.initial_dist.reshape(4, 3)
    np.testing.assert_allclose(iota[:, 1], p.mdp.initial_dist)
    assert np.all(iota[:, [0, 2]] == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_product_chain_rows_are_stochastic(seed, G):
    rng = np.random.default_rng(seed)
    p = random_pomdp(rng)
    chain = product_chain(p, random_fsc(rng, G, 3, 2))
    np.testing.assert_allclose(chain.dense_transition().sum(axis=1), 1.0, atol=1e-12)
    assert chain.initial_dist.sum() == pytest.approx(1.0)


def test_product_chain_matches_direct_sum(rng):
    p = random_pomdp(rng)
    fsc = random_fsc(rng, 2, 3, 2)
    T, O, w = p.mdp.transition, p.observation, fsc.omega
    direct = np.einsum("so,goha,sat->sgth", O, w, T).reshape(8, 8)
    np.testing.assert_allclose(product_chain(p, fsc).dense_transition(), direct, atol=1e-12)


def test_action_distribution_examples():
    p = Pomdp(two_state(), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(policy_action_distribution(p, deterministic_fsc([1, 1], 2), 0, 0), [0, 1])
    np.testing.assert_allclose(policy_action_distribution(p, deterministic_fsc([0, 1], 2), 0, 0),
                               [0.5, 0.5])
    np.testing.assert_allclose(policy_action_distribution(p, uniform_fsc(2, 2), 1, 0), [0.5, 0.5])


def test_incompatible_fsc():
    p = Pomdp(two_state(), [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(DimensionMismatch):
        product_chain(p, uniform_fsc(3, 2))


# --- files --------------------------------------------------------------------


def test_json_roundtrip(tmp_path, rng):
    p = random_pomdp(rng)
    fsc = random_fsc(rng, 2, 3, 2)
    for obj in (p.mdp, p, fsc):
        path = tmp_path / "m.json"
        save_json(obj, path)
        back = load_json(path)
        assert type(back) is type(obj)
        assert to_dict(back) == to_dict(obj)


def test_fsc_file_layout():
    w = np.zeros((2, 1, 2, 3))
    w[0, 0, 1, 2] = 1.0
    w[1, 0, 0, 0] = 1.0
    d = to_dict(Fsc(w))
    assert d["num_istates"] == 2
    assert d["omega"][0][0][1 * 3 + 2] == 1.0
    assert isinstance(from_dict(d), Fsc)

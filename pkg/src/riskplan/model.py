"""Finite MDP / POMDP / finite-state-controller data model.

Everything is dense and 0-indexed. Arrays handed to the constructors are
copied, converted to float and frozen (``writeable=False``), so instances
can be shared freely. Construction only checks shapes; use :func:`validate`
for the probabilistic invariants, or :func:`ensure_valid` to raise on them.

Array layouts
-------------
``Mdp.transition``        (S, A, S)   T[s, a, s']
``Mdp.stage_cost``        (S, A)      c[s, a]
``Mdp.constraint_costs``  (n_c, S, A) d[i, s, a]
``Pomdp.observation``     (S, O)      O[s, o]
``Fsc.omega``             (G, O, G, A) omega[g, o, g', a]

Product states ``[s, g]`` are flattened as ``s * G + g``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .exceptions import DimensionMismatch, ImpossibleObservation, InvalidModel

__all__ = [
    "Mdp",
    "Pomdp",
    "Belief",
    "Fsc",
    "ProductChain",
    "Successors",
    "Violation",
    "validate",
    "ensure_valid",
    "belief_update",
    "initial_belief",
    "product_chain",
    "product_successors",
    "policy_action_distribution",
    "observation_weighted_omega",
    "uniform_fsc",
    "deterministic_fsc",
    "to_dict",
    "from_dict",
    "save_json",
    "load_json",
]

PROB_TOL = 1e-9
_NORMALIZER_FLOOR = 1e-300


def _frozen(x, ndim, name):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise DimensionMismatch(f"{name} must have {ndim} dimensions, got shape {a.shape}")
    a.setflags(write=False)
    return a


class Successors(NamedTuple):
    """Padded successor lists of a transition tensor.

    ``index[s, a, k]`` is a successor state and ``prob[s, a, k]`` its
    probability; padding slots carry probability 0 and index 0.
    """

    index: np.ndarray
    prob: np.ndarray


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite discounted MDP with objective and constraint costs."""

    transition: np.ndarray
    initial_dist: np.ndarray
    stage_cost: np.ndarray
    constraint_costs: np.ndarray = None
    budgets: np.ndarray = None
    discount: float = 0.95

    def __post_init__(self):
        T = _frozen(self.transition, 3, "transition")
        S, A, S2 = T.shape
        if S2 != S or S == 0 or A == 0:
            raise DimensionMismatch(f"transition must be (S, A, S) with S, A > 0, got {T.shape}")
        kappa = _frozen(self.initial_dist, 1, "initial_dist")
        c = _frozen(self.stage_cost, 2, "stage_cost")
        d = self.constraint_costs
        d = np.zeros((0, S, A)) if d is None else d
        d = _frozen(d, 3, "constraint_costs")
        beta = np.zeros(0) if self.budgets is None else self.budgets
        beta = _frozen(np.atleast_1d(beta), 1, "budgets")
        if kappa.shape != (S,):
            raise DimensionMismatch(f"initial_dist must have length {S}, got {kappa.shape}")
        if c.shape != (S, A):
            raise DimensionMismatch(f"stage_cost must be ({S}, {A}), got {c.shape}")
        if d.shape[1:] != (S, A):
            raise DimensionMismatch(f"constraint_costs must be (n_c, {S}, {A}), got {d.shape}")
        if beta.shape != (d.shape[0],):
            raise DimensionMismatch(f"budgets must have length {d.shape[0]}, got {beta.shape}")
        for name, val in (("transition", T), ("initial_dist", kappa), ("stage_cost", c),
                          ("constraint_costs", d), ("budgets", beta)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def num_constraints(self):
        return self.constraint_costs.shape[0]

    @cached_property
    def successors(self):
        """Padded successor lists, width = largest support over (s, a)."""
        return _pad_support(self.transition)

    def with_budgets(self, budgets):
        """Copy with replaced budgets (same number of constraints)."""
        return Mdp(self.transition, self.initial_dist, self.stage_cost,
                   self.constraint_costs, budgets, self.discount)

    def with_costs(self, stage_cost=None, constraint_costs=None):
        return Mdp(
            self.transition,
            self.initial_dist,
            self.stage_cost if stage_cost is None else stage_cost,
            self.constraint_costs if constraint_costs is None else constraint_costs,
            self.budgets,
            self.discount,
        )


def _pad_support(T):
    S, A, _ = T.shape
    mask = T > 0.0
    width = max(int(mask.sum(axis=2).max()), 1)
    # stable argsort puts positive entries first while keeping state order
    order = np.argsort(~mask, axis=2, kind="stable")[:, :, :width]
    prob = np.take_along_axis(T, order, axis=2)
    index = np.where(prob > 0.0, order, 0)
    index.setflags(write=False)
    prob.setflags(write=False)
    return Successors(index, prob)


@dataclass(frozen=True, eq=False)
class Pomdp:
    """An MDP plus an observation model O[s, o]."""

    mdp: Mdp
    observation: np.ndarray

    def __post_init__(self):
        O = _frozen(self.observation, 2, "observation")
        if O.shape[0] != self.mdp.num_states or O.shape[1] == 0:
            raise DimensionMismatch(
                f"observation must be ({self.mdp.num_states}, |O|), got {O.shape}"
            )
        object.__setattr__(self, "observation", O)

    @property
    def num_states(self):
        return self.mdp.num_states

    @property
    def num_actions(self):
        return self.mdp.num_actions

    @property
    def num_observations(self):
        return self.observation.shape[1]


@dataclass(frozen=True, eq=False)
class Belief:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, 1, "probs"))


@dataclass(frozen=True, eq=False)
class Fsc:
    """Stochastic finite-state controller.

    ``omega[g, o, g2, a]`` is the probability of moving to I-state ``g2`` and
    taking action ``a`` after observing ``o`` in I-state ``g``.
    """

    omega: np.ndarray
    kappa: np.ndarray = field(default=None)

    def __post_init__(self):
        w = _frozen(self.omega, 4, "omega")
        G, _, G2, _ = w.shape
        if G2 != G or G == 0:
            raise DimensionMismatch(f"omega must be (G, O, G, A), got {w.shape}")
        k = np.eye(G)[0] if self.kappa is None else self.kappa
        k = _frozen(k, 1, "kappa")
        if k.shape != (G,):
            raise DimensionMismatch(f"kappa must have length {G}, got {k.shape}")
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "kappa", k)

    @property
    def num_istates(self):
        return self.omega.shape[0]

    @property
    def num_observations(self):
        return self.omega.shape[1]

    @property
    def num_actions(self):
        return self.omega.shape[3]

    def with_rows(self, g, rows):
        """Copy with the ``omega[g]`` block replaced."""
        w = np.array(self.omega)
        w[g] = rows
        return Fsc(w, self.kappa)

    def with_kappa(self, kappa):
        return Fsc(self.omega, kappa)


def uniform_fsc(num_observations, num_actions, num_istates=1):
    """Controller that picks (g', a) uniformly at random."""
    G = num_istates
    w = np.full((G, num_observations, G, num_actions), 1.0 / (G * num_actions))
    return Fsc(w)


def deterministic_fsc(actions_by_obs, num_actions):
    """One-I-state controller taking ``actions_by_obs[o]`` after observing ``o``."""
    acts = np.asarray(actions_by_obs, dtype=int)
    w = np.zeros((1, acts.size, 1, num_actions))
    w[0, np.arange(acts.size), 0, acts] = 1.0
    return Fsc(w)


# --- validation --------------------------------------------------------------


class Violation(NamedTuple):
    invariant: str
    location: tuple
    detail: str

    def __str__(self):
        return f"{self.invariant} at {self.location}: {self.detail}"


def _check_simplex(arr, axes, name, report, tol=PROB_TOL):
    """Append violations for negative entries and bad sums over ``axes``."""
    a = np.asarray(arr)
    for loc in zip(*np.nonzero(~np.isfinite(a))):
        report.append(Violation(f"{name} finite", tuple(int(i) for i in loc), "non-finite entry"))
    for loc in zip(*np.nonzero(a < 0)):
        report.append(Violation(f"{name} nonnegative", tuple(int(i) for i in loc),
                                f"entry {a[loc]:.3g} < 0"))
    sums = a.sum(axis=axes)
    bad = np.abs(sums - 1.0) > tol
    sums = np.atleast_1d(sums)
    bad = np.atleast_1d(bad)
    for loc in zip(*np.nonzero(bad)):
        report.append(Violation(f"{name} sums to 1", tuple(int(i) for i in loc),
                                f"sum is {sums[loc]:.12g}"))


def _validate_mdp(m, report):
    _check_simplex(m.transition, 2, "transition", report)
    _check_simplex(m.initial_dist, 0, "initial_dist", report)
    for name, arr in (("stage_cost", m.stage_cost), ("constraint_costs", m.constraint_costs)):
        for loc in zip(*np.nonzero(~np.isfinite(arr))):
            report.append(Violation(f"{name} finite", tuple(int(i) for i in loc), "non-finite entry"))
        for loc in zip(*np.nonzero(arr < 0)):
            report.append(Violation(f"{name} nonnegative", tuple(int(i) for i in loc),
                                    f"entry {arr[loc]:.3g} < 0"))
    for i, b in enumerate(m.budgets):
        if not (np.isfinite(b) and b > 0):
            report.append(Violation("budget positive", (i,), f"budget is {b}"))
    if not 0.0 < m.discount < 1.0:
        report.append(Violation("discount in (0, 1)", (), f"discount is {m.discount}"))


def validate(model):
    """List every violated invariant of an Mdp, Pomdp or Fsc.

    Returns an empty list for a valid model. Locations are index tuples,
    e.g. ``(s, a)`` for a transition row or ``(g, o, g2, a)`` for an entry.
    """
    report = []
    if isinstance(model, Mdp):
        _validate_mdp(model, report)
    elif isinstance(model, Pomdp):
        _validate_mdp(model.mdp, report)
        _check_simplex(model.observation, 1, "observation", report)
    elif isinstance(model, Fsc):
        w = model.omega
        _check_simplex(w.reshape(w.shape[0], w.shape[1], -1), 2, "omega", report)
        # re-express flat negative locations as (g, o, g2, a)
        fixed = []
        for v in report:
            if v.invariant == "omega nonnegative":
                g, o, j = v.location
                v = v._replace(location=(g, o, j // w.shape[3], j % w.shape[3]))
            fixed.append(v)
        report[:] = fixed
        _check_simplex(model.kappa, 0, "kappa", report)
    else:
        raise TypeError(f"cannot validate {type(model).__name__}")
    return report


def ensure_valid(model):
    """Raise InvalidModel if :func:`validate` reports anything."""
    report = validate(model)
    if report:
        raise InvalidModel(report)
    return model


def check_compatible(pomdp, fsc):
    if fsc.num_observations != pomdp.num_observations or fsc.num_actions != pomdp.num_actions:
        raise DimensionMismatch(
            f"controller is for |O|={fsc.num_observations}, |A|={fsc.num_actions}; "
            f"model has |O|={pomdp.num_observations}, |A|={pomdp.num_actions}"
        )


# --- beliefs ------------------------------------------------------------------


def _index(i, n, what):
    i = int(i)
    if not 0 <= i < n:
        raise DimensionMismatch(f"{what} index {i} out of range [0, {n})")
    return i


def _normalize(unnorm):
    z = unnorm.sum()
    if not z > _NORMALIZER_FLOOR:
        raise ImpossibleObservation("observation has zero probability under the prior")
    return Belief(unnorm / z)


def belief_update(pomdp, prior, action, observation):
    """Bayes filter: b'(s') ∝ O(o|s') Σ_s T(s'|s,a) b(s)."""
    a = _index(action, pomdp.num_actions, "action")
    o = _index(observation, pomdp.num_observations, "observation")
    b = prior.probs if isinstance(prior, Belief) else np.asarray(prior, dtype=float)
    if b.shape != (pomdp.num_states,):
        raise DimensionMismatch(f"belief must have length {pomdp.num_states}")
    predicted = b @ pomdp.mdp.transition[:, a, :]
    return _normalize(pomdp.observation[:, o] * predicted)


def initial_belief(pomdp, observation):
    """b0(s) ∝ κ0(s) O(o0|s)."""
    o = _index(observation, pomdp.num_observations, "observation")
    return _normalize(pomdp.mdp.initial_dist * pomdp.observation[:, o])


# --- closed loop --------------------------------------------------------------


def observation_weighted_omega(pomdp, fsc):
    """W[s, g, g', a] = Σ_o O(o|s) ω(g', a | g, o)."""
    check_compatible(pomdp, fsc)
    return np.einsum("so,goha->sgha", pomdp.observation, fsc.omega)


def policy_action_distribution(pomdp, fsc, s, g):
    """Action marginal of the controller in product state [s, g]."""
    s = _index(s, pomdp.num_states, "state")
    g = _index(g, fsc.num_istates, "I-state")
    check_compatible(pomdp, fsc)
    return np.einsum("o,oha->a", pomdp.observation[s], fsc.omega[g])


def product_successors(pomdp, fsc, W=None):
    """Padded product-chain successor lists.

    Returns ``(index, prob)`` with ``index`` of shape (S, K) holding the
    union support of T(.|s, a) over actions and ``prob`` of shape
    (S, G, K, G) with prob[s, g, k, g'] = T^M([index[s, k], g'] | [s, g]).
    """
    m = pomdp.mdp
    if W is None:
        W = observation_weighted_omega(pomdp, fsc)
    idx = _union_support(m.transition)
    Tk = np.take_along_axis(m.transition, np.broadcast_to(idx[:, None, :], (m.num_states, m.num_actions, idx.shape[1])), axis=2)
    prob = np.einsum("sgha,sak->sgkh", W, Tk)
    return idx, prob


def _union_support(T):
    reach = (T > 0.0).any(axis=1)
    width = max(int(reach.sum(axis=1).max()), 1)
    order = np.argsort(~reach, axis=1, kind="stable")[:, :width]
    valid = np.take_along_axis(reach, order, axis=1)
    # padded slots point at the row's first successor; their probability is 0
    return np.where(valid, order, order[:, :1])


@dataclass(frozen=True, eq=False)
class ProductChain:
    """Closed-loop Markov chain over [s, g] pairs (flattened ``s * G + g``)."""

    num_states: int
    num_istates: int
    transition: sparse.csr_matrix
    initial_dist: np.ndarray
    lifted_cost: np.ndarray
    lifted_constraint_costs: np.ndarray

    @property
    def num_product_states(self):
        return self.num_states * self.num_istates

    def dense_transition(self):
        return self.transition.toarray()


def product_chain(pomdp, fsc):
    """Build the product chain induced by running ``fsc`` on ``pomdp``."""
    check_compatible(pomdp, fsc)
    m = pomdp.mdp
    S, G = m.num_states, fsc.num_istates
    W = observation_weighted_omega(pomdp, fsc)
    idx, prob = product_successors(pomdp, fsc, W)
    K = idx.shape[1]
    rows = np.repeat(np.arange(S * G), K * G)
    cols = (idx[:, None, :, None] * G + np.arange(G)[None, None, None, :])
    cols = np.broadcast_to(cols, (S, G, K, G)).ravel()
    TM = sparse.csr_matrix((prob.ravel(), (rows, cols)), shape=(S * G, S * G))
    TM.sum_duplicates()
    TM.eliminate_zeros()
    pa = W.sum(axis=2)  # (S, G, A) action marginals
    cost = np.einsum("sga,sa->sg", pa, m.stage_cost).ravel()
    dcost = np.einsum("sga,isa->isg", pa, m.constraint_costs).reshape(m.num_constraints, S * G)
    iota = np.outer(m.initial_dist, fsc.kappa).ravel()
    return ProductChain(S, G, TM, iota, cost, dcost)


# --- JSON ----------------------------------------------------------------------


def _mdp_dict(m):
    return {
        "num_states": m.num_states,
        "num_actions": m.num_actions,
        "transition": m.transition.tolist(),
        "initial_dist": m.initial_dist.tolist(),
        "stage_cost": m.stage_cost.tolist(),
        "constraint_costs": m.constraint_costs.tolist(),
        "budgets": m.budgets.tolist(),
        "discount": m.discount,
    }


def to_dict(model):
    """JSON-ready dict of an Mdp, Pomdp or Fsc."""
    if isinstance(model, Mdp):
        return _mdp_dict(model)
    if isinstance(model, Pomdp):
        d = _mdp_dict(model.mdp)
        d["num_observations"] = model.num_observations
        d["observation"] = model.observation.tolist()
        return d
    if isinstance(model, Fsc):
        G, O, _, A = model.omega.shape
        return {
            "num_istates": G,
            "num_observations": O,
            "num_actions": A,
            "omega": model.omega.reshape(G, O, G * A).tolist(),
            "kappa": model.kappa.tolist(),
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _sized(d, key, arr, axis_len):
    if key in d and int(d[key]) != axis_len:
        raise DimensionMismatch(f"{key}={d[key]} disagrees with array shape ({axis_len})")


def from_dict(d):
    """Inverse of :func:`to_dict`; the kind is inferred from the keys."""
    if "omega" in d:
        flat = np.asarray(d["omega"], dtype=float)
        if flat.ndim != 3:
            raise DimensionMismatch("omega must be nested [g][o][g'*|A|+a]")
        G, O, GA = flat.shape
        A = int(d.get("num_actions", GA // G))
        if G * A != GA:
            raise DimensionMismatch(f"omega rows have {GA} entries, expected {G}*{A}")
        _sized(d, "num_istates", flat, G)
        return Fsc(flat.reshape(G, O, G, A), d.get("kappa"))
    T = np.asarray(d["transition"], dtype=float)
    if T.ndim != 3:
        raise DimensionMismatch("transition must be nested [s][a][s']")
    _sized(d, "num_states", T, T.shape[0])
    _sized(d, "num_actions", T, T.shape[1])
    d_costs = d.get("constraint_costs")
    if d_costs is not None and len(d_costs) == 0:
        d_costs = np.zeros((0,) + T.shape[:2])
    mdp = Mdp(T, d["initial_dist"], d["stage_cost"], d_costs, d.get("budgets"),
              d.get("discount", 0.95))
    if "observation" in d:
        O = np.asarray(d["observation"], dtype=float)
        if O.ndim == 2:
            _sized(d, "num_observations", O, O.shape[1])
        return Pomdp(mdp, O)
    return mdp


def save_json(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh, indent=1)
        fh.write("\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))

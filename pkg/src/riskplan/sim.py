"""Monte Carlo rollouts and the obstacle-perturbation robustness protocol.

Every random draw comes from a Philox generator keyed by
``(master_seed, trial, stream)``, so a trial's outcome does not depend on
which other trials ran or in what order.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .gridworld import ACTION_NAMES, GridSpec, cell_coords, generate_layout, make_rng, perturb_obstacles
from .model import Fsc, Pomdp, check_compatible
from .risk import RiskMeasure, static_risk

__all__ = [
    "RolloutRecord",
    "McSummary",
    "rollout",
    "monte_carlo",
    "summarize",
    "export_heatmap",
    "heatmap_csv",
    "records_csv",
]

DEFAULT_HORIZON = 400
_PERTURB_STREAM = 0
_ROLLOUT_STREAM = 1


@dataclass
class RolloutRecord:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    constraint_costs: np.ndarray   # (T, n_c)
    discounted_cost: float
    discounted_constraint_costs: np.ndarray
    collided: bool
    seed: tuple
    istates: np.ndarray = None

    def trajectory(self):
        return list(zip(self.states.tolist(), self.actions.tolist(), self.costs.tolist(),
                        self.constraint_costs.tolist()))


def _draw(rng_u, cdf):
    i = int(np.searchsorted(cdf, rng_u * cdf[-1], side="right"))
    return min(i, cdf.size - 1)


def _absorbing(mdp):
    """States that loop to themselves at zero cost under every action."""
    T = mdp.transition
    S = mdp.num_states
    selfloop = np.all(T[np.arange(S), :, np.arange(S)] == 1.0, axis=1)
    free = np.all(mdp.stage_cost == 0.0, axis=1) & np.all(mdp.constraint_costs == 0.0, axis=(0, 2))
    return selfloop & free


def rollout(model, controller, horizon=DEFAULT_HORIZON, seed=0, obstacle_mask=None):
    """Sample one closed-loop run.

    ``model`` is an Mdp driven by a deterministic policy (array of actions)
    or a Pomdp driven by an Fsc. A run stops early once it enters a
    zero-cost absorbing state, since nothing after that can change the
    record. ``obstacle_mask`` marks the cells that count as collisions.
    """
    key = seed if isinstance(seed, (tuple, list)) else (seed,)
    rng = make_rng(*key)
    pomdp = model if isinstance(model, Pomdp) else None
    mdp = model.mdp if pomdp is not None else model
    S = mdp.num_states
    gamma = mdp.discount
    cdf_T = np.cumsum(mdp.transition, axis=2)
    absorbing = _absorbing(mdp)
    mask = np.zeros(S, dtype=bool) if obstacle_mask is None else np.asarray(obstacle_mask, bool)

    if pomdp is None:
        policy = np.asarray(controller, dtype=int)
        if policy.shape != (S,):
            raise ValueError("MDP rollouts need a deterministic policy over all states")
    else:
        if not isinstance(controller, Fsc):
            raise ValueError("POMDP rollouts need a finite-state controller")
        check_compatible(pomdp, controller)
        G, O, _, A = controller.omega.shape
        cdf_O = np.cumsum(pomdp.observation, axis=1)
        cdf_W = np.cumsum(controller.omega.reshape(G, O, G * A), axis=2)
        g = _draw(rng.random(), np.cumsum(controller.kappa))

    s = _draw(rng.random(), np.cumsum(mdp.initial_dist))
    states, actions, istates = [], [], []
    for _ in range(horizon):
        if absorbing[s]:
            break
        if pomdp is None:
            a = int(policy[s])
        else:
            o = _draw(rng.random(), cdf_O[s])
            g_next, a = divmod(_draw(rng.random(), cdf_W[g, o]), A)
            istates.append(g)
        states.append(s)
        actions.append(a)
        s = _draw(rng.random(), cdf_T[s, a])
        if pomdp is not None:
            g = g_next
    st = np.array(states, dtype=int)
    ac = np.array(actions, dtype=int)
    c = mdp.stage_cost[st, ac] if st.size else np.zeros(0)
    d = mdp.constraint_costs[:, st, ac].T if st.size else np.zeros((0, mdp.num_constraints))
    disc = gamma ** np.arange(st.size)
    return RolloutRecord(
        states=st,
        actions=ac,
        costs=c,
        constraint_costs=d,
        discounted_cost=float(disc @ c),
        discounted_constraint_costs=disc @ d,
        collided=bool(mask[st].any()),
        seed=tuple(int(k) for k in key),
        istates=None if pomdp is None else np.array(istates, dtype=int),
    )


@dataclass
class McSummary:
    n_runs: int
    failure_rate: float
    mean_cost: float
    std_error: float
    cvar_cost: float
    evar_cost: float
    risk_epsilon: float
    mean_constraint_costs: list
    constraint_satisfaction_rate: float
    budgets: list = field(default_factory=list)

    def to_dict(self):
        return {
            "n_runs": self.n_runs,
            "failure_rate": self.failure_rate,
            "mean_cost": self.mean_cost,
            "std_error": self.std_error,
            "cvar_cost": self.cvar_cost,
            "evar_cost": self.evar_cost,
            "risk_epsilon": self.risk_epsilon,
            "mean_constraint_costs": list(self.mean_constraint_costs),
            "constraint_satisfaction_rate": self.constraint_satisfaction_rate,
            "budgets": list(self.budgets),
        }


def summarize(records, budgets=(), epsilon=0.2):
    """Aggregate rollout records; statistics use the static risk estimators.

    Records are sorted by seed first so the floating-point sums do not
    depend on the order in which trials finished.
    """
    recs = sorted(records, key=lambda r: r.seed)
    n = len(recs)
    costs = np.array([r.discounted_cost for r in recs])
    dcost = np.array([r.discounted_constraint_costs for r in recs]).reshape(n, -1)
    beta = np.asarray(budgets, dtype=float)
    sat = np.all(dcost <= beta + 1e-12, axis=1) if beta.size else np.ones(n, dtype=bool)
    return McSummary(
        n_runs=n,
        failure_rate=float(np.mean([r.collided for r in recs])),
        mean_cost=float(static_risk(RiskMeasure.expectation(), costs)),
        std_error=float(costs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        cvar_cost=float(static_risk(RiskMeasure.cvar(epsilon), costs)),
        evar_cost=float(static_risk(RiskMeasure.evar(epsilon), costs)),
        risk_epsilon=float(epsilon),
        mean_constraint_costs=dcost.mean(axis=0).tolist(),
        constraint_satisfaction_rate=float(sat.mean()),
        budgets=beta.tolist(),
    )


def monte_carlo(world, controller, n_runs=100, horizon=DEFAULT_HORIZON, master_seed=0,
                observe=None, perturb=True, epsilon=0.2, keep_records=False):
    """Robustness protocol: perturb obstacles, then roll out, once per trial.

    ``world`` is a GridSpec or GridWorld. The controller is a policy array
    (the perturbed world is run as an MDP) or an Fsc (run as a POMDP,
    whose observations also come from the perturbed layout). Trial ``i``
    keys both its perturbation and its rollout on ``(master_seed, i)``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if isinstance(world, GridSpec):
        world = generate_layout(world)
    if observe is None:
        observe = isinstance(controller, Fsc)
    records = []
    for i in range(n_runs):
        trial = world
        if perturb:
            trial = perturb_obstacles(world, (master_seed, i, _PERTURB_STREAM))
        model = trial.pomdp() if observe else trial.mdp()
        records.append(rollout(model, controller, horizon, (master_seed, i, _ROLLOUT_STREAM),
                               obstacle_mask=trial.obstacles))
    summary = summarize(records, world.spec.budget if world.spec else (), epsilon)
    summary.budgets = [world.spec.budget]
    return (summary, records) if keep_records else summary


def heatmap_csv(value, policy, world):
    """CSV text with x, y, value, action_label, obstacle_flag, goal_flag."""
    spec = world.spec
    v = np.asarray(value, dtype=float).ravel()
    if v.size != spec.num_cells:
        raise ValueError(f"value has {v.size} entries, grid has {spec.num_cells} cells")
    pol = None if policy is None else np.asarray(policy, dtype=int).ravel()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "value", "action_label", "obstacle_flag", "goal_flag"])
    for s in range(spec.num_cells):
        x, y = cell_coords(spec, s)
        label = "" if pol is None else ACTION_NAMES[pol[s]]
        w.writerow([x, y, repr(float(v[s])), label, int(world.obstacles[s]),
                    int(s == world.goal_index)])
    return buf.getvalue()


def export_heatmap(value, policy, world, path):
    """Write :func:`heatmap_csv` output to ``path``."""
    text = heatmap_csv(value, policy, world)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def records_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial_seed", "steps", "discounted_cost", "discounted_constraint_costs", "collided"])
    for r in sorted(records, key=lambda r: r.seed):
        w.writerow([":".join(map(str, r.seed)), r.states.size, repr(r.discounted_cost),
                    ";".join(repr(float(x)) for x in r.discounted_constraint_costs), int(r.collided)])
    return buf.getvalue()

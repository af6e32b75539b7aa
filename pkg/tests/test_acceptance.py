"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is printed in the pytest
terminal summary, then asserts the criterion literally.
"""
import json
import time
import warnings

import numpy as np
import pytest

from riskplan.cli import main as cli_main
from riskplan.exceptions import SearchDidNotBracket
from riskplan.gridworld import GridSpec, generate_layout
from riskplan.mdp_solver import (
    SolverParams,
    bellman_backup,
    brute_force_constrained_oracle,
    risk_value_iteration,
    solve_constrained,
)
from riskplan.model import Pomdp
from riskplan.pomdp_solver import PiParams, policy_iteration
from riskplan.risk import InnerSolveParams, RiskMeasure, sigma_batch
from riskplan.sim import monte_carlo

import conftest
from conftest import random_mdp
from oracles import cvar_grid, evar_log_grid

E = RiskMeasure.expectation()
SEED = 8675309


def record(k, ok, detail, elapsed=None, limit=None):
    t = "" if elapsed is None else f" [{elapsed:.1f} s" + ("" if limit is None else f" / {limit} s") + "]"
    conftest.ACCEPTANCE_LINES.append(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}{t}")
    assert ok, detail


def random_rows(rng, n, k=5, lo=-10.0, hi=10.0):
    return rng.uniform(lo, hi, (n, k)), rng.dirichlet(np.ones(k), size=n)


def with_binding_budget(mdp, measure):
    """Same model, budget halfway between the cheapest and the unconstrained usage."""
    orc = brute_force_constrained_oracle(mdp, measure, beta=[1e9])
    d_unc = orc.constraints[np.argmin(orc.objective), 0]
    return mdp.with_budgets([0.5 * (orc.constraints[:, 0].min() + d_unc)])


@pytest.fixture(scope="module")
def small_mdps():
    rng = np.random.default_rng(SEED)
    out = []
    for _ in range(20):
        S, A = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        out.append(random_mdp(rng, S, A))
    return out


MEASURES = [E, RiskMeasure.cvar(0.2), RiskMeasure.evar(0.2)]


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_coherence_axioms():
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst = {}
    n = 1000
    for m in MEASURES:
        v, p = random_rows(rng, n)
        w = v + rng.uniform(0, 5, v.shape)
        c = rng.uniform(-20, 20, (n, 1))
        beta = rng.uniform(0, 5, (n, 1))
        beta[:10] = 0.0
        lam = rng.uniform(0, 1, (n, 1))
        s = lambda x: sigma_batch(m, x, p).value
        sv, sw = s(v), s(w)
        trans_tol = 1e-6 if m.kind.value == "evar" else 1e-8
        errs = {
            "monotonicity": np.max(sv - sw - 1e-9),
            "translation": np.max(np.abs(s(v + c) - (sv + c[:, 0]))) - trans_tol,
            "homogeneity": np.max(np.abs(s(beta * v) - beta[:, 0] * sv)) - 1e-8,
            "convexity": np.max(s(lam * v + (1 - lam) * w) - (lam[:, 0] * sv + (1 - lam[:, 0]) * sw)) - 1e-8,
        }
        worst[str(m)] = max(errs, key=errs.get), max(errs.values())
    elapsed = time.perf_counter() - t0
    ok = all(e <= 0 for _, e in worst.values()) and elapsed < 10
    record(1, ok, "coherence axioms on 1000 instances per measure; worst margin "
           + ", ".join(f"{k}: {a} {e:+.1e}" for k, (a, e) in worst.items()), elapsed, 10)


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_risk_ordering(small_mdps):
    rng = np.random.default_rng(SEED + 1)
    t0 = time.perf_counter()
    viol = 0.0
    v, p = random_rows(rng, 1000)
    for eps in (0.05, 0.2, 0.5, 0.9):
        e = sigma_batch(E, v, p).value
        c = sigma_batch(RiskMeasure.cvar(eps), v, p).value
        x = sigma_batch(RiskMeasure.evar(eps), v, p).value
        viol = max(viol, np.max(e - c), np.max(c - x), np.max(x - v.max(axis=1)))
    # computed values of the planning problem on generated instances
    params = SolverParams(vi_tol=1e-12)
    models = small_mdps + [generate_layout(GridSpec(seed=0)).mdp()]
    for mdp in models:
        for lam in (None, [rng.uniform(0, 2)]):
            vals = [risk_value_iteration(mdp, m, lam, params).value for m in MEASURES]
            viol = max(viol, np.max(vals[0] - vals[1]), np.max(vals[1] - vals[2]))
    elapsed = time.perf_counter() - t0
    ok = viol <= 1e-8 and elapsed < 10
    record(2, ok, f"E <= CVaR <= EVaR on 4000 distributions and {len(models)} models; "
           f"largest violation {viol:.1e}", elapsed, 10)


def test_inner_solve_exactness():
    rng = np.random.default_rng(SEED + 2)
    t0 = time.perf_counter()
    eps = 0.2
    cv_err = ev_err = 0.0
    golden = InnerSolveParams(method="golden")
    n = 0
    while n < 100:
        v = rng.uniform(0, 10, 5)
        p = rng.dirichlet(np.ones(5))
        # EVaR has no finite minimiser once the worst outcome carries mass
        # eps or more; keep clear of that regime so the grid can bracket it
        if p[np.argmax(v)] >= eps / 2:
            continue
        n += 1
        cv = sigma_batch(RiskMeasure.cvar(eps), v[None], p[None]).value[0]
        cv_err = max(cv_err, abs(cv - cvar_grid(v, p, eps)))
        with warnings.catch_warnings():
            warnings.simplefilter("error", SearchDidNotBracket)
            ev = sigma_batch(RiskMeasure.evar(eps), v[None], p[None], golden).value[0]
        ev_err = max(ev_err, abs(ev - evar_log_grid(v, p, eps)))
    elapsed = time.perf_counter() - t0
    ok = cv_err <= 1e-6 and ev_err <= 1e-6 and elapsed < 60
    record(3, ok, f"100 instances vs 1e6-point grids; max error CVaR {cv_err:.1e}, "
           f"EVaR (golden) {ev_err:.1e}", elapsed, 60)


def test_expectation_matches_constrained_optimum(small_mdps):
    t0 = time.perf_counter()
    errs = []
    for mdp in small_mdps:
        mdp = with_binding_budget(mdp, E)
        res = solve_constrained(mdp, E)
        errs.append(abs(res.lower_bound - brute_force_constrained_oracle(mdp, E).mixed_optimum))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-3 and elapsed < 120
    record(4, ok, f"expectation bound vs exact constrained optimum on 20 MDPs; "
           f"max error {max(errs):.1e}", elapsed, 120)


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_lower_bound_validity(small_mdps):
    t0 = time.perf_counter()
    worst = -np.inf
    count = 0
    for m in MEASURES[1:]:
        for mdp in small_mdps:
            mdp = with_binding_budget(mdp, m)
            res = solve_constrained(mdp, m)
            opt = brute_force_constrained_oracle(mdp, m).feasible_optimum
            for t in res.trace:
                worst = max(worst, t.lower_bound - opt)
                count += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 300
    record(5, ok, f"{count} dual-ascent bounds under CVaR/EVaR vs feasible optimum; "
           f"largest excess {worst:+.2e}", elapsed, 300)


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_contraction():
    rng = np.random.default_rng(SEED + 3)
    t0 = time.perf_counter()
    worst = -np.inf
    for m in MEASURES:
        for _ in range(100):
            S, A = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            mdp = random_mdp(rng, S, A, discount=rng.uniform(0.5, 0.99))
            lam = rng.uniform(0, 3, 1)
            U = rng.uniform(-20, 40, S)
            W = rng.uniform(-20, 40, S)
            bu = bellman_backup(mdp, m, lam, U).value
            bw = bellman_backup(mdp, m, lam, W).value
            worst = max(worst, np.max(np.abs(bu - bw)) - mdp.discount * np.max(np.abs(U - W)))
    elapsed = time.perf_counter() - t0
    record(6, worst <= 1e-10, f"backup contracts with modulus gamma on 300 (U, W) pairs; "
           f"largest excess {worst:+.1e}", elapsed)


def test_fsc_reduction_to_mdp():
    rng = np.random.default_rng(SEED + 4)
    t0 = time.perf_counter()
    errs = []
    for _ in range(10):
        S, A = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        mdp = with_binding_budget(random_mdp(rng, S, A), E)
        res = policy_iteration(Pomdp(mdp, np.eye(S)), E, PiParams(n_max=2))
        errs.append(abs(res.lower_bound - solve_constrained(mdp, E).lower_bound))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-3 and elapsed < 300
    record(7, ok, f"FSC bound vs MDP bound on 10 fully observable models; "
           f"max error {max(errs):.1e}", elapsed, 300)


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_controller_growth_trace():
    t0 = time.perf_counter()
    pomdp = generate_layout(GridSpec(seed=0)).pomdp()
    res = policy_iteration(pomdp, RiskMeasure.evar(0.15), PiParams(n_max=6))
    elapsed = time.perf_counter() - t0
    b = np.array([t.lower_bound for t in res.trace])
    sizes = [t.num_istates for t in res.trace]
    steps = np.diff(b)
    nondecreasing = bool(np.all(steps >= -1e-9))
    nonincreasing = bool(np.all(steps <= 1e-9))
    ok = nondecreasing and max(sizes) <= 6 and elapsed < 600
    record(8, ok, f"10x10 EVaR(0.15): |G| {sizes[0]}->{max(sizes)} (<= 6), bound "
           f"{b[0]:.6f}->{b[-1]:.6f}; nondecreasing={nondecreasing}, "
           f"nonincreasing (cost orientation)={nonincreasing}", elapsed, 600)


@pytest.mark.filterwarnings("ignore::riskplan.exceptions.SearchDidNotBracket")
def test_failure_rate_trend():
    t0 = time.perf_counter()
    world = generate_layout(GridSpec(seed=0))
    rates = {}
    for m in MEASURES:
        policy = solve_constrained(world.mdp(), m).policy
        rates[m.kind.value] = monte_carlo(world, policy, n_runs=1000, master_seed=0).failure_rate
    elapsed = time.perf_counter() - t0
    e, c, x = rates["expectation"], rates["cvar"], rates["evar"]
    ok = x <= c + 0.02 and c <= e + 0.02 and elapsed < 600
    record(9, ok, f"1000 runs per measure, eps 0.2: failure rate E {e:.3f}, CVaR {c:.3f}, "
           f"EVaR {x:.3f}", elapsed, 600)


def test_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = {"scenario": {"rows": 5, "cols": 5, "n_uncertain": 1, "seed": 1},
           "measure": {"kind": "evar", "epsilon": 0.3},
           "pi": {"n_max": 2, "max_iterations": 20},
           "mc": {"n_runs": 50, "keep_records": True},
           "output_dir": str(tmp_path / "out")}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out"

    def run_all():
        codes = [cli_main([c, str(path)]) for c in ("gen", "solve-mdp", "solve-pomdp", "export-dcp")]
        codes.append(cli_main(["simulate", str(path), str(out / "mdp_result.json")]))
        codes.append(cli_main(["simulate", str(path), str(out / "pomdp_result.json")]))
        return codes, {f.name: f.read_bytes() for f in sorted(out.iterdir())}

    codes1, first = run_all()
    codes2, second = run_all()
    differing = sorted(k for k in first if first[k] != second.get(k))
    elapsed = time.perf_counter() - t0
    ok = set(codes1 + codes2) == {0} and first.keys() == second.keys() and not differing
    record(10, ok, f"all 5 commands rerun: {len(first)} files, {len(differing)} differ "
           f"{differing}", elapsed)

"""Coherent one-step risk measures and their transition mappings.

Three measures are supported: total expectation, CVaR and EVaR, all
oriented towards *costs* (larger is worse). ``sigma`` evaluates the risk
of a value vector under a discrete distribution; ``sigma_batch`` does the
same for many rows at once and is what the solvers use in their sweeps.

CVaR is solved exactly: the inner objective over the auxiliary scalar is
piecewise linear and convex, so its minimum sits on one of the support
values. EVaR's inner objective is quasiconvex in the auxiliary scalar and
is minimised with a bracketed 1-D search (safeguarded Newton on the
stationarity condition by default, golden-section on request).
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import (
    EmptySamples,
    InvalidDistribution,
    NonFiniteValue,
    SearchDidNotBracket,
)

__all__ = [
    "RiskKind",
    "RiskMeasure",
    "InnerSolveParams",
    "SigmaBatch",
    "sigma",
    "sigma_batch",
    "frozen_sigma",
    "static_risk",
]

_PROB_TOL = 1e-9
_CONST_RANGE = 1e-12
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class RiskKind(str, enum.Enum):
    EXPECTATION = "expectation"
    CVAR = "cvar"
    EVAR = "evar"


@dataclass(frozen=True)
class RiskMeasure:
    """Tagged choice of risk measure.

    ``epsilon`` is the confidence level in (0, 1]; it is ignored for the
    expectation. Small epsilon is risk-averse, ``epsilon=1`` is risk-neutral.
    """

    kind: RiskKind = RiskKind.EXPECTATION
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RiskKind(self.kind))
        eps = float(self.epsilon)
        if not (0.0 < eps <= 1.0) or not math.isfinite(eps):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    @classmethod
    def expectation(cls):
        return cls(RiskKind.EXPECTATION, 1.0)

    @classmethod
    def cvar(cls, epsilon):
        return cls(RiskKind.CVAR, epsilon)

    @classmethod
    def evar(cls, epsilon):
        return cls(RiskKind.EVAR, epsilon)

    @classmethod
    def from_dict(cls, d):
        return cls(RiskKind(str(d["kind"]).lower()), float(d.get("epsilon", 1.0)))

    def to_dict(self):
        return {"kind": self.kind.value, "epsilon": self.epsilon}

    def __str__(self):
        if self.kind is RiskKind.EXPECTATION:
            return "expectation"
        return f"{self.kind.value}({self.epsilon:g})"


@dataclass(frozen=True)
class InnerSolveParams:
    """Controls for the EVaR inner search.

    The search interval for the auxiliary scalar is
    ``(tol, zeta_max / (max|v| + 1)]``; ``tol`` is also the relative
    stopping tolerance of the search.
    """

    zeta_max: float = 1e4
    tol: float = 1e-10
    max_iters: int = 200
    method: str = "newton"

    def __post_init__(self):
        if not self.zeta_max > 0:
            raise ValueError("zeta_max must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("newton", "golden"):
            raise ValueError(f"unknown EVaR search method {self.method!r}")


DEFAULT_INNER = InnerSolveParams()


class SigmaBatch(NamedTuple):
    """Row-wise result of :func:`sigma_batch`.

    ``zeta`` is the inner minimiser (nan for the expectation, inf where the
    EVaR infimum is only approached as the scalar grows without bound);
    ``capped`` flags EVaR rows where the search cap was active.
    """

    value: np.ndarray
    zeta: np.ndarray
    capped: np.ndarray


def _check_rows(values, probs):
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    if probs.ndim == 1:
        probs = probs[None, :]
    if values.shape != probs.shape:
        raise InvalidDistribution(
            f"values shape {values.shape} does not match distribution shape {probs.shape}"
        )
    return values, probs


def sigma_batch(measure, values, probs, params=None, zeta0=None):
    """Evaluate the risk transition mapping on every row.

    Parameters
    ----------
    measure : RiskMeasure
    values : ndarray, shape (B, K)
        Successor values, one row per evaluation.
    probs : ndarray, shape (B, K)
        Row distributions. Zero-probability entries are ignored, which lets
        callers pad ragged supports with zeros.
    params : InnerSolveParams, optional
    zeta0 : ndarray, shape (B,), optional
        Starting guesses for the EVaR search, typically the ``zeta`` of a
        previous call on nearby rows. Non-finite entries are ignored.

    Returns
    -------
    SigmaBatch
    """
    params = params or DEFAULT_INNER
    values, probs = _check_rows(values, probs)
    mask = probs > 0.0
    if not np.all(np.isfinite(values[mask])):
        raise NonFiniteValue("risk of a non-finite value is undefined")
    if values.shape[1] == 0 or not np.all(mask.any(axis=1)):
        raise InvalidDistribution("every row needs at least one positive-probability entry")
    values = np.where(mask, values, 0.0)

    kind = measure.kind
    if kind is RiskKind.EXPECTATION:
        val = np.einsum("bk,bk->b", np.where(mask, values, 0.0), probs)
        n = values.shape[0]
        return SigmaBatch(val, np.full(n, np.nan), np.zeros(n, dtype=bool))

    vmax = np.where(mask, values, -np.inf).max(axis=1)
    vmin = np.where(mask, values, np.inf).min(axis=1)
    if kind is RiskKind.CVAR:
        val, zeta = _cvar_rows(values, probs, mask, measure.epsilon)
        capped = np.zeros(values.shape[0], dtype=bool)
    else:
        val, zeta, capped = _evar_rows(values, probs, mask, vmax, vmin, measure.epsilon, params, zeta0)
    # A coherent risk of a finite-support variable lies inside its support.
    val = np.minimum(np.maximum(val, vmin), vmax)
    return SigmaBatch(val, zeta, capped)


def _cvar_rows(values, probs, mask, eps):
    # Objective at every breakpoint zeta = v_j; pad entries are excluded.
    n, k = values.shape
    out = np.empty(n)
    arg = np.empty(n)
    chunk = max(1, int(2e7 // max(1, k * k)))
    inv = 1.0 / eps
    for lo in range(0, n, chunk):
        v = values[lo:lo + chunk]
        p = probs[lo:lo + chunk]
        m = mask[lo:lo + chunk]
        excess = np.maximum(v[:, None, :] - v[:, :, None], 0.0)
        obj = v + inv * np.einsum("bjk,bk->bj", excess, p)
        obj = np.where(m, obj, np.inf)
        j = np.argmin(obj, axis=1)
        rows = np.arange(v.shape[0])
        out[lo:lo + chunk] = obj[rows, j]
        arg[lo:lo + chunk] = v[rows, j]
    return out, arg


def _log_mgf(d, p, zeta):
    """log E[exp(zeta * d)] for d <= 0, accurate for both tiny and large zeta."""
    x = zeta[:, None] * d
    s = np.einsum("bk,bk->b", p, np.exp(x))
    with np.errstate(divide="ignore"):
        small = np.log1p(np.einsum("bk,bk->b", p, np.expm1(x)))
        large = np.log(s)
    return np.where(s > 0.5, small, large), s


def _evar_objective(d, p, vmax, zeta, log_eps):
    k, _ = _log_mgf(d, p, zeta)
    return vmax + (k - log_eps) / zeta


def _evar_rows(values, probs, mask, vmax, vmin, eps, params, zeta0=None):
    n = values.shape[0]
    val = np.empty(n)
    zeta = np.full(n, np.inf)
    capped = np.zeros(n, dtype=bool)

    if eps >= 1.0:
        # Risk-neutral limit: the infimum is approached as zeta -> 0.
        val[:] = np.einsum("bk,bk->b", np.where(mask, values, 0.0), probs)
        zeta[:] = 0.0
        return val, zeta, capped

    d = np.where(mask, values - vmax[:, None], 0.0)
    p = np.where(mask, probs, 0.0)
    p = p / p.sum(axis=1, keepdims=True)
    log_eps = math.log(eps)

    const = (vmax - vmin) < _CONST_RANGE
    p_top = np.where(mask & (d == 0.0), p, 0.0).sum(axis=1)
    # If the worst outcome already carries mass >= eps the infimum is vmax,
    # reached only in the limit zeta -> inf.
    at_max = const | (p_top >= eps)
    val[at_max] = vmax[at_max]

    live = ~at_max
    if not np.any(live):
        return val, zeta, capped
    idx = np.nonzero(live)[0]
    dl, pl, vl = d[idx], p[idx], vmax[idx]
    scale = np.maximum(np.abs(values[idx]).max(axis=1, where=mask[idx], initial=0.0), 0.0) + 1.0
    z_hi = params.zeta_max / scale
    z_lo = np.minimum(params.tol / scale, z_hi * 1e-3)

    if params.method == "golden":
        z, hit_cap = _evar_golden(dl, pl, vl, z_lo, z_hi, log_eps, params)
    else:
        guess = None if zeta0 is None else np.asarray(zeta0, dtype=float)[idx]
        z, hit_cap = _evar_newton(dl, pl, z_lo, z_hi, log_eps, params, guess)
    val[idx] = _evar_objective(dl, pl, vl, z, log_eps)
    zeta[idx] = z
    capped[idx] = hit_cap
    return val, zeta, capped


def _stationarity(d, p, zeta, log_eps):
    """r(zeta) = zeta*E_q[d] - log E[e^{zeta d}] + log eps and dr/dlog(zeta).

    r is nondecreasing in zeta; its root is the EVaR minimiser.
    """
    x = zeta[:, None] * d
    w = p * np.exp(x)
    s = w.sum(axis=1)
    q = w / s[:, None]
    mean = np.einsum("bk,bk->b", q, d)
    var = np.einsum("bk,bk->b", q, (d - mean[:, None]) ** 2)
    k, _ = _log_mgf(d, p, zeta)
    r = zeta * mean - k + log_eps
    return r, zeta * zeta * var


def _evar_newton(d, p, z_lo, z_hi, log_eps, params, guess=None):
    u_lo = np.log(z_lo)
    u_hi = np.log(z_hi)
    r_hi, _ = _stationarity(d, p, z_hi, log_eps)
    hit_cap = r_hi < 0.0

    # Small-zeta expansion r ~ log(eps) + zeta^2 Var/2 gives the first guess.
    mean0 = np.einsum("bk,bk->b", p, d)
    var0 = np.einsum("bk,bk->b", p, (d - mean0[:, None]) ** 2)
    u = 0.5 * np.log(np.maximum(-2.0 * log_eps / np.maximum(var0, 1e-300), 1e-300))
    if guess is not None:
        ok = np.isfinite(guess) & (guess > 0.0)
        u = np.where(ok, np.log(np.where(ok, guess, 1.0)), u)
    u = np.clip(u, u_lo, u_hi)
    u = np.where(hit_cap, u_hi, u)

    active = ~hit_cap
    for _ in range(int(params.max_iters)):
        if not np.any(active):
            break
        ia = np.nonzero(active)[0]
        r, dr = _stationarity(d[ia], p[ia], np.exp(u[ia]), log_eps)
        lo = np.where(r < 0.0, u[ia], u_lo[ia])
        hi = np.where(r > 0.0, u[ia], u_hi[ia])
        u_lo[ia] = lo
        u_hi[ia] = hi
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = np.where(dr > 0.0, -r / dr, np.nan)
        # a sub-tolerance Newton step means converged, even when round-off
        # in r has already moved the bracket onto the current point
        tiny = np.isfinite(step) & (np.abs(step) <= params.tol * np.maximum(1.0, np.abs(u[ia])))
        cand = u[ia] + step
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        cand = np.where(tiny, u[ia], np.where(bad, 0.5 * (lo + hi), cand))
        moved = np.abs(cand - u[ia])
        u[ia] = cand
        done = tiny | (moved <= params.tol * np.maximum(1.0, np.abs(cand))) | (r == 0.0) | (
            hi - lo <= params.tol
        )
        active[ia[done]] = False
    return np.exp(u), hit_cap


def _evar_golden(d, p, vmax, z_lo, z_hi, log_eps, params):
    a = np.log(z_lo)
    b = np.log(z_hi)

    def f(u):
        return _evar_objective(d, p, vmax, np.exp(u), log_eps)

    c = b - _INV_PHI * (b - a)
    e = a + _INV_PHI * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(int(params.max_iters)):
        if np.all(b - a <= params.tol * np.maximum(1.0, np.abs(a))):
            break
        left = fc <= fe
        # left: minimiser in [a, e]; otherwise in [c, b]
        b = np.where(left, e, b)
        a = np.where(left, a, c)
        new_c = b - _INV_PHI * (b - a)
        new_e = a + _INV_PHI * (b - a)
        c_next = np.where(left, new_c, e)
        e_next = np.where(left, c, new_e)
        fc_next = np.where(left, np.nan, fe)
        fe_next = np.where(left, fc, np.nan)
        need_c = np.isnan(fc_next)
        need_e = np.isnan(fe_next)
        fc_next = np.where(need_c, f(c_next), fc_next)
        fe_next = np.where(need_e, f(e_next), fe_next)
        c, e, fc, fe = c_next, e_next, fc_next, fe_next
    u = np.where(fc <= fe, c, e)
    u_top = np.log(z_hi)
    hit_cap = (u_top - u) <= 1e-6 * np.maximum(1.0, np.abs(u_top))
    return np.exp(u), hit_cap


def _check_distribution(values, dist):
    v = np.asarray(values, dtype=float).ravel()
    p = np.asarray(dist, dtype=float).ravel()
    if v.shape != p.shape:
        raise InvalidDistribution(f"{v.size} values but {p.size} probabilities")
    if v.size == 0:
        raise InvalidDistribution("empty distribution")
    if not np.all(np.isfinite(p)) or np.any(p < -_PROB_TOL) or abs(p.sum() - 1.0) > _PROB_TOL:
        raise InvalidDistribution("probabilities must be nonnegative and sum to 1")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("values must be finite")
    return v, np.clip(p, 0.0, None)


def sigma(measure, values, dist, params=None):
    """Risk of ``values`` under ``dist`` for a single distribution.

    >>> sigma(RiskMeasure.cvar(1.0), [3, 7], [0.4, 0.6])
    5.4
    """
    v, p = _check_distribution(values, dist)
    res = sigma_batch(measure, v, p, params)
    if res.capped[0]:
        warnings.warn(
            "EVaR search reached zeta_max; value is an upper estimate", SearchDidNotBracket, stacklevel=2
        )
    return float(res.value[0])


def frozen_sigma(measure, zeta, values, probs):
    """Inner objective of the measure evaluated at a fixed auxiliary scalar.

    For any ``zeta`` this upper-bounds the true risk; at the inner minimiser
    it equals it. Non-finite ``zeta`` (EVaR limit rows) falls back to the
    support maximum.
    """
    values, probs = _check_rows(values, probs)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (values.shape[0],))
    mask = probs > 0.0
    if measure.kind is RiskKind.EXPECTATION:
        return np.einsum("bk,bk->b", np.where(mask, values, 0.0), probs)
    if measure.kind is RiskKind.CVAR:
        excess = np.maximum(np.where(mask, values, 0.0) - zeta[:, None], 0.0)
        return zeta + np.einsum("bk,bk->b", excess, probs) / measure.epsilon
    vmax = np.where(mask, values, -np.inf).max(axis=1)
    out = vmax.copy()
    ok = np.isfinite(zeta) & (zeta > 0)
    if np.any(ok):
        d = np.where(mask, values - vmax[:, None], 0.0)[ok]
        k, _ = _log_mgf(d, probs[ok], zeta[ok])
        out[ok] = vmax[ok] + (k - math.log(measure.epsilon)) / zeta[ok]
    zero = zeta == 0.0
    if np.any(zero):
        out[zero] = np.einsum("bk,bk->b", np.where(mask, values, 0.0), probs)[zero]
    return out


def static_risk(measure, samples, params=None):
    """Empirical risk of realised costs under the uniform distribution.

    >>> static_risk(RiskMeasure.cvar(0.5), [0.0, 10.0])
    10.0
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySamples("static_risk needs at least one sample")
    return sigma(measure, x, np.full(x.size, 1.0 / x.size), params)

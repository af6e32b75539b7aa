"""Input coercion helpers in the spirit of ``sklearn.utils.validation``.

Each ``check_*`` accepts the loose forms users actually pass (objects,
dicts, JSON paths, plain arrays) and returns the canonical validated
object, raising a package exception otherwise.
"""
from __future__ import annotations

import os

import numpy as np

from .exceptions import ConfigError, DimensionMismatch, InvalidDistribution
from .model import Fsc, Mdp, Pomdp, check_compatible, ensure_valid, from_dict, load_json
from .risk import RiskKind, RiskMeasure

__all__ = ["check_distribution", "check_measure", "check_mdp", "check_pomdp", "check_fsc"]


def check_distribution(p, size=None, tol=1e-9, name="distribution"):
    """Return ``p`` as a float vector after checking it is a probability vector."""
    a = np.asarray(p, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise InvalidDistribution(f"{name} must be a nonempty vector")
    if size is not None and a.size != size:
        raise InvalidDistribution(f"{name} has {a.size} entries, expected {size}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise InvalidDistribution(f"{name} has negative or non-finite entries")
    if abs(a.sum() - 1.0) > tol:
        raise InvalidDistribution(f"{name} sums to {a.sum():.12g}, not 1")
    return a


def check_measure(measure, epsilon=None):
    """Accept a RiskMeasure, a config dict, or a kind name plus ``epsilon``."""
    if isinstance(measure, RiskMeasure):
        return measure
    try:
        if isinstance(measure, dict):
            return RiskMeasure.from_dict(measure)
        kind = RiskKind(str(measure).lower())
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"unknown risk measure {measure!r}") from exc
    if kind is RiskKind.EXPECTATION:
        return RiskMeasure.expectation()
    if epsilon is None:
        raise ConfigError(f"{kind.value} needs an epsilon")
    try:
        return RiskMeasure(kind, float(epsilon))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load(x):
    if isinstance(x, (str, os.PathLike)):
        return load_json(x)
    if isinstance(x, dict):
        return from_dict(x)
    return x


def check_mdp(x):
    """Return a validated Mdp from an Mdp, a Pomdp (its MDP), a dict or a path."""
    m = _load(x)
    if isinstance(m, Pomdp):
        m = m.mdp
    if not isinstance(m, Mdp):
        raise DimensionMismatch(f"expected an MDP, got {type(m).__name__}")
    return ensure_valid(m)


def check_pomdp(x):
    m = _load(x)
    if not isinstance(m, Pomdp):
        raise DimensionMismatch(f"expected a POMDP, got {type(m).__name__}")
    return ensure_valid(m)


def check_fsc(x, pomdp=None):
    f = _load(x)
    if not isinstance(f, Fsc):
        raise DimensionMismatch(f"expected a controller, got {type(f).__name__}")
    ensure_valid(f)
    if pomdp is not None:
        check_compatible(pomdp, f)
    return f

"""
Price model, log utility and wealth simulation
==============================================

The risky asset is ``S_t = s0 * exp(W_t + b t)``, so ``dS/S = dW + (b + 1/2) dt``
and the log-optimal fraction of an agent who sees drift ``mu`` in ``W`` is
``b + 1/2 + mu``.  Strategies are wealth fractions; one grid step multiplies
wealth by ``1 + pi * (S_{i+1}/S_i - 1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .drift_catalog import DriftEvaluator
from .errors import AdmissibilityError, ParameterError
from .stochastic_core import SamplePath

Array = np.ndarray

__all__ = [
    "MarketModel",
    "UtilityReport",
    "PathState",
    "uninformed_utility",
    "uninformed_fraction",
    "insider_fraction",
    "simulate_log_wealth",
    "log_wealth_paths",
    "paired_log_wealth_gain",
    "paired_gain_from_increments",
]


@dataclass(frozen=True)
class MarketModel:
    s0: float = 1.0
    b: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.s0 > 0 and math.isfinite(self.s0)):
            raise ParameterError(f"s0 must be positive, got {self.s0!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ParameterError(f"T must be positive, got {self.T!r}")
        if not math.isfinite(self.b):
            raise ParameterError("b must be finite")

    @property
    def risk_premium(self) -> float:
        """Drift of ``dS/S`` per unit quadratic variation: ``b + 1/2``."""
        return self.b + 0.5

    def log_price(self, t, w):
        return math.log(self.s0) + np.asarray(w) + self.b * np.asarray(t)


@dataclass(frozen=True)
class UtilityReport:
    """Analytic versus Monte Carlo utility increment for one case."""

    u_uninformed: float
    u_insider: float
    increment_analytic: float
    increment_mc: float
    stderr_mc: float
    n_paths: int
    verdict: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.verdict.get("pass", False))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        # repr-exact floats; json emits shortest round-trip reprs
        return json.dumps(self.to_dict(), allow_nan=True)


class PathState(NamedTuple):
    """What a strategy may look at on grid point ``index``."""

    index: int
    w: float
    running_max: float
    signal: Optional[float] = None


def uninformed_utility(model: MarketModel, x: float) -> float:
    """Maximal expected log utility ``log x + (b + 1/2)^2 T / 2`` without inside information."""
    if not x > 0:
        raise ParameterError(f"initial wealth must be positive, got {x!r}")
    return math.log(x) + 0.5 * model.risk_premium ** 2 * model.T


def uninformed_fraction(model: MarketModel) -> Callable[[float, PathState], float]:
    premium = model.risk_premium
    return lambda t, state: premium


def insider_fraction(model: MarketModel, drift: DriftEvaluator) -> Callable[[float, PathState], float]:
    """Log-optimal fraction ``b + 1/2 + mu_t`` for an agent seeing ``drift``."""
    premium = model.risk_premium

    def fraction(t: float, state: PathState) -> float:
        return premium + float(drift.evaluate(t, state.w, state.signal, state.running_max))

    fraction.drift = drift
    return fraction


def log_wealth_paths(w: Array, times: Array, model: MarketModel, fractions: Array,
                     x: float = 1.0) -> tuple[Array, Array]:
    """Terminal log wealth for many paths at once.

    ``w`` is (paths, points) and ``fractions`` (paths, points - 1) holds the
    fraction held over each grid interval.  Returns ``(log_wealth, ok)``;
    paths whose wealth factor reaches zero or below get ``ok = False`` and
    NaN log wealth.
    """
    if not x > 0:
        raise ParameterError(f"initial wealth must be positive, got {x!r}")
    w = np.atleast_2d(w)
    fractions = np.atleast_2d(fractions)
    growth = np.expm1(np.diff(w, axis=1) + model.b * np.diff(times))
    with np.errstate(invalid="ignore"):
        step = fractions * growth
        ok = np.all(step > -1.0, axis=1) & np.all(np.isfinite(step), axis=1)
        step = np.where(step > -1.0, step, np.nan)
    log_x = math.log(x) + np.sum(np.log1p(step), axis=1)
    log_x[~ok] = np.nan
    return log_x, ok


def paired_log_wealth_gain(w: Array, times: Array, model: MarketModel,
                           mu: Array) -> tuple[Array, Array]:
    """``log X^insider_T - log X^uninformed_T`` on the same paths.

    The insider holds ``b + 1/2 + mu`` and the uninformed agent ``b + 1/2``;
    ``mu`` is (paths, points - 1).  Each step contributes
    ``log1p(mu R / (1 + p R))`` with ``R = S_{i+1}/S_i - 1``, which equals
    the difference of the two log wealth factors in one pass.
    """
    w = np.atleast_2d(w)
    return paired_gain_from_increments(np.diff(w, axis=1), np.diff(times), model, mu)


def paired_gain_from_increments(dw: Array, dt: Array, model: MarketModel,
                                mu: Array) -> tuple[Array, Array]:
    """Same as :func:`paired_log_wealth_gain` given the Brownian increments ``dw``.

    ``dw`` is left untouched, so one set of increments can serve several
    market models.
    """
    mu = np.atleast_2d(mu)
    if model.b:
        growth = dw + model.b * dt
        np.expm1(growth, out=growth)
    else:
        growth = np.expm1(dw)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        ratio = np.multiply(mu, growth)
        # growth becomes the uninformed factor 1 + p R in place
        growth *= model.risk_premium
        growth += 1.0
        ratio /= growth
        # the insider's factor is plain * (1 + ratio); both must be positive
        ok = (ratio > -1.0).all(axis=1) & (growth > 0.0).all(axis=1)
        np.log1p(ratio, out=ratio)
    gain = ratio.sum(axis=1)
    ok &= np.isfinite(gain)
    gain[~ok] = np.nan
    return gain, ok


def simulate_log_wealth(path: SamplePath, model: MarketModel,
                        fraction: Callable[[float, PathState], float], x: float = 1.0,
                        signal=None) -> float:
    """``log X_T`` along one path when ``fraction(t_i, state_i)`` of wealth is in the asset.

    ``signal`` is handed to the strategy through ``PathState`` (per grid
    point if it is an array).

    Raises
    ------
    AdmissibilityError
        If a wealth factor ``1 + pi (S_{i+1}/S_i - 1)`` is not positive.
    """
    if not x > 0:
        raise ParameterError(f"initial wealth must be positive, got {x!r}")
    times = path.grid.times
    sig = np.broadcast_to(np.asarray(signal if signal is not None else np.nan, float), times.shape)
    pis = np.array([
        fraction(float(times[i]), PathState(i, float(path.w[i]), float(path.running_max[i]),
                                            None if signal is None else float(sig[i])))
        for i in range(times.size - 1)
    ])
    log_x, ok = log_wealth_paths(path.w, times, model, pis, x)
    if not ok[0]:
        raise AdmissibilityError("wealth became non-positive along the path")
    return float(log_x[0])

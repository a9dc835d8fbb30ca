"""
Closed-form information drifts
==============================

Each evaluator maps ``(t, W_t, insider signal[, running max])`` to the
drift the insider sees in the driving Brownian motion on ``[0, 1]``:

* ``NoisyTerminal``       signal ``G = W_1 + Y`` with ``Y ~ N(0, w)``
* ``RunningMaxIndicator`` signal ``G = 1{max_{s<=1} W_s <= c}``
* ``TerminalPartition``   signal = index of the bin containing ``W_1``
* ``DynamicNoise``        signal ``G_t = W_1 + B~_{g(1-t)}``

``evaluate`` is strict and raises on singular or impossible states.
``along`` is the vectorized path form used by the Monte Carlo engine; it
marks such states with NaN instead of raising so that single paths can be
aborted and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .errors import InconsistentStateError, ParameterError, SingularityError
from .stochastic_core import PathBlock, TimeGrid

Array = np.ndarray

__all__ = [
    "NoiseClock",
    "DriftEvaluator",
    "NoisyTerminal",
    "RunningMaxIndicator",
    "TerminalPartition",
    "DynamicNoise",
    "noisy_terminal_drift",
    "running_max_drift",
    "terminal_partition_drift",
    "dynamic_noise_drift",
    "drift_from_config",
    "gaussian_bin_ratio",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ------------------------------- Noise clocks ------------------------------ #

@dataclass(frozen=True)
class NoiseClock:
    """The noise clock ``g(y) = C * y**p`` (``constant``: ``g = v``).

    ``sqrt`` is the power family with ``C = 1, p = 1/2``.  Instances are
    plain data so they pickle across worker processes.
    """

    family: str
    C: float = 1.0
    p: float = 1.0
    v: float = 1.0

    def __post_init__(self):
        if self.family == "sqrt":
            object.__setattr__(self, "family", "power")
            object.__setattr__(self, "C", 1.0)
            object.__setattr__(self, "p", 0.5)
        if self.family == "power":
            if not (self.C > 0 and self.p > 0):
                raise ParameterError("power clock needs C > 0 and p > 0")
        elif self.family == "constant":
            if not self.v >= 0:
                raise ParameterError("constant clock needs v >= 0")
        else:
            raise ParameterError(f"unknown noise clock family {self.family!r}")

    @classmethod
    def power(cls, C: float, p: float) -> "NoiseClock":
        return cls("power", C=C, p=p)

    @classmethod
    def sqrt(cls) -> "NoiseClock":
        return cls("sqrt")

    @classmethod
    def constant(cls, v: float) -> "NoiseClock":
        return cls("constant", v=v)

    @classmethod
    def from_config(cls, family: str, **params: Any) -> "NoiseClock":
        family = {"const": "constant"}.get(family, family)
        keep = {k: float(params[k]) for k in ("C", "p", "v") if params.get(k) is not None}
        return cls(family, **keep)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            return np.full_like(y, self.v)[()]
        return (self.C * np.power(y, self.p))[()]

    def describe(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "v": self.v}
        return {"family": "power", "C": self.C, "p": self.p}


# ------------------------------ Shared helpers ----------------------------- #

def _check_horizon(grid: TimeGrid) -> None:
    if grid.T != 1.0:
        raise ParameterError("catalog drifts live on [0, 1]; grid horizon must be 1")


def _bin_ratio_lower(za: Array, zb: Array) -> Array:
    """``(phi(za) - phi(zb)) / (Phi(zb) - Phi(za))`` assuming ``za + zb <= 0``."""
    out = np.empty(np.broadcast(za, zb).shape)
    za, zb = np.broadcast_arrays(za, zb)
    below = zb <= 0
    # bin entirely below the current point: scale by the nearer edge
    if np.any(below):
        p = -zb[below]
        q = -za[below]
        with np.errstate(invalid="ignore", over="ignore"):
            r_m1 = np.expm1(-0.5 * (q - p) * (q + p))
            r = np.where(np.isinf(q), 0.0, r_m1 + 1.0)
            r_m1 = np.where(np.isinf(q), -1.0, r_m1)
            tail_q = np.where(np.isinf(q), 0.0, special.erfcx(q / _SQRT2) * r)
            denom = special.erfcx(p / _SQRT2) - tail_q
        out[below] = _SQRT_2_OVER_PI * r_m1 / denom
    mixed = ~below
    if np.any(mixed):
        a = za[mixed]
        b = zb[mixed]
        num = _INV_SQRT_2PI * (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b))
        den = 0.5 * (special.erfc(-b / _SQRT2) - special.erfc(-a / _SQRT2))
        out[mixed] = num / den
    return out


def gaussian_bin_ratio(za, zb):
    """Stable ``(phi(za) - phi(zb)) / (Phi(zb) - Phi(za))`` for ``za < zb``.

    Infinite edges follow ``phi(+-inf) = 0``.  The computation is arranged
    so that ``gaussian_bin_ratio(-zb, -za) == -gaussian_bin_ratio(za, zb)``
    holds bit for bit.
    """
    za = np.asarray(za, dtype=float)
    zb = np.asarray(zb, dtype=float)
    za, zb = np.broadcast_arrays(za, zb)
    with np.errstate(invalid="ignore"):
        upper = (za + zb) > 0
    out = np.empty(za.shape)
    if np.any(upper):
        out[upper] = -_bin_ratio_lower(-zb[upper], -za[upper])
    lower = ~upper
    if np.any(lower):
        out[lower] = _bin_ratio_lower(za[lower], zb[lower])
    return out[()]


def _strict(mu, what: str):
    mu = np.asarray(mu, dtype=float)
    if np.any(~np.isfinite(mu)):
        raise SingularityError(f"{what}: drift is not finite at the requested state")
    return mu[()]


# ------------------------------- Evaluators -------------------------------- #

@dataclass(frozen=True)
class DriftEvaluator:
    """Base class: an information drift on ``[0, 1]`` with its insider signal."""

    kind: ClassVar[str] = ""
    needs_aux: ClassVar[bool] = False
    exact_max: ClassVar[bool] = False
    n_extra: ClassVar[int] = 0

    @property
    def singular_at_horizon(self) -> bool:
        """Whether the drift blows up at ``t = 1``."""
        return True

    @property
    def time_dependent_signal(self) -> bool:
        return False

    def aux_clock(self, times: Array) -> Optional[Array]:
        return None

    def params(self) -> dict:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def signal(self, block: PathBlock) -> Array:
        """The insider signal for each path (per grid time if it evolves)."""
        raise NotImplementedError

    def _mu(self, t, w, signal, running_max) -> Array:
        raise NotImplementedError

    def evaluate(self, t, w, signal, running_max=None):
        """Drift at time ``t`` for path value ``w`` and insider ``signal``."""
        raise NotImplementedError

    def along(self, block: PathBlock, signal: Optional[Array] = None) -> Array:
        """Drift at every grid point of every path in ``block``.

        Returns an array shaped like ``block.w``; NaN marks states where the
        drift is undefined (including ``t = 1`` for singular drifts).
        """
        _check_horizon(block.grid)
        if signal is None:
            signal = self.signal(block)
        t = block.grid.times[None, :]
        sig = signal if self.time_dependent_signal else np.asarray(signal)[:, None]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            mu = self._mu(t, block.w, sig, block.running_max)
        return np.asarray(np.broadcast_to(mu, block.w.shape), dtype=float)


@dataclass(frozen=True)
class NoisyTerminal(DriftEvaluator):
    """Insider knows ``W_1 + Y`` with independent ``Y ~ N(0, w)``."""

    w: float = 1.0
    kind: ClassVar[str] = "noisy-terminal"
    n_extra: ClassVar[int] = 1

    def __post_init__(self):
        if not (self.w >= 0 and math.isfinite(self.w)):
            raise ParameterError(f"noise variance w must be >= 0, got {self.w!r}")

    @property
    def singular_at_horizon(self) -> bool:
        return self.w == 0

    def params(self) -> dict:
        return {"w": self.w}

    def signal(self, block: PathBlock) -> Array:
        return block.w[:, -1] + math.sqrt(self.w) * block.extra[:, 0]

    def _mu(self, t, w, signal, running_max=None):
        denom = 1.0 - t + self.w
        return np.where(denom > 0, (signal - w) / np.where(denom > 0, denom, np.nan), np.nan)

    def evaluate(self, t, w, signal, running_max=None):
        if np.any(np.asarray(t) > 1):
            raise ParameterError("t must lie in [0, 1]")
        if self.w == 0 and np.any(np.asarray(t) >= 1):
            raise SingularityError("bridge drift (w = 0) is singular at t = 1")
        return _strict(self._mu(np.asarray(t, float), np.asarray(w, float), np.asarray(signal, float)),
                       self.kind)


@dataclass(frozen=True)
class RunningMaxIndicator(DriftEvaluator):
    """Insider knows whether the path maximum on ``[0, 1]`` stays within ``[0, c]``.

    The conditional law of the future maximum uses the reflection principle
    ``P(sup_{s<=tau} B_s <= z) = 2 Phi(z / sqrt(tau)) - 1``.
    """

    c: float = 1.0
    kind: ClassVar[str] = "running-max"
    exact_max: ClassVar[bool] = True

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ParameterError(f"level c must be positive, got {self.c!r}")

    def params(self) -> dict:
        return {"c": self.c}

    def signal(self, block: PathBlock) -> Array:
        return (block.running_max[:, -1] <= self.c).astype(float)

    def _mu(self, t, w, signal, running_max):
        tau = 1.0 - t
        sq = np.sqrt(np.where(tau > 0, tau, np.nan))
        u = (self.c - w) / sq
        crossed = running_max > self.c
        below_side = -(2.0 / sq) * (_INV_SQRT_2PI * np.exp(-0.5 * u * u)) / special.erf(u / _SQRT2)
        below_side = np.where(u > 0, below_side, np.nan)
        above_side = _SQRT_2_OVER_PI / (sq * special.erfcx(u / _SQRT2))
        mu_g1 = np.where(crossed, np.nan, below_side)
        mu_g0 = np.where(crossed, 0.0, above_side)
        return np.where(signal == 1, mu_g1, mu_g0)

    def evaluate(self, t, w, signal, running_max=None):
        t = np.asarray(t, float)
        w = np.asarray(w, float)
        signal = np.asarray(signal, float)
        if running_max is None:
            raise ParameterError("running-max drift needs the running maximum W*_t")
        running_max = np.asarray(running_max, float)
        if np.any((t < 0) | (t > 1)):
            raise ParameterError("t must lie in [0, 1]")
        if np.any(~np.isin(signal, (0.0, 1.0))):
            raise ParameterError("running-max signal must be 0 or 1")
        if np.any(running_max < w):
            raise InconsistentStateError("running maximum below current value")
        crossed = running_max > self.c
        if np.any((signal == 1) & crossed):
            raise InconsistentStateError("G = 1 but the level was already crossed")
        live = ~((signal == 0) & crossed)
        if np.any(live & (t >= 1)):
            raise SingularityError("running-max drift is singular at t = 1")
        if np.any((signal == 1) & (w >= self.c)):
            raise SingularityError("G = 1 with W_t at the level has probability zero")
        with np.errstate(divide="ignore", invalid="ignore"):
            return _strict(self._mu(t, w, signal, running_max), self.kind)


@dataclass(frozen=True)
class TerminalPartition(DriftEvaluator):
    """Insider knows which bin ``(a_{k-1}, a_k]`` of the thresholds holds ``W_1``."""

    thresholds: tuple = (0.0,)
    kind: ClassVar[str] = "terminal-partition"

    def __post_init__(self):
        thr = tuple(float(a) for a in self.thresholds)
        if any(not math.isfinite(a) for a in thr):
            raise ParameterError("thresholds must be finite")
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ParameterError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "_edges", np.array((-math.inf, *thr, math.inf)))

    @property
    def n_bins(self) -> int:
        return len(self.thresholds) + 1

    def params(self) -> dict:
        return {"thresholds": list(self.thresholds)}

    def bin_of(self, x) -> Array:
        return np.searchsorted(np.asarray(self.thresholds), x, side="left")

    def signal(self, block: PathBlock) -> Array:
        return self.bin_of(block.w[:, -1])

    def _mu(self, t, w, signal, running_max=None):
        tau = 1.0 - t
        sq = np.sqrt(np.where(tau > 0, tau, np.nan))
        k = np.asarray(signal).astype(int)
        shape = np.broadcast(sq, w, k).shape
        sq = np.broadcast_to(sq, shape)
        w = np.broadcast_to(w, shape)
        k = np.broadcast_to(k, shape)
        out = np.full(shape, np.nan)
        last = self.n_bins - 1
        # outer bins reduce to a Mills ratio; reflection negates exactly
        lowest = k == 0
        if np.any(lowest):
            zb = (self._edges[1] - w[lowest]) / sq[lowest]
            out[lowest] = -_SQRT_2_OVER_PI / special.erfcx(-zb / _SQRT2) / sq[lowest]
        highest = k == last
        if np.any(highest):
            za = (self._edges[last] - w[highest]) / sq[highest]
            out[highest] = _SQRT_2_OVER_PI / special.erfcx(za / _SQRT2) / sq[highest]
        inner = ~(lowest | highest)
        if np.any(inner):
            ki = k[inner]
            wi = w[inner]
            si = sq[inner]
            out[inner] = gaussian_bin_ratio((self._edges[ki] - wi) / si,
                                            (self._edges[ki + 1] - wi) / si) / si
        return out

    def evaluate(self, t, w, signal, running_max=None):
        t = np.asarray(t, float)
        k = np.asarray(signal)
        if np.any((t < 0) | (t > 1)):
            raise ParameterError("t must lie in [0, 1]")
        if np.any((k < 0) | (k >= self.n_bins)) or np.any(k != np.floor(k)):
            raise InconsistentStateError("signal does not name a bin of the partition")
        if self.n_bins > 1 and np.any(t >= 1):
            raise SingularityError("partition drift is singular at t = 1")
        if self.n_bins == 1:
            return (np.zeros(np.broadcast(t, np.asarray(w)).shape))[()]
        return _strict(self._mu(t, np.asarray(w, float), k), self.kind)

    def along(self, block: PathBlock, signal: Optional[Array] = None) -> Array:
        _check_horizon(block.grid)
        if self.n_bins == 1:
            return np.zeros_like(block.w)
        if signal is None:
            signal = self.signal(block)
        k = np.asarray(signal).astype(int)
        # the bin is fixed per path, so work on whole rows bin by bin; the
        # arithmetic matches _mu element for element
        tau = 1.0 - block.grid.times
        sq = np.sqrt(np.where(tau > 0, tau, np.nan))
        out = np.full(block.w.shape, np.nan)
        last = self.n_bins - 1
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for b in np.unique(k):
                rows = np.flatnonzero(k == b)
                w = block.w[rows]
                if b == 0:
                    zb = (self._edges[1] - w) / sq
                    out[rows] = -_SQRT_2_OVER_PI / special.erfcx(-zb / _SQRT2) / sq
                elif b == last:
                    za = (self._edges[last] - w) / sq
                    out[rows] = _SQRT_2_OVER_PI / special.erfcx(za / _SQRT2) / sq
                else:
                    out[rows] = gaussian_bin_ratio((self._edges[b] - w) / sq,
                                                   (self._edges[b + 1] - w) / sq) / sq
        return out

    def reflected(self) -> "TerminalPartition":
        return TerminalPartition(tuple(sorted(-a for a in self.thresholds)))


@dataclass(frozen=True)
class DynamicNoise(DriftEvaluator):
    """Insider observes ``G_t = W_1 + B~_{g(1-t)}`` with noise clock ``g``."""

    g: NoiseClock = field(default_factory=NoiseClock.sqrt)
    kind: ClassVar[str] = "dynamic-noise"
    needs_aux: ClassVar[bool] = True

    def __post_init__(self):
        if not isinstance(self.g, NoiseClock):
            raise ParameterError("g must be a NoiseClock")
        ys = np.linspace(0.0, 1.0, 257)
        if np.any(np.diff(self.g(ys)) < 0):
            # t -> g(1 - t) must not increase
            raise ParameterError("noise clock must be non-decreasing in its argument")

    @property
    def singular_at_horizon(self) -> bool:
        return float(self.g(0.0)) == 0.0

    @property
    def time_dependent_signal(self) -> bool:
        return True

    def params(self) -> dict:
        return {"g": self.g.describe()}

    def aux_clock(self, times: Array) -> Array:
        return self.g(1.0 - np.asarray(times, float))

    def signal(self, block: PathBlock) -> Array:
        return block.w[:, -1:] + block.aux

    def _mu(self, t, w, signal, running_max=None):
        denom = 1.0 - t + self.g(1.0 - t)
        return np.where(denom > 0, (signal - w) / np.where(denom > 0, denom, np.nan), np.nan)

    def evaluate(self, t, w, signal, running_max=None):
        t = np.asarray(t, float)
        if np.any((t < 0) | (t > 1)):
            raise ParameterError("t must lie in [0, 1]")
        if self.singular_at_horizon and np.any(t >= 1):
            raise SingularityError("dynamic-noise drift is singular at t = 1 when g(0) = 0")
        return _strict(self._mu(t, np.asarray(w, float), np.asarray(signal, float)), self.kind)


# ------------------------------ Constructors ------------------------------- #

def noisy_terminal_drift(w: float) -> NoisyTerminal:
    return NoisyTerminal(float(w))


def running_max_drift(c: float) -> RunningMaxIndicator:
    return RunningMaxIndicator(float(c))


def terminal_partition_drift(thresholds: Sequence[float]) -> TerminalPartition:
    return TerminalPartition(tuple(thresholds))


def dynamic_noise_drift(g: NoiseClock) -> DynamicNoise:
    return DynamicNoise(g)


def drift_from_config(cfg: Mapping[str, Any]) -> DriftEvaluator:
    """Build a drift from flat config keys.

    ``kind`` is one of ``noisy-terminal`` (``w``), ``running-max`` (``c``),
    ``terminal-partition`` (``thresholds``: list or comma string) and
    ``dynamic-noise`` (``g`` family plus ``C``/``p``/``v``).
    """
    kind = str(cfg.get("kind", "")).replace("_", "-")
    try:
        if kind == "noisy-terminal":
            return noisy_terminal_drift(float(cfg["w"]))
        if kind == "running-max":
            return running_max_drift(float(cfg["c"]))
        if kind == "terminal-partition":
            thr = cfg.get("thresholds", ())
            if isinstance(thr, str):
                thr = [float(x) for x in thr.split(",") if x.strip()]
            return terminal_partition_drift(thr)
        if kind == "dynamic-noise":
            g = NoiseClock.from_config(str(cfg.get("g", "sqrt")),
                                       **{k: cfg.get(k) for k in ("C", "p", "v")})
            return dynamic_noise_drift(g)
    except KeyError as exc:
        raise ParameterError(f"drift kind {kind!r} needs parameter {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(str(exc)) from None
    raise ParameterError(f"unknown drift kind {kind!r}")

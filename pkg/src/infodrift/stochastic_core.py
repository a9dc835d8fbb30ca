"""
Time grids, reproducible Brownian paths and scalar numeric kernels
==================================================================

Everything downstream (drifts, wealth simulation, information quantities)
draws on this module.  Paths are generated from counter-based Philox
streams keyed by ``(master_seed, path_index)``, so a path is a pure
function of its seed and never of the order or the process in which it
was produced.
"""

from __future__ import annotations

import functools
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import ParameterError, QuadratureError

Array = np.ndarray
Clock = Union[Callable[[Array], Array], Sequence[float], Array]

__all__ = [
    "TimeGrid",
    "SamplePath",
    "PathBlock",
    "SeedSpec",
    "make_grid",
    "sample_brownian",
    "sample_block",
    "normal_cdf",
    "normal_sf",
    "normal_pdf",
    "quadrature",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SEED_MASK = (1 << 64) - 1

# Philox counter word 3 selects the per-path component stream.
_STREAM_W = 0
_STREAM_AUX = 1
_STREAM_BRIDGE = 2
_STREAM_EXTRA = 3


def _frozen(a: Array) -> Array:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


# ------------------------------- Time grids ------------------------------- #

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times ``0 = t_0 < ... < t_n = T``.

    ``tail_cut``, ``tail_levels`` and ``tail_points`` record how the grid
    was refined near ``T``; ``times`` always contains ``T - tail_cut`` when ``tail_cut > 0``.
    """

    times: Array
    tail_cut: float = 0.0
    tail_levels: int = 0
    tail_points: int = 1

    def __post_init__(self):
        times = _frozen(self.times)
        if times.ndim != 1 or times.size < 2:
            raise ParameterError("a grid needs at least two time points")
        if times[0] != 0.0:
            raise ParameterError("grid must start at 0")
        if not np.all(np.diff(times) > 0):
            raise ParameterError("grid times must be strictly increasing")
        if self.tail_cut < 0:
            raise ParameterError("tail_cut must be non-negative")
        object.__setattr__(self, "times", times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> Array:
        return np.diff(self.times)

    def __len__(self) -> int:
        return self.times.size


def make_grid(T: float, n: int, tail_cut: float = 0.0, tail_levels: int = 0,
              tail_points: int = 1) -> TimeGrid:
    """Uniform grid on ``[0, T - tail_cut]`` followed by geometric halving to ``T``.

    Each tail level halves the distance to ``T``.  ``tail_points`` places
    that many geometrically spaced points inside every level, so the ratio
    of step to remaining time stays near ``log(2) / tail_points`` all the
    way down (1 gives plain halving).  The grid then closes exactly at ``T``.

    >>> make_grid(1.0, 2, 0.25, 2).times.tolist()
    [0.0, 0.375, 0.75, 0.875, 0.9375, 1.0]
    """
    if not T > 0:
        raise ParameterError(f"horizon T must be positive, got {T!r}")
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    if not 0 <= tail_cut < T:
        raise ParameterError(f"tail_cut must lie in [0, T), got {tail_cut!r}")
    if int(tail_levels) != tail_levels or tail_levels < 0:
        raise ParameterError(f"tail_levels must be a non-negative integer, got {tail_levels!r}")
    if int(tail_points) != tail_points or tail_points < 1:
        raise ParameterError(f"tail_points must be a positive integer, got {tail_points!r}")
    n = int(n)
    tail_levels = int(tail_levels) if tail_cut > 0 else 0
    head = np.linspace(0.0, T - tail_cut, n + 1)
    if tail_cut == 0:
        return TimeGrid(head, 0.0, 0)
    tail = []
    for k in range(tail_levels):
        gap = tail_cut * 0.5 ** k
        tail.extend(T - gap * 0.5 ** (j / tail_points) for j in range(1, tail_points + 1))
    times = np.concatenate([head, tail, [T]])
    if not np.all(np.diff(times) > 0):
        raise ParameterError("tail_cut and tail_levels go below floating-point resolution near T")
    return TimeGrid(times, float(tail_cut), tail_levels, int(tail_points))


# --------------------------------- Seeds ---------------------------------- #

@dataclass(frozen=True)
class SeedSpec:
    """Identifies one path: the run's master seed plus the path's index."""

    master_seed: int
    path_index: int = 0

    def __post_init__(self):
        if self.path_index < 0:
            raise ParameterError("path_index must be non-negative")

    def generator(self, stream: int = _STREAM_W) -> np.random.Generator:
        return _path_generator(self.master_seed, self.path_index, stream)


def _path_generator(master_seed: int, path_index: int, stream: int) -> np.random.Generator:
    key = np.array([int(master_seed) & _SEED_MASK, int(path_index)], dtype=np.uint64)
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


# --------------------------------- Paths ---------------------------------- #

@dataclass(frozen=True)
class SamplePath:
    """One Brownian path ``w`` on ``grid`` with its running maximum.

    ``aux`` is an independent Brownian motion read at the auxiliary clock
    (the grid itself when no clock is given).
    """

    grid: TimeGrid
    w: Array
    running_max: Array
    aux: Optional[Array] = None
    seed: Optional[SeedSpec] = None


@dataclass(frozen=True)
class PathBlock:
    """``count`` consecutive paths stored row-wise (paths x grid points)."""

    grid: TimeGrid
    master_seed: int
    start: int
    w: Array
    bridge_max: Optional[Array] = None
    aux: Optional[Array] = None
    extra: Optional[Array] = None

    @property
    def count(self) -> int:
        return self.w.shape[0]

    @functools.cached_property
    def running_max(self) -> Array:
        """Running maximum at grid times, built on first use.

        With ``bridge_max`` (the exact maximum of each bridge interval) this is
        the running maximum of the continuous path; otherwise of the grid values.
        """
        if self.bridge_max is None:
            return np.maximum.accumulate(self.w, axis=1)
        running = np.maximum.accumulate(self.bridge_max, axis=1)
        running = np.concatenate([np.zeros((self.count, 1)), running], axis=1)
        return np.maximum(running, self.w)

    def path(self, row: int) -> SamplePath:
        return SamplePath(
            grid=self.grid,
            w=self.w[row],
            running_max=self.running_max[row],
            aux=None if self.aux is None else self.aux[row],
            seed=SeedSpec(self.master_seed, self.start + row),
        )


def _clock_values(grid: TimeGrid, aux_clock: Optional[Clock]) -> Array:
    if aux_clock is None:
        return grid.times
    if callable(aux_clock):
        vals = np.asarray(aux_clock(grid.times), dtype=float)
    else:
        vals = np.asarray(aux_clock, dtype=float)
    vals = np.broadcast_to(vals, grid.times.shape).astype(float)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise ParameterError("auxiliary clock must be finite and non-negative")
    d = np.diff(vals)
    if not (np.all(d >= 0) or np.all(d <= 0)):
        raise ParameterError("auxiliary clock must be monotone along the grid")
    return vals


def _aux_from_normals(clock: Array, z: Array) -> Array:
    # Brownian motion read at arbitrary monotone clock values: build it on
    # the sorted clock (starting from 0) and scatter back.
    order = np.argsort(clock, kind="stable")
    sorted_clock = clock[order]
    dt = np.diff(sorted_clock, prepend=0.0)
    path_sorted = np.cumsum(np.sqrt(dt) * z, axis=-1)
    out = np.empty_like(path_sorted)
    out[..., order] = path_sorted
    return out


def sample_block(
    grid: TimeGrid,
    master_seed: int,
    start: int,
    count: int,
    with_aux: bool = False,
    aux_clock: Optional[Clock] = None,
    exact_max: bool = False,
    n_extra: int = 0,
) -> PathBlock:
    """Sample paths ``start .. start+count-1`` of the run keyed by ``master_seed``.

    Row ``k`` is bit-identical to ``sample_brownian(grid, SeedSpec(master_seed,
    start + k), ...)``.  With ``exact_max`` the running maximum includes the
    exactly sampled maximum of the Brownian bridge on every grid interval,
    so it is the running maximum of the continuous path read at grid
    times.  ``n_extra`` standard normals per path are drawn from a separate
    stream for insider signals.
    """
    if count < 1:
        raise ParameterError("count must be positive")
    n = len(grid) - 1
    steps = grid.steps
    sq = np.sqrt(steps)
    clock = _clock_values(grid, aux_clock) if with_aux else None

    w = np.zeros((count, n + 1))
    z_aux = np.empty((count, n + 1)) if with_aux else None
    u_br = np.empty((count, n)) if exact_max else None
    extra = np.empty((count, n_extra)) if n_extra else None
    for k in range(count):
        idx = start + k
        _path_generator(master_seed, idx, _STREAM_W).standard_normal(out=w[k, 1:])
        if with_aux:
            z_aux[k] = _path_generator(master_seed, idx, _STREAM_AUX).standard_normal(n + 1)
        if exact_max:
            u_br[k] = _path_generator(master_seed, idx, _STREAM_BRIDGE).random(n)
        if n_extra:
            extra[k] = _path_generator(master_seed, idx, _STREAM_EXTRA).standard_normal(n_extra)

    # cumulative sums run along each row, so every row matches a one-path draw
    increments = w[:, 1:]
    increments *= sq
    np.cumsum(increments, axis=1, out=increments)

    bridge = None
    if exact_max:
        a, b = w[:, :-1], w[:, 1:]
        # max of a Brownian bridge from a to b over dt; 1 - U lies in (0, 1]
        bridge = 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * steps * np.log1p(-u_br)))

    aux = _aux_from_normals(clock, z_aux) if with_aux else None
    return PathBlock(grid, int(master_seed), int(start), w, bridge, aux, extra)


def sample_brownian(
    grid: TimeGrid,
    seed: SeedSpec,
    with_aux: bool = False,
    aux_clock: Optional[Clock] = None,
    exact_max: bool = False,
) -> SamplePath:
    """Sample the single path identified by ``seed``.

    ``aux_clock`` maps grid times to the times at which the auxiliary
    Brownian motion is read; it may run forwards or backwards but must be
    monotone.
    """
    block = sample_block(grid, seed.master_seed, seed.path_index, 1,
                         with_aux=with_aux, aux_clock=aux_clock, exact_max=exact_max)
    return block.path(0)


# ----------------------------- Normal kernels ----------------------------- #

def normal_cdf(x):
    """Standard normal CDF via ``erfc``; accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)[()]


def normal_sf(x):
    """Upper tail ``1 - Phi(x)`` without cancellation."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)[()]


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return (_INV_SQRT_2PI * np.exp(-0.5 * x * x))[()]


# ------------------------------- Quadrature -------------------------------- #

# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(15)
_GAUSS_W[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f: Callable[[float], float], a: float, b: float) -> tuple[float, float]:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = np.array([f(mid + half * x) for x in _NODES], dtype=float)
    if not np.all(np.isfinite(fx)):
        raise QuadratureError(f"integrand not finite on ({a}, {b})", math.nan, math.inf)
    kronrod = half * float(fx @ _KRONROD_W)
    gauss = half * float(fx @ _GAUSS_W)
    return kronrod, abs(kronrod - gauss)


def quadrature(f: Callable[[float], float], a: float, b: float,
               tol: float = 1e-10, max_intervals: int = 4000) -> float:
    """Adaptive Gauss-Kronrod (7/15) integral of ``f`` over ``(a, b)``.

    The interval with the largest error estimate is bisected until the
    summed estimate drops below ``tol``.  Nodes are strictly interior, so
    integrable endpoint singularities are allowed.

    Raises
    ------
    QuadratureError
        If ``max_intervals`` subintervals do not reach ``tol``; the
        exception carries the best estimate and its error bound.
    """
    if not a < b:
        raise ParameterError(f"need a < b, got ({a!r}, {b!r})")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    value, err = _gk15(f, a, b)
    heap = [(-err, a, b, value)]
    total, total_err = value, err
    while total_err > tol:
        if len(heap) >= max_intervals:
            raise QuadratureError("subdivision budget exhausted", total, total_err)
        neg_err, lo, hi, v = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            heapq.heappush(heap, (neg_err, lo, hi, v))
            raise QuadratureError("interval cannot be bisected further", total, total_err)
        v1, e1 = _gk15(f, lo, mid)
        v2, e2 = _gk15(f, mid, hi)
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        total += v1 + v2 - v
        total_err += e1 + e2 + neg_err
        if total_err <= tol:
            # confirm with exact sums before accepting
            total = math.fsum(item[3] for item in heap)
            total_err = math.fsum(-item[0] for item in heap)
    return math.fsum(item[3] for item in heap)

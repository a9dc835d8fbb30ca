"""
The partition measure for the dynamic-noise insider.

The insider watches ``G_t = W_1 + B~_{g(1-t)}``.  The measure of the cell
``[0, s] x (s, t]`` is ``1/2 log((1 - s + g(1-s)) / (1 - t + g(1-s)))``,
partition sums add those cells along a grid, and the total mass is
``1/2 int_0^1 du / (1 - u + g(1 - u))``.  Sums increase under refinement
and converge to the total, which is finite exactly when the integral is.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .drift_catalog import NoiseClock
from .errors import ParameterError, QuadratureError
from .stochastic_core import TimeGrid, quadrature

Array = np.ndarray

__all__ = [
    "PartitionMeasure",
    "MeshStudy",
    "pi_cell",
    "pi_partition_sum",
    "dyadic_partition_sum",
    "pi_total",
    "mesh_study",
    "MESH_STUDY_COLUMNS",
]

MESH_STUDY_COLUMNS = ("level", "mesh", "partition_sum", "limit_ref", "gap")

# dyadic tail probes: piece k integrates over y in [2^-(k+1), 2^-k]
_MAX_PIECES = 1000
_MIN_PIECES = 40
_DIVERGENCE_RATIO = 1.0 - 1e-3
_CHUNK = 1 << 20


def _clock(g) -> NoiseClock:
    if not isinstance(g, NoiseClock):
        raise ParameterError(f"expected a NoiseClock, got {type(g).__name__}")
    return g


def _cells(g: NoiseClock, s: Array, t: Array) -> Array:
    # 1/2 log(num / den) with num - den = t - s, written through log1p
    den = 1.0 - t + g(1.0 - s)
    with np.errstate(divide="ignore", over="ignore"):
        return 0.5 * np.log1p((t - s) / den)


def pi_cell(g: NoiseClock, s: float, t: float) -> float:
    """Measure of ``[0, s] x (s, t]``; ``inf`` when ``t = 1`` and ``g(1 - s) = 0``."""
    g = _clock(g)
    if not 0.0 <= s <= t <= 1.0:
        raise ParameterError(f"need 0 <= s <= t <= 1, got s={s!r}, t={t!r}")
    if s == t:
        return 0.0
    den = 1.0 - t + float(g(1.0 - s))
    if den <= 0.0:
        return math.inf
    return 0.5 * math.log1p((t - s) / den)


def _partition_times(partition: Union[TimeGrid, Sequence[float]]) -> Array:
    times = partition.times if isinstance(partition, TimeGrid) else np.asarray(partition, dtype=float)
    if times.ndim != 1 or times.size < 2 or times[0] != 0.0 or times[-1] != 1.0:
        raise ParameterError("partition must run from 0 to 1")
    if np.any(np.diff(times) <= 0):
        raise ParameterError("partition times must be strictly increasing")
    return times


def pi_partition_sum(g: NoiseClock, partition: Union[TimeGrid, Sequence[float]]) -> float:
    """Sum of the cells ``[0, s_i] x (s_i, s_{i+1}]`` over a partition of ``[0, 1]``.

    This is the utility increment of an insider who only updates the
    signal at the partition times.
    """
    g = _clock(g)
    times = _partition_times(partition)
    cells = _cells(g, times[:-1], times[1:])
    return float(np.sum(cells))


def dyadic_partition_sum(g: NoiseClock, level: int) -> float:
    """Partition sum on the uniform grid of mesh ``2**-level``.

    Cells are evaluated in fixed-size chunks, so deep levels need bounded
    memory and the result does not depend on available RAM.
    """
    g = _clock(g)
    if int(level) != level or level < 0:
        raise ParameterError(f"level must be a non-negative integer, got {level!r}")
    n = 1 << int(level)
    h = 1.0 / n
    parts = []
    for start in range(0, n, _CHUNK):
        i = np.arange(start, min(start + _CHUNK, n), dtype=float)
        s = i * h
        t = np.minimum((i + 1.0) * h, 1.0)
        parts.append(np.sum(_cells(g, s, t)))
    return float(np.sum(parts))


def pi_total(g: NoiseClock, tol: float = 1e-10) -> float:
    """Total mass ``1/2 int_0^1 dy / (y + g(y))`` or ``inf``.

    The integral is split into dyadic pieces in ``y = 1 - u`` and each
    piece goes to adaptive quadrature.  When successive pieces stop
    shrinking (ratio above ``1 - 1e-3``) the integrand behaves like
    ``y**-q`` with ``q >= 1`` and the total is reported as infinite;
    otherwise the geometric remainder of the pieces is added.

    Raises
    ------
    QuadratureError
        If the pieces neither converge nor settle into a divergent ratio.
    """
    g = _clock(g)
    if not tol > 0:
        raise ParameterError("tol must be positive")

    def f(y: float) -> float:
        return 1.0 / (y + float(g(y)))

    pieces = []
    total = 0.0
    previous = math.nan
    for k in range(_MAX_PIECES):
        hi = 0.5 ** k
        pieces.append(quadrature(f, 0.5 * hi, hi, tol=tol * 1e-2 / (k + 1)))
        total = math.fsum(pieces)
        if k + 1 < _MIN_PIECES:
            continue
        ratio = pieces[-1] / pieces[-2] if pieces[-2] > 0 else 0.0
        if ratio >= _DIVERGENCE_RATIO:
            return math.inf
        # geometric remainder; once the ratio has settled the extrapolated
        # total stops moving even if the pieces themselves decay slowly
        extrapolated = total + pieces[-1] * ratio / (1.0 - ratio)
        if abs(extrapolated - previous) < 0.1 * tol:
            return 0.5 * extrapolated
        previous = extrapolated
    raise QuadratureError("dyadic tail probes did not settle", 0.5 * total, 0.5 * pieces[-1])


@dataclass(frozen=True)
class PartitionMeasure:
    """The measure for one noise clock: cell values plus total mass."""

    g: NoiseClock
    total: float

    @classmethod
    def of(cls, g: NoiseClock, tol: float = 1e-10) -> "PartitionMeasure":
        return cls(g, pi_total(g, tol))

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)

    def cell(self, s: float, t: float) -> float:
        return pi_cell(self.g, s, t)

    def partition_sum(self, partition) -> float:
        return pi_partition_sum(self.g, partition)


@dataclass(frozen=True)
class MeshStudy:
    """Partition sums on dyadic meshes ``2**-1, ..., 2**-k_max``."""

    levels: tuple
    meshes: tuple
    values: tuple
    limit_ref: float

    @property
    def gaps(self) -> tuple:
        return tuple(self.limit_ref - v for v in self.values)

    @property
    def divergent(self) -> bool:
        return math.isinf(self.limit_ref)

    def rows(self) -> list:
        return [
            {"level": k, "mesh": m, "partition_sum": v, "limit_ref": self.limit_ref, "gap": gap}
            for k, m, v, gap in zip(self.levels, self.meshes, self.values, self.gaps)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MESH_STUDY_COLUMNS)
        for row in self.rows():
            writer.writerow([row["level"]] + [repr(float(row[c])) for c in MESH_STUDY_COLUMNS[1:]])
        return buf.getvalue()


def mesh_study(g: NoiseClock, levels: int, tol: float = 1e-10,
               limit_ref: Optional[float] = None) -> MeshStudy:
    """Dyadic partition sums for ``k = 1 .. levels`` against the total mass."""
    g = _clock(g)
    if int(levels) != levels or levels < 1:
        raise ParameterError(f"levels must be a positive integer, got {levels!r}")
    ks = tuple(range(1, int(levels) + 1))
    values = tuple(dyadic_partition_sum(g, k) for k in ks)
    ref = pi_total(g, tol) if limit_ref is None else float(limit_ref)
    return MeshStudy(ks, tuple(0.5 ** k for k in ks), values, ref)

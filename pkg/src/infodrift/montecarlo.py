"""
Monte Carlo estimators for the insider's utility increment
==========================================================

Two independent routes estimate the same number:

* drift energy   ``1/2 E int mu_t^2 dt`` (trapezoid per path), and
* wealth         ``E[log X^insider_T - log X^uninformed_T]`` on paired paths.

Paths are produced in fixed blocks of ``BLOCK_SIZE`` consecutive indices.
Every per-path statistic depends only on ``(master_seed, path_index)``,
blocks are gathered back in index order and means use numpy's pairwise
summation, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .drift_catalog import DriftEvaluator
from .errors import ParameterError
from .information import discrete_entropy
from .market import MarketModel, UtilityReport, paired_gain_from_increments, uninformed_utility
from .stochastic_core import PathBlock, TimeGrid, make_grid, sample_block

Array = np.ndarray

__all__ = [
    "BLOCK_SIZE",
    "MAX_VIOLATION_RATE",
    "EstimatorResult",
    "PathStatistics",
    "default_grid",
    "sample_for",
    "path_statistics",
    "drift_energy",
    "utility_increment_by_wealth",
    "orthogonality",
    "VerificationCase",
    "RefinementStudy",
    "registry",
    "get_case",
    "case_for_drift",
    "verify_identity",
    "refinement_study",
]

BLOCK_SIZE = 1024
MAX_VIOLATION_RATE = 1e-3

DEFAULT_PATHS = 200_000
DEFAULT_STEPS = 2000
DEFAULT_TAIL_CUT = 1e-3
DEFAULT_TAIL_LEVELS = 6


def default_grid(steps: int = DEFAULT_STEPS, tail_cut: float = DEFAULT_TAIL_CUT,
                 tail_levels: int = DEFAULT_TAIL_LEVELS, tail_points: int = 1) -> TimeGrid:
    return make_grid(1.0, steps, tail_cut, tail_levels, tail_points)


@dataclass(frozen=True)
class EstimatorResult:
    """Sample mean over paths with its standard error.

    ``n_paths`` counts the paths that entered the mean; ``violations``
    counts paths aborted because of a singular drift or non-positive wealth.
    """

    mean: float
    stderr: float
    n_paths: int
    truncation: dict = field(default_factory=dict)
    violations: int = 0

    @property
    def violation_rate(self) -> float:
        total = self.n_paths + self.violations
        return self.violations / total if total else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _summarize(values: Array, ok: Array, truncation: dict) -> EstimatorResult:
    kept = np.ascontiguousarray(values[ok])
    n = int(kept.size)
    if n == 0:
        return EstimatorResult(math.nan, math.nan, 0, truncation, int(ok.size))
    mean = float(np.sum(kept) / n)
    if n > 1:
        resid = kept - mean
        stderr = math.sqrt(float(np.sum(resid * resid)) / (n - 1) / n)
    else:
        stderr = math.inf
    return EstimatorResult(mean, stderr, n, truncation, int(ok.size - n))


def sample_for(drift: DriftEvaluator, grid: TimeGrid, master_seed: int, start: int,
               count: int) -> PathBlock:
    """Sample the paths (plus auxiliary noise) that ``drift`` needs."""
    clock = drift.aux_clock(grid.times) if drift.needs_aux else None
    return sample_block(grid, master_seed, start, count, with_aux=drift.needs_aux,
                        aux_clock=clock, exact_max=drift.exact_max, n_extra=drift.n_extra)


def _horizon_index(drift: DriftEvaluator, grid: TimeGrid) -> int:
    # last grid index included in drift integrals
    return len(grid) - 2 if drift.singular_at_horizon else len(grid) - 1


def _trapezoid_weights(grid: TimeGrid, end: int) -> Array:
    dt = grid.steps[:end]
    weights = np.zeros(end + 1)
    weights[:-1] += 0.5 * dt
    weights[1:] += 0.5 * dt
    return weights


def _block_statistics(args) -> dict:
    drift, models, grid, master_seed, start, count = args
    block = sample_for(drift, grid, master_seed, start, count)
    mu = drift.along(block)
    m = _horizon_index(drift, grid)
    weights = _trapezoid_weights(grid, m)
    mu_used = mu[:, : m + 1]
    with np.errstate(invalid="ignore", over="ignore"):
        # NaN (singular state) propagates through the products, so finiteness
        # of the energy flags exactly the aborted paths
        energy = 0.5 * ((mu_used * mu_used) @ weights)
        ortho = (block.w[:, : m + 1] * mu_used) @ weights
    finite = np.isfinite(energy)
    ortho[~finite] = np.nan
    out = {"energy": energy, "ortho": ortho, "ok_drift": finite}
    if models:
        left = mu[:, :-1]
        ok_left = np.isfinite(left.sum(axis=1))
        left = np.where(np.isfinite(left), left, 0.0)
        dw = np.diff(block.w, axis=1)
        wealth, ok_wealth = [], []
        for model in models:
            gain, ok = paired_gain_from_increments(dw, grid.steps, model, left)
            wealth.append(gain)
            ok_wealth.append(ok_left & ok)
        out["wealth"] = np.stack(wealth)
        out["ok_wealth"] = np.stack(ok_wealth)
    return out


@dataclass(frozen=True)
class PathStatistics:
    """Per-path statistics for one run, in path-index order.

    ``wealth`` and ``ok_wealth`` have one row per market model.
    """

    energy: Array
    ortho: Array
    ok_drift: Array
    wealth: Optional[Array]
    ok_wealth: Optional[Array]
    truncation: dict

    def drift_energy(self) -> EstimatorResult:
        return _summarize(self.energy, self.ok_drift, self.truncation)

    def orthogonality(self) -> EstimatorResult:
        return _summarize(self.ortho, self.ok_drift, self.truncation)

    def wealth_increment(self, model_index: int = 0) -> EstimatorResult:
        if self.wealth is None:
            raise ParameterError("wealth route was not simulated")
        return _summarize(self.wealth[model_index], self.ok_wealth[model_index], self.truncation)


def _truncation(drift: DriftEvaluator, grid: TimeGrid) -> dict:
    m = _horizon_index(drift, grid)
    return {
        "tail_cut": grid.tail_cut,
        "tail_levels": grid.tail_levels,
        "tail_points": grid.tail_points,
        "steps": len(grid) - 1,
        "integration_end": float(grid.times[m]),
    }


def path_statistics(drift: DriftEvaluator, grid: TimeGrid, n_paths: int, master_seed: int,
                    models: Union[MarketModel, Sequence[MarketModel], None] = None,
                    workers: int = 1) -> PathStatistics:
    """Simulate ``n_paths`` paths and collect every per-path statistic.

    For each market model in ``models`` the paired wealth route is
    simulated on the same paths.
    """
    if grid.T != 1.0:
        raise ParameterError("catalog drifts need a grid on [0, 1]")
    if n_paths < 1:
        raise ParameterError("n_paths must be positive")
    if workers < 1:
        raise ParameterError("workers must be positive")
    if isinstance(models, MarketModel):
        models = (models,)
    models = tuple(models or ())
    if any(model.T != 1.0 for model in models):
        raise ParameterError("market horizon must be 1 when a catalog drift is attached")
    jobs = [
        (drift, models, grid, master_seed, start, min(BLOCK_SIZE, n_paths - start))
        for start in range(0, n_paths, BLOCK_SIZE)
    ]
    if workers == 1 or len(jobs) == 1:
        parts = [_block_statistics(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_statistics, jobs))

    def cat(key, axis=0):
        return np.concatenate([p[key] for p in parts], axis=axis)

    return PathStatistics(
        energy=cat("energy"),
        ortho=cat("ortho"),
        ok_drift=cat("ok_drift"),
        wealth=cat("wealth", axis=1) if models else None,
        ok_wealth=cat("ok_wealth", axis=1) if models else None,
        truncation=_truncation(drift, grid),
    )


def drift_energy(spec: DriftEvaluator, grid: TimeGrid, n_paths: int, seed: int,
                 workers: int = 1) -> EstimatorResult:
    """Estimate ``1/2 E int_0^{end} mu_t^2 dt`` by per-path trapezoid sums.

    ``end`` is ``T`` for drifts that stay finite there and the last grid
    point before ``T`` otherwise.  Paths hitting a singular state are
    aborted and reported in ``violations``.
    """
    return path_statistics(spec, grid, n_paths, seed, workers=workers).drift_energy()


def utility_increment_by_wealth(spec: DriftEvaluator, model: MarketModel, grid: TimeGrid,
                                n_paths: int, seed: int, workers: int = 1) -> EstimatorResult:
    """Paired difference of simulated log wealth, insider minus uninformed, with ``x = 1``."""
    return path_statistics(spec, grid, n_paths, seed, models=model, workers=workers).wealth_increment()


def orthogonality(spec: DriftEvaluator, grid: TimeGrid, n_paths: int, seed: int,
                  workers: int = 1) -> EstimatorResult:
    """Estimate ``E int W_t mu_t dt``, which vanishes for an information drift."""
    return path_statistics(spec, grid, n_paths, seed, workers=workers).orthogonality()


# ------------------------------ Verification ------------------------------ #

DEFAULT_SEED = 7
RELATIVE_GATE = 0.05
Z_GATE = 3.0

# Drifts that blow up near a boundary at T need a tail whose step stays a
# small fraction of the remaining time; see ``make_grid``'s ``tail_points``.
SINGULAR_GRID = {"steps": 1500, "tail_cut": 0.05, "tail_levels": 18, "tail_points": 128}
REGULAR_GRID = {"steps": DEFAULT_STEPS, "tail_cut": DEFAULT_TAIL_CUT,
                "tail_levels": DEFAULT_TAIL_LEVELS, "tail_points": 1}
WEALTH_MODELS = (MarketModel(b=-0.5), MarketModel(b=0.5))


@dataclass(frozen=True)
class VerificationCase:
    """A drift with a closed-form information target."""

    name: str
    description: str
    build: Callable[[], DriftEvaluator]
    target: Callable[[], float]
    grid: dict
    model: MarketModel = MarketModel()

    def make_grid(self, **overrides) -> TimeGrid:
        params = {**self.grid, **{k: v for k, v in overrides.items() if v is not None}}
        return make_grid(1.0, params["steps"], params["tail_cut"], params["tail_levels"],
                         params["tail_points"])


def _registry() -> dict:
    from scipy.special import ndtri

    from .drift_catalog import (NoiseClock, dynamic_noise_drift, noisy_terminal_drift,
                                running_max_drift, terminal_partition_drift)
    from .information import (brownian_covariance, gaussian_channel_information,
                              indicator_insider_information)
    from .partition_measure import pi_total

    level = math.e
    cases = [
        VerificationCase(
            "NT-1", "noisy terminal value, w = 1, against the Gaussian channel information",
            lambda: noisy_terminal_drift(1.0),
            lambda: gaussian_channel_information(brownian_covariance([1.0]), [[1.0]]).nats,
            REGULAR_GRID),
        VerificationCase(
            "PART-2", "sign of W_1, against log 2",
            lambda: terminal_partition_drift([0.0]),
            lambda: discrete_entropy([0.5, 0.5]),
            SINGULAR_GRID),
        VerificationCase(
            "PART-3", "three equiprobable bins of W_1, against log 3",
            lambda: terminal_partition_drift([float(ndtri(1.0 / 3.0)), float(ndtri(2.0 / 3.0))]),
            lambda: discrete_entropy([1.0 / 3.0] * 3),
            SINGULAR_GRID),
        VerificationCase(
            "MAX-1", "whether sup S crosses c = e (b = 0), against the binary entropy",
            lambda: running_max_drift(math.log(level)),
            lambda: indicator_insider_information(MarketModel(b=0.0), level).nats,
            SINGULAR_GRID),
        VerificationCase(
            "DYN-1", "dynamic noise clock g(y) = sqrt(y), against the partition-measure total",
            lambda: dynamic_noise_drift(NoiseClock.sqrt()),
            lambda: pi_total(NoiseClock.sqrt()),
            SINGULAR_GRID),
    ]
    return {case.name: case for case in cases}


# BOUND-1 would need a non-Gaussian signal whose information has no
# closed form; it is listed so the CLI can explain why it does not run.
SKIPPED_CASES = {"BOUND-1": "needs mutual information of a non-Gaussian signal, which is out of scope"}


def registry() -> dict:
    """Named verification cases, in run order."""
    return _registry()


def get_case(name: str) -> VerificationCase:
    cases = registry()
    if name in SKIPPED_CASES:
        raise ParameterError(f"case {name} is skipped: {SKIPPED_CASES[name]}")
    try:
        return cases[name]
    except KeyError:
        raise ParameterError(f"unknown verification case {name!r}; known: {', '.join(cases)}") from None


def case_for_drift(drift: DriftEvaluator) -> VerificationCase:
    """Wrap any catalog drift as a verification case with its closed-form target."""
    from .drift_catalog import DynamicNoise, NoisyTerminal, RunningMaxIndicator, TerminalPartition
    from .information import indicator_insider_information
    from .partition_measure import pi_total
    from .stochastic_core import normal_cdf

    if isinstance(drift, NoisyTerminal):
        target = (lambda: 0.5 * math.log1p(1.0 / drift.w)) if drift.w > 0 else (lambda: math.inf)
    elif isinstance(drift, TerminalPartition):
        def target():
            cdf = normal_cdf(np.array((-math.inf, *drift.thresholds, math.inf)))
            return discrete_entropy(np.diff(cdf) / np.sum(np.diff(cdf)))
    elif isinstance(drift, RunningMaxIndicator):
        def target():
            return indicator_insider_information(MarketModel(b=0.0), math.exp(drift.c)).nats
    elif isinstance(drift, DynamicNoise):
        def target():
            return pi_total(drift.g)
    else:
        raise ParameterError(f"no closed-form target for drift kind {drift.kind!r}")
    params = ", ".join(f"{k}={v}" for k, v in drift.params().items())
    return VerificationCase(f"ad-hoc {drift.kind}", f"{drift.kind} ({params})", lambda: drift,
                            target, SINGULAR_GRID if drift.singular_at_horizon else REGULAR_GRID)


def _z(diff: float, *stderrs: float) -> float:
    scale = math.sqrt(sum(s * s for s in stderrs))
    if scale == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / scale


def verify_identity(case: Union[str, VerificationCase], n_paths: int = DEFAULT_PATHS,
                    seed: int = DEFAULT_SEED, workers: int = 1, **grid_overrides) -> UtilityReport:
    """Run one registry case and compare the Monte Carlo increment with its target.

    The drift-energy estimate is the reported increment.  The paired
    wealth route is simulated on the same paths for ``b = -1/2`` and
    ``b = +1/2``; its means, the route-consistency and b-invariance
    z-scores and the violation counts are kept in ``verdict``.

    The verdict passes iff ``|z| <= 3``, the relative gap is at most 5%,
    no route aborts more than 0.1% of its paths and the 3-stderr band is
    narrower than the 5% gate (otherwise the run is under-powered).
    """
    if isinstance(case, str):
        case = get_case(case)
    drift = case.build()
    target = float(case.target())
    grid = case.make_grid(**grid_overrides)
    stats = path_statistics(drift, grid, n_paths, seed, models=WEALTH_MODELS, workers=workers)
    energy = stats.drift_energy()
    wealth = [stats.wealth_increment(i) for i in range(len(WEALTH_MODELS))]

    z = _z(energy.mean - target, energy.stderr)
    rel_gap = abs(energy.mean - target) / abs(target) if target else abs(energy.mean)
    consistency = [_z(w.mean - energy.mean, w.stderr, energy.stderr) for w in wealth]
    b_invariance = _z(wealth[1].mean - wealth[0].mean, wealth[0].stderr, wealth[1].stderr)
    worst_rate = max([energy.violation_rate] + [w.violation_rate for w in wealth])
    underpowered = not (Z_GATE * energy.stderr <= RELATIVE_GATE * abs(target))
    passed = (abs(z) <= Z_GATE and rel_gap <= RELATIVE_GATE
              and worst_rate <= MAX_VIOLATION_RATE and not underpowered)
    verdict = {
        "pass": bool(passed),
        "case": case.name,
        "z": z,
        "rel_gap": rel_gap,
        "underpowered": bool(underpowered),
        "violation_rate": worst_rate,
        "energy_violations": energy.violations,
        "wealth": {
            "b": [m.b for m in WEALTH_MODELS],
            "mean": [w.mean for w in wealth],
            "stderr": [w.stderr for w in wealth],
            "violations": [w.violations for w in wealth],
        },
        "consistency_z": consistency,
        "b_invariance_z": b_invariance,
        "consistent": bool(all(abs(c) <= Z_GATE for c in consistency) and abs(b_invariance) <= Z_GATE),
        "orthogonality": {"mean": stats.orthogonality().mean, "stderr": stats.orthogonality().stderr},
        "truncation": energy.truncation,
        "seed": seed,
    }
    u0 = uninformed_utility(case.model, 1.0)
    return UtilityReport(
        u_uninformed=u0,
        u_insider=u0 + energy.mean,
        increment_analytic=target,
        increment_mc=energy.mean,
        stderr_mc=energy.stderr,
        n_paths=n_paths,
        verdict=verdict,
    )


REFINEMENT_COLUMNS = ("case", "tail_cut", "steps", "integration_end", "energy", "energy_stderr",
                      "wealth", "wealth_stderr", "violations")


@dataclass(frozen=True)
class RefinementStudy:
    """The same case on grids whose ``tail_cut`` is halved repeatedly.

    ``extrapolated`` assumes the truncation error shrinks like the square
    root of the tail cut (the energy density of these drifts grows like
    ``(1 - t)**-1/2``) and applies one Richardson step to the two finest
    levels of each route, with the standard error carried through.
    """

    case: str
    rows: tuple
    extrapolated: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REFINEMENT_COLUMNS)
        for row in self.rows:
            writer.writerow([row[c] if isinstance(row[c], (str, int)) else repr(float(row[c]))
                             for c in REFINEMENT_COLUMNS])
        return buf.getvalue()


_RICHARDSON = math.sqrt(0.5) / (1.0 - math.sqrt(0.5))


def _richardson(coarse: dict, fine: dict, key: str) -> tuple[float, float]:
    # stderrs combine as if the levels were independent; the levels share
    # seeds and correlate positively, which makes this conservative
    a = _RICHARDSON
    value = fine[key] + a * (fine[key] - coarse[key])
    err = math.hypot((1.0 + a) * fine[key + "_stderr"], a * coarse[key + "_stderr"])
    return value, err


def refinement_study(case: Union[str, VerificationCase], n_paths: int = 8192,
                     seed: int = DEFAULT_SEED, halvings: int = 2, workers: int = 1,
                     model: MarketModel = MarketModel(b=0.5), **grid_overrides) -> RefinementStudy:
    """Energy and wealth increments as ``tail_cut`` is halved ``halvings`` times."""
    if isinstance(case, str):
        case = get_case(case)
    if halvings < 1:
        raise ParameterError("need at least one halving")
    drift = case.build()
    base = {**case.grid, **{k: v for k, v in grid_overrides.items() if v is not None}}
    rows = []
    for j in range(halvings + 1):
        cut = base["tail_cut"] * 0.5 ** j
        grid = make_grid(1.0, base["steps"], cut, base["tail_levels"], base["tail_points"])
        stats = path_statistics(drift, grid, n_paths, seed, models=model, workers=workers)
        e, w = stats.drift_energy(), stats.wealth_increment()
        rows.append({
            "case": case.name, "tail_cut": cut, "steps": len(grid) - 1,
            "integration_end": e.truncation["integration_end"],
            "energy": e.mean, "energy_stderr": e.stderr,
            "wealth": w.mean, "wealth_stderr": w.stderr,
            "violations": e.violations + w.violations,
        })
    extrapolated = {}
    for key in ("energy", "wealth"):
        extrapolated[key], extrapolated[key + "_stderr"] = _richardson(rows[-2], rows[-1], key)
    return RefinementStudy(case.name, tuple(rows), extrapolated)

"""The eight acceptance criteria at their stated budgets and tolerances.

Each test records one PASS/FAIL line that is printed in the terminal
summary.  The Monte Carlo runs use the registry's seed and are shared
between criteria through module-scoped fixtures.
"""

import json
import math
import os
import time

import numpy as np
import pytest
from conftest import record_criterion
from scipy.special import ndtri

from infodrift.cli import main
from infodrift.drift_catalog import noisy_terminal_drift
from infodrift.information import (CovarianceMatrix, brownian_covariance,
                                   gaussian_channel_information, isotropic_gaussian_bound,
                                   laplace_perturbation_bound, maxent_entropy,
                                   running_max_probability)
from infodrift.market import MarketModel
from infodrift.montecarlo import (DEFAULT_SEED, WEALTH_MODELS, _summarize, case_for_drift,
                                  default_grid, path_statistics, refinement_study, registry)
from infodrift.partition_measure import dyadic_partition_sum, mesh_study, pi_total
from infodrift.drift_catalog import NoiseClock
from infodrift.stochastic_core import normal_sf

PATHS = 200_000
WORKERS = os.cpu_count() or 1


def _timed(fn):
    start = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - start


@pytest.fixture(scope="module")
def registry_runs():
    """Energy and paired wealth statistics for every registry case, full budget."""
    runs = {}
    for name, case in registry().items():
        stats, seconds = _timed(lambda: path_statistics(case.build(), case.make_grid(), PATHS,
                                                        DEFAULT_SEED, models=WEALTH_MODELS,
                                                        workers=WORKERS))
        runs[name] = (case, stats, seconds)
    return runs


def _within(estimate, stderr, target, rel):
    return abs(estimate - target) <= max(3.0 * stderr, rel * abs(target))


# 1 ---------------------------------------------------------------------------

def test_criterion_1_gaussian_channel_identity():
    lines, ok = [], True
    for w, quoted in ((0.5, 0.549306), (1.0, 0.346574), (3.0, 0.143841)):
        target = 0.5 * math.log((1 + w) / w)
        assert abs(target - quoted) < 1e-6
        stats, seconds = _timed(lambda: path_statistics(noisy_terminal_drift(w), default_grid(), PATHS,
                                                        DEFAULT_SEED, workers=WORKERS))
        e = stats.drift_energy()
        good = _within(e.mean, e.stderr, target, 0.01) and seconds <= 60 and e.violations == 0
        ok &= good
        lines.append(f"w={w}: {e.mean:.6f}+-{e.stderr:.1e} vs {target:.6f} in {seconds:.0f}s")
    record_criterion(1, ok, "; ".join(lines))
    assert ok


# 2 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def refinement_runs(registry_runs):
    out = {}
    for name in ("PART-2", "PART-3"):
        out[name] = _timed(lambda: refinement_study(registry_runs[name][0], workers=WORKERS))
    return out


PART_TARGETS = (("PART-2", math.log(2)), ("PART-3", math.log(3)))


def _case_seconds(name, registry_runs, refinement_runs):
    return registry_runs[name][2] + refinement_runs[name][1]


def test_criterion_2_entropy_identity(registry_runs, refinement_runs):
    lines, accurate, fast = [], True, True
    for name, target in PART_TARGETS:
        _, stats, _ = registry_runs[name]
        study, _ = refinement_runs[name]
        e = stats.drift_energy()
        ext = study.extrapolated
        total = _case_seconds(name, registry_runs, refinement_runs)
        accurate &= (_within(e.mean, e.stderr, target, 0.05)
                     and _within(ext["energy"], ext["energy_stderr"], target, 0.05)
                     and e.violation_rate <= 1e-3)
        fast &= total <= 120
        lines.append(f"{name}: {e.mean:.5f}+-{e.stderr:.1e}, extrapolated {ext['energy']:.4f}"
                     f"+-{ext['energy_stderr']:.1e} vs {target:.6f} in {total:.0f}s")
    assert abs(float(ndtri(1 / 3)) + float(ndtri(2 / 3))) < 1e-15
    lines.append(f"accuracy {'ok' if accurate else 'no'}, <=120s per case {'ok' if fast else 'no'}"
                 f" on {WORKERS} cpu(s)")
    record_criterion(2, accurate and fast, "; ".join(lines))
    assert accurate


@pytest.mark.xfail(WORKERS < 2, strict=False,
                   reason="2e5 paths on the refined tail grid with both wealth routes take "
                          "about 120-135 s per case on a single core")
def test_criterion_2_time_budget(registry_runs, refinement_runs):
    for name, _ in PART_TARGETS:
        assert _case_seconds(name, registry_runs, refinement_runs) <= 120, name


# 3 ---------------------------------------------------------------------------

def test_criterion_3_running_max_insider(registry_runs):
    case, stats, seconds = registry_runs["MAX-1"]
    p = 2 * normal_sf(1.0)
    target = -p * math.log(p) - (1 - p) * math.log1p(-p)
    # the quoted 0.624864 is off by 3.9e-5; the binary entropy of
    # p = 0.3173105 is 0.6248255
    assert case.target() == pytest.approx(target, abs=1e-12)
    e = stats.drift_energy()
    mc_ok = _within(e.mean, e.stderr, target, 0.05) and e.violation_rate <= 1e-3
    worst = 0.0
    for log_c in (0.5, 1.0, 2.0):
        q = running_max_probability(MarketModel(b=0.0), math.exp(log_c))
        worst = max(worst, abs(q - 2 * normal_sf(log_c)))
    ok = mc_ok and worst <= 1e-6
    record_criterion(3, ok, f"MC {e.mean:.5f}+-{e.stderr:.1e} vs {target:.7f} ({seconds:.0f}s); "
                            f"quadrature worst error {worst:.1e}")
    assert ok


# 4 ---------------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="mesh 2^-12 leaves a gap of 0.011 for g = sqrt(y) and "
                                        "g = y reaches only 3.06 nats by mesh 2^-16")
def test_criterion_4_partition_measure_convergence():
    start = time.perf_counter()
    sqrt_study = mesh_study(NoiseClock.sqrt(), 12)
    linear = NoiseClock.power(1.0, 1.0)
    linear_study = mesh_study(linear, 16)
    seconds = time.perf_counter() - start
    monotone = all(b >= a for a, b in zip(sqrt_study.values, sqrt_study.values[1:]))
    gap = math.log(2) - sqrt_study.values[-1]
    top = linear_study.values[-1]
    parts = {
        "non-decreasing": monotone,
        "gap<=1e-3 at 2^-12": gap <= 1e-3,
        "linear >5 nats by 2^-16": top > 5.0,
        "flagged divergent": linear_study.divergent and math.isinf(pi_total(linear)),
        "<=5s": seconds <= 5.0,
    }
    ok = all(parts.values())
    record_criterion(4, ok, f"gap {gap:.4f} at 2^-12, linear clock {top:.3f} nats at 2^-16, {seconds:.1f}s; "
                            + ", ".join(f"{k}={'ok' if v else 'no'}" for k, v in parts.items()))
    assert ok


def test_criterion_4_analysis_supporting_facts():
    # what the criterion's numbers would need: level 20 for 1e-3, and about
    # level 28 before the linear clock passes 5 nats (1/4 log 2 per level)
    assert math.log(2) - dyadic_partition_sum(NoiseClock.sqrt(), 20) < 1e-3
    linear = [dyadic_partition_sum(NoiseClock.power(1.0, 1.0), k) for k in (14, 15, 16)]
    assert np.diff(linear) == pytest.approx([math.log(2) / 4] * 2, rel=2e-3)
    assert linear[-1] + 12 * math.log(2) / 4 > 5.0 > linear[-1] + 11 * math.log(2) / 4


# 5 ---------------------------------------------------------------------------

def test_criterion_5_cross_route_consistency(registry_runs):
    lines, ok = [], True
    for name, (case, stats, _) in registry_runs.items():
        e = stats.drift_energy()
        w = [stats.wealth_increment(i) for i in range(len(WEALTH_MODELS))]
        zs = [(x.mean - e.mean) / math.hypot(x.stderr, e.stderr) for x in w]
        zb = (w[1].mean - w[0].mean) / math.hypot(w[0].stderr, w[1].stderr)
        good = all(abs(z) <= 3 for z in zs) and abs(zb) <= 3
        ok &= good
        lines.append(f"{name} z=({zs[0]:+.2f},{zs[1]:+.2f}) b-inv {zb:+.2f}")
    record_criterion(5, ok, "; ".join(lines))
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_bound_algebra():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 9))
        a = rng.standard_normal((d, int(rng.integers(1, d + 1))))
        cx = a @ a.T  # rank-deficient factors give singular PSD matrices too
        kappa = float(rng.uniform(0.05, 5.0))
        lhs = gaussian_channel_information(cx, kappa * np.eye(d)).nats
        rhs = isotropic_gaussian_bound(CovarianceMatrix(cx).eigenvalues, kappa).nats
        worst = max(worst, abs(lhs - rhs))
    cov = brownian_covariance([0.5, 1.0])
    det_route = gaussian_channel_information(cov, np.eye(2)).nats
    eig_route = isotropic_gaussian_bound(cov.eigenvalues, 1.0).nats
    example_ok = abs(det_route - eig_route) <= 1e-10 and abs(det_route - 0.5 * math.log(2.75)) <= 1e-12

    h_gauss = maxent_entropy("second_moment", 1.0)[0]
    h_lap, law = maxent_entropy("absolute_moment", 1.0)
    maxent_ok = (0.5 * math.log(12.0) < h_gauss                      # uniform, variance 1
                 and 1 + math.log(2 / math.sqrt(2)) < h_gauss          # Laplace, variance 1
                 and 0.5 + math.log(math.pi) < h_lap                   # Gaussian with E|X| = 1
                 and h_lap == 1 + math.log(2 * law.params["scale"])
                 and laplace_perturbation_bound(1.0, 1.0).nats == math.log(2))
    ok = worst <= 1e-10 and example_ok and maxent_ok
    record_criterion(6, ok, f"worst det/eig gap {worst:.1e} over 200 matrices; times (0.5, 1): "
                            f"{det_route:.10f} (quoted 0.505775 is a slip for 1/2 log 2.75); "
                            f"max-entropy inequalities {'hold' if maxent_ok else 'FAIL'}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_orthogonality(registry_runs):
    lines, ok = [], True
    for name, (case, stats, _) in registry_runs.items():
        n = 100_000
        r = _summarize(stats.ortho[:n], stats.ok_drift[:n], stats.truncation)
        good = abs(r.mean) <= 4 * r.stderr
        ok &= good
        lines.append(f"{case.build().kind} {r.mean:+.1e} ({r.mean / r.stderr:+.2f} se)")
    record_criterion(7, ok, "; ".join(lines))
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_8_reproducibility(tmp_path, capsys):
    details, ok = [], True
    for fmt in ("json", "csv"):
        outputs = []
        for workers in (1, 4, 8):
            target = tmp_path / f"verify-{workers}.{fmt}"
            main(["verify", "--seed", "7", "--paths", "2500", "--grid-steps", "300",
                  "--workers", str(workers), f"--{fmt}", "--out", str(target)])
            outputs.append(target.read_bytes())
        capsys.readouterr()
        same = outputs[0] == outputs[1] == outputs[2]
        if fmt == "json":
            json.loads(outputs[0])
        ok &= same
        details.append(f"{fmt} {'identical' if same else 'DIFFERENT'} ({len(outputs[0])} bytes)")
    record_criterion(8, ok, "verify output across 1, 4, 8 workers: " + ", ".join(details))
    assert ok

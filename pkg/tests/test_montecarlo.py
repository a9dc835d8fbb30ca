import csv
import io
import math

import numpy as np
import pytest

from infodrift.drift_catalog import (NoiseClock, dynamic_noise_drift, noisy_terminal_drift,
                                     running_max_drift, terminal_partition_drift)
from infodrift.errors import ParameterError
from infodrift.information import brownian_covariance, gaussian_channel_information
from infodrift.market import MarketModel
from infodrift.montecarlo import (BLOCK_SIZE, REFINEMENT_COLUMNS, SKIPPED_CASES, case_for_drift,
                                  default_grid, drift_energy, get_case, orthogonality,
                                  path_statistics, refinement_study, registry,
                                  utility_increment_by_wealth, verify_identity)
from infodrift.stochastic_core import make_grid

COARSE = make_grid(1.0, 400, 1e-3, 6)


def test_zero_drift_gives_exact_zeros():
    drift = terminal_partition_drift([])
    stats = path_statistics(drift, COARSE, 300, 1, models=(MarketModel(b=-0.5), MarketModel(b=0.5)))
    assert np.all(stats.energy == 0.0)
    assert np.all(stats.wealth == 0.0)
    result = stats.wealth_increment(1)
    assert result.mean == 0.0 and result.stderr == 0.0 and result.violations == 0


def test_stderr_is_sample_sd_over_root_n():
    drift = noisy_terminal_drift(1.0)
    stats = path_statistics(drift, COARSE, 2000, 3)
    result = stats.drift_energy()
    assert result.stderr == pytest.approx(np.std(stats.energy, ddof=1) / math.sqrt(2000), rel=1e-12)
    assert result.mean == pytest.approx(np.mean(stats.energy), rel=1e-13)


def test_stderr_halves_when_paths_quadruple():
    drift = noisy_terminal_drift(1.0)
    small = drift_energy(drift, COARSE, 2048, 5)
    large = drift_energy(drift, COARSE, 8192, 5)
    assert large.stderr / small.stderr == pytest.approx(0.5, abs=0.08)


def test_results_do_not_depend_on_worker_count():
    drift = terminal_partition_drift([0.0])
    n = 2 * BLOCK_SIZE + 77
    one = path_statistics(drift, COARSE, n, 9, models=MarketModel(b=0.5), workers=1)
    three = path_statistics(drift, COARSE, n, 9, models=MarketModel(b=0.5), workers=3)
    for key in ("energy", "ortho", "wealth"):
        assert np.array_equal(getattr(one, key), getattr(three, key), equal_nan=True)
    assert one.drift_energy() == three.drift_energy()


def test_prefix_of_a_run_is_a_smaller_run():
    drift = noisy_terminal_drift(2.0)
    big = path_statistics(drift, COARSE, 1500, 4)
    small = path_statistics(drift, COARSE, 700, 4)
    assert np.array_equal(big.energy[:700], small.energy)


def test_noisy_terminal_energy_and_wealth_routes():
    drift = noisy_terminal_drift(3.0)
    target = 0.5 * math.log(4 / 3)
    energy = drift_energy(drift, COARSE, 20000, 11)
    assert abs(energy.mean - target) <= 3 * energy.stderr
    for b in (-0.5, 0.5):
        wealth = utility_increment_by_wealth(drift, MarketModel(b=b), COARSE, 20000, 11)
        assert abs(wealth.mean - energy.mean) <= 3 * math.hypot(wealth.stderr, energy.stderr)
        assert wealth.violations == 0


def test_information_decreases_with_noise():
    grid = make_grid(1.0, 200, 1e-3, 6)
    results = [drift_energy(noisy_terminal_drift(w), grid, 8000, 13) for w in (0.5, 1.0, 2.0, 4.0)]
    for a, b in zip(results, results[1:]):
        assert a.mean - b.mean > 2 * math.hypot(a.stderr, b.stderr)


def test_increment_respects_gaussian_channel_bound():
    drift = noisy_terminal_drift(1.0)
    bound = gaussian_channel_information(brownian_covariance([1.0]), [[1.0]], gaussian_signal=False)
    result = drift_energy(drift, COARSE, 8000, 17)
    assert bound.kind == "upper_bound"
    assert result.mean <= bound.nats + 3 * result.stderr


def test_dynamic_noise_energy_against_truncated_total():
    drift = dynamic_noise_drift(NoiseClock.sqrt())
    result = drift_energy(drift, COARSE, 20000, 19)
    eps = 1.0 - result.truncation["integration_end"]
    # 1/2 int_eps^1 dy / (y + sqrt y) = log 2 - log(1 + sqrt eps)
    target = math.log(2) - math.log1p(math.sqrt(eps))
    assert abs(result.mean - target) <= 3 * result.stderr + 2e-3


@pytest.mark.parametrize("drift", [noisy_terminal_drift(0.5), running_max_drift(1.0),
                                   terminal_partition_drift([-0.5, 0.5]),
                                   dynamic_noise_drift(NoiseClock.sqrt())])
def test_orthogonality_small_budget(drift):
    result = orthogonality(drift, COARSE, 4000, 23)
    assert abs(result.mean) <= 4 * result.stderr


def test_violations_are_counted_not_dropped():
    # a near-bridge drift on a 4-step grid overshoots and ruins some paths
    drift = noisy_terminal_drift(1e-4)
    grid = make_grid(1.0, 4)
    result = utility_increment_by_wealth(drift, MarketModel(b=0.5), grid, 2000, 29)
    assert result.violations > 0
    assert result.n_paths + result.violations == 2000
    assert 0 < result.violation_rate < 1


def test_truncation_is_reported():
    result = drift_energy(running_max_drift(1.0), COARSE, 64, 1)
    assert result.truncation["tail_cut"] == 1e-3
    assert result.truncation["tail_levels"] == 6
    assert result.truncation["integration_end"] == COARSE.times[-2]
    nt = drift_energy(noisy_terminal_drift(1.0), COARSE, 64, 1)
    assert nt.truncation["integration_end"] == 1.0


def test_argument_validation():
    drift = noisy_terminal_drift(1.0)
    with pytest.raises(ParameterError):
        drift_energy(drift, make_grid(2.0, 10), 10, 0)
    with pytest.raises(ParameterError):
        drift_energy(drift, COARSE, 0, 0)
    with pytest.raises(ParameterError):
        utility_increment_by_wealth(drift, MarketModel(T=2.0), COARSE, 10, 0)


# ------------------------------- registry -------------------------------------

def test_registry_contents_and_targets():
    cases = registry()
    assert list(cases) == ["NT-1", "PART-2", "PART-3", "MAX-1", "DYN-1"]
    assert cases["NT-1"].target() == pytest.approx(0.5 * math.log(2), rel=1e-14)
    assert cases["PART-2"].target() == pytest.approx(math.log(2), rel=1e-14)
    assert cases["PART-3"].target() == pytest.approx(math.log(3), rel=1e-12)
    assert cases["MAX-1"].target() == pytest.approx(0.6248255486, abs=1e-9)
    assert cases["DYN-1"].target() == pytest.approx(math.log(2), abs=1e-10)


def test_registry_misses():
    assert "BOUND-1" in SKIPPED_CASES
    with pytest.raises(ParameterError, match="skipped"):
        get_case("BOUND-1")
    with pytest.raises(ParameterError):
        get_case("NT-9")


def test_case_for_drift_targets():
    assert case_for_drift(noisy_terminal_drift(3.0)).target() == pytest.approx(0.5 * math.log(4 / 3))
    assert case_for_drift(terminal_partition_drift([0.0])).target() == pytest.approx(math.log(2))
    assert case_for_drift(running_max_drift(1.0)).target() == pytest.approx(get_case("MAX-1").target())


def test_verify_identity_small_budget_is_underpowered():
    report = verify_identity("PART-2", n_paths=100, seed=7)
    assert report.verdict["underpowered"] and not report.passed
    assert report.n_paths == 100
    assert report.increment_analytic == pytest.approx(math.log(2))
    assert set(report.verdict["wealth"]) == {"b", "mean", "stderr", "violations"}


def test_verify_identity_passes_on_a_modest_budget():
    report = verify_identity("NT-1", n_paths=20000, seed=7, steps=500)
    v = report.verdict
    assert report.passed, v
    assert v["consistent"]
    assert report.u_uninformed == 0.125  # b = 0: (1/2)^2 / 2
    assert report.u_insider == pytest.approx(0.125 + report.increment_mc)
    assert report.increment_mc >= -3 * report.stderr_mc


def test_refinement_study_halves_tail_cut():
    study = refinement_study("NT-1", n_paths=512, seed=3, steps=200)
    cuts = [row["tail_cut"] for row in study.rows]
    assert cuts == [1e-3, 5e-4, 2.5e-4]
    rows = list(csv.reader(io.StringIO(study.to_csv())))
    assert tuple(rows[0]) == REFINEMENT_COLUMNS and len(rows) == 4
    assert set(study.extrapolated) == {"energy", "energy_stderr", "wealth", "wealth_stderr"}
    assert study.extrapolated["energy_stderr"] > study.rows[-1]["energy_stderr"]


def test_default_grid_matches_documented_budget():
    grid = default_grid()
    # 2000 uniform steps, six halvings and the closing step to T
    assert len(grid) - 1 == 2000 + 6 + 1 and grid.tail_cut == 1e-3

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infodrift.drift_catalog import NoiseClock
from infodrift.errors import ParameterError, QuadratureError
from infodrift.partition_measure import (MESH_STUDY_COLUMNS, PartitionMeasure, dyadic_partition_sum,
                                         mesh_study, pi_cell, pi_partition_sum, pi_total)
from infodrift.stochastic_core import make_grid, quadrature

SQRT = NoiseClock.sqrt()
LINEAR = NoiseClock.power(1.0, 1.0)
ONE = NoiseClock.constant(1.0)
HALF_LOG2 = 0.5 * math.log(2)


def test_cell_examples():
    assert pi_cell(SQRT, 0.4, 0.4) == 0.0
    assert pi_cell(SQRT, 0.0, 1.0) == pytest.approx(HALF_LOG2, rel=1e-15)
    assert pi_cell(SQRT, 0.0, 0.5) == pytest.approx(0.5 * math.log(2 / 1.5), rel=1e-15)
    assert pi_cell(SQRT, 1.0, 1.0) == 0.0
    assert pi_cell(NoiseClock.constant(0.0), 0.5, 1.0) == math.inf
    with pytest.raises(ParameterError):
        pi_cell(SQRT, 0.6, 0.5)


def test_partition_sum_examples():
    assert pi_partition_sum(SQRT, [0.0, 1.0]) == pytest.approx(HALF_LOG2, rel=1e-15)
    refined = pi_partition_sum(SQRT, [0.0, 0.5, 1.0])
    assert HALF_LOG2 < refined <= math.log(2)
    assert pi_partition_sum(ONE, [0.0, 1.0]) == pytest.approx(HALF_LOG2, rel=1e-15)
    assert pi_partition_sum(SQRT, make_grid(1.0, 4, 0.1, 3)) > refined
    with pytest.raises(ParameterError):
        pi_partition_sum(SQRT, [0.0, 0.5])


def test_total_examples():
    assert pi_total(SQRT) == pytest.approx(math.log(2), abs=1e-10)
    assert pi_total(ONE) == pytest.approx(HALF_LOG2, abs=1e-10)
    assert pi_total(LINEAR) == math.inf
    assert pi_total(NoiseClock.power(2.0, 1.5)) == math.inf


@given(st.floats(0.05, 20.0), st.floats(0.02, 0.95))
def test_total_matches_power_clock_closed_form(C, p):
    # v = y^(1-p) turns the integral into 1/(1-p) int_0^1 dv / (C + v)
    exact = 0.5 * math.log1p(1.0 / C) / (1.0 - p)
    assert pi_total(NoiseClock.power(C, p)) == pytest.approx(exact, rel=1e-9)


def test_total_against_mpmath_for_a_non_power_shape():
    mpmath.mp.dps = 30
    oracle = 0.5 * mpmath.quad(lambda y: 1 / (y + 0.3), [0, 1])
    assert pi_total(NoiseClock.constant(0.3)) == pytest.approx(float(oracle), abs=1e-10)


def test_total_near_critical_exponent_fails_loudly():
    # at p = 0.99 the tail decays too slowly for the probes to settle; the
    # exact total is 1/2 * log(2) / (1 - p) = 34.657...
    with pytest.raises(QuadratureError) as info:
        pi_total(NoiseClock.power(1.0, 0.99))
    assert info.value.estimate == pytest.approx(50 * math.log(2), rel=0.01)


def _dyadic_refinement(data, depth):
    """A random partition of [0, 1] whose points are dyadic of order ``depth``."""
    keep = data.draw(st.lists(st.booleans(), min_size=2 ** depth - 1, max_size=2 ** depth - 1))
    inner = [k / 2 ** depth for k, flag in enumerate(keep, start=1) if flag]
    return [0.0, *inner, 1.0]


clocks = st.one_of(
    st.builds(NoiseClock.power, st.floats(0.1, 4.0), st.floats(0.05, 2.0)),
    st.builds(NoiseClock.constant, st.floats(0.0, 3.0)),
)


@given(clocks, st.data())
def test_refinement_never_decreases_the_sum(g, data):
    coarse = _dyadic_refinement(data, 4)
    extra = data.draw(st.lists(st.integers(1, 2 ** 6 - 1), max_size=12))
    fine = sorted(set(coarse) | {k / 2 ** 6 for k in extra})
    # a vanishing clock makes both sums huge and equal up to rounding
    before, after = pi_partition_sum(g, coarse), pi_partition_sum(g, fine)
    if math.isinf(before):
        assert after == math.inf
    else:
        assert after >= before - 1e-14 * max(1.0, before)


@given(st.floats(0.1, 4.0), st.floats(0.05, 0.9), st.data())
def test_sums_are_bounded_by_the_total(C, p, data):
    g = NoiseClock.power(C, p)
    total = pi_total(g)
    assert pi_partition_sum(g, _dyadic_refinement(data, 7)) <= total + 1e-10


@given(st.floats(0.0, 0.95), st.floats(0.01, 1.0))
def test_first_column_cell_matches_residual_energy_difference(s, frac):
    # the cell [0, s] x (s, t] is the residual energy F(s, s) - F(s, t) of the
    # insider who froze the signal at s: 1/2 int_s^t du / (1 - u + g(1 - s))
    t = s + frac * (1.0 - s)
    g_s = float(SQRT(1.0 - s))
    residual = 0.5 * quadrature(lambda u: 1.0 / (1.0 - u + g_s), s, t, tol=1e-13)
    assert pi_cell(SQRT, s, t) == pytest.approx(residual, abs=1e-12)


def test_dyadic_sum_matches_explicit_partition():
    for level in (1, 3, 7):
        times = np.linspace(0.0, 1.0, 2 ** level + 1)
        assert dyadic_partition_sum(SQRT, level) == pytest.approx(pi_partition_sum(SQRT, times), rel=1e-14)


def test_sqrt_mesh_study_is_monotone_and_bounded():
    study = mesh_study(SQRT, 12)
    assert all(b >= a for a, b in zip(study.values, study.values[1:]))
    assert max(study.values) <= study.limit_ref
    assert study.limit_ref == pytest.approx(math.log(2), abs=1e-10)
    assert study.meshes[-1] == 2.0 ** -12


def test_sqrt_gap_shrinks_like_root_mesh():
    gaps = [math.log(2) - dyadic_partition_sum(SQRT, k) for k in (10, 12, 14, 16)]
    ratios = [b / a for a, b in zip(gaps, gaps[1:])]
    assert ratios == pytest.approx([0.5] * 3, abs=0.02)
    assert 0.010 < gaps[1] < 0.012  # so mesh 2^-12 is not yet within 1e-3


def test_linear_clock_grows_without_bound():
    values = [dyadic_partition_sum(LINEAR, k) for k in range(1, 17)]
    steps = np.diff(values)
    assert np.all(steps > 0.9 * math.log(2) / 4)
    assert steps[-1] == pytest.approx(math.log(2) / 4, rel=1e-3)
    assert mesh_study(LINEAR, 4).divergent


def test_mesh_study_csv():
    study = mesh_study(ONE, 3)
    lines = study.to_csv().splitlines()
    assert lines[0] == ",".join(MESH_STUDY_COLUMNS)
    assert len(lines) == 4
    row = lines[-1].split(",")
    assert int(row[0]) == 3 and float(row[1]) == 0.125
    assert float(row[3]) == pytest.approx(HALF_LOG2, abs=1e-10)
    assert float(row[4]) == pytest.approx(HALF_LOG2 - study.values[-1], abs=1e-15)


def test_partition_measure_object():
    measure = PartitionMeasure.of(SQRT)
    assert measure.finite and measure.cell(0.0, 1.0) == pytest.approx(HALF_LOG2)
    assert not PartitionMeasure.of(LINEAR).finite
    with pytest.raises(ParameterError):
        mesh_study(SQRT, 0)
    with pytest.raises(ParameterError):
        pi_total(lambda y: y)

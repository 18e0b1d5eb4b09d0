import math

import numpy as np
import pytest

from errors import DomainError, NumericalError
from services.damping_service import ConstantDamping, CosineDamping
from services.grid_service import TorusGrid
from services.observe_service import (
    ObservationWindow,
    decay_bookkeeping,
    measure_window_fractions,
    observability_curve,
    observability_ratio,
    observed_quantity,
    sandwich_check,
    short_time_sweep,
    trig_integral,
    window_checkpoints,
)
from services.solver_service import SolverConfig, WaveState, evolve, random_band_limited, single_mode


@pytest.fixture
def grid():
    return TorusGrid(1, 32)


def test_single_mode_constant_ratio(grid):
    # E = 2 pi and the observed quantity is a * 4 pi * pi over a full window
    a, T = 0.5, 2 * math.pi
    state = single_mode(grid, [2], 1.0, 0.0)
    ratio = observability_ratio(state, ObservationWindow(0.0, T, ConstantDamping(a)))
    assert ratio == pytest.approx(1.0 / (a * T), rel=1e-6)


def test_observability_curve_is_flat_for_one_mode(grid):
    a = 0.5
    state = single_mode(grid, [2], 1.0, 0.0)
    values = observability_curve(state, ConstantDamping(a), math.pi, [0.0, math.pi / 2, 1.0], SolverConfig(dt=1e-3))
    np.testing.assert_allclose(values, 1.0 / (a * math.pi), rtol=1e-6)


def test_unobservable_window(grid):
    state = single_mode(grid, [1], 1.0, 0.0)
    with pytest.raises(NumericalError):
        observability_ratio(state, ObservationWindow(0.0, 1.0, None))
    assert observed_quantity(state, ObservationWindow(0.0, 1.0, None)) == 0.0


@pytest.mark.parametrize("factor", [3.0, -0.5, 2j])
def test_ratio_is_invariant_under_scaling_the_data(grid, factor):
    state = random_band_limited(grid, seed=5, band=8)
    scaled = WaveState(state.u.with_values(factor * state.u.values), state.v.with_values(factor * state.v.values), state.t)
    window = ObservationWindow(0.5, 3.0, CosineDamping(1.0, 0.5))
    config = SolverConfig(dt=2e-3)
    assert observability_ratio(scaled, window, config) == pytest.approx(observability_ratio(state, window, config), rel=1e-10)


def test_window_validation():
    with pytest.raises(DomainError):
        ObservationWindow(-1.0, 1.0)
    with pytest.raises(DomainError):
        ObservationWindow(0.0, 0.0)


def test_observed_quantity_from_trace_requires_coverage(grid):
    W = ConstantDamping(0.1)
    _, trace = evolve(single_mode(grid, [1]), W, 1.0, SolverConfig(dt=1e-2), checkpoints=[0.5])
    assert observed_quantity(trace, ObservationWindow(0.5, 0.5, W)) > 0
    with pytest.raises(DomainError):
        observed_quantity(trace, ObservationWindow(0.5, 1.0, W))


def test_sandwich_constant_damping(grid):
    report = sandwich_check(random_band_limited(grid, seed=0, band=8), ConstantDamping(0.1), 2.0, SolverConfig(dt=1e-3))
    assert report.holds
    assert report.C_T == pytest.approx(1.4)
    assert report.slack_lower >= -1e-8
    assert report.slack_upper >= 0


def test_trig_integral():
    assert trig_integral(1.0, 0.0, 1.0, math.pi) == pytest.approx(math.pi / 2)
    assert trig_integral(0.0, 1.0, 2.0, math.pi) == pytest.approx(math.pi / 2)
    # cross term: |-sin t + cos t|^2 = 1 - sin 2t
    assert trig_integral(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0 - (1 - math.cos(2.0)) / 2)


def test_short_time_slopes():
    deltas = np.geomspace(0.01, 0.1, 20)
    assert short_time_sweep(1.0, 0.0, 1.0, deltas).slope == pytest.approx(-3.0, abs=0.05)
    assert short_time_sweep(0.0, 1.0, 1.0, deltas).slope == pytest.approx(-1.0, abs=0.05)
    with pytest.raises(DomainError):
        short_time_sweep(1.0, 0.0, 1.0, [0.0, 0.1])


def test_short_time_table_csv(tmp_path):
    table = short_time_sweep(1.0, 0.0, 2.0, [0.1, 0.2])
    path = tmp_path / "short.csv"
    table.to_csv(path)
    assert path.read_text().splitlines()[0] == "delta,integral,ratio,C"
    np.testing.assert_allclose(table.constants, table.ratios * np.array([0.1, 0.2]) ** 3)


def test_decay_bookkeeping_flags_large_fractions():
    book = decay_bookkeeping([0.5, 1.2, 0.3], 2.0)
    assert book.flagged == [1]
    np.testing.assert_allclose(book.bounds, [1.0, math.exp(-0.5), 0.0, 0.0])
    with pytest.raises(DomainError):
        decay_bookkeeping([-0.1], 1.0)


def test_bookkeeping_against_measured_energy(grid):
    W = ConstantDamping(0.2)
    T0, t_end = 1.0, 4.0
    checkpoints = window_checkpoints(t_end, T0)
    assert checkpoints == [1.0, 2.0, 3.0, 4.0]
    _, trace = evolve(random_band_limited(grid, seed=5, band=8), W, t_end, SolverConfig(dt=1e-2, scheme="strang"),
                      checkpoints=checkpoints)
    b = measure_window_fractions(trace, T0)
    assert b.shape == (4,)
    assert np.all(b > 0)
    book = decay_bookkeeping(b, T0, trace)
    assert book.holds
    assert book.measured[0] == pytest.approx(1.0)

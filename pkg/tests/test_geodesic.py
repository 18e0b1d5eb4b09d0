import math

import numpy as np
import pytest

from errors import DomainError, NumericalError
from services.damping_service import ConstantDamping, CosineDamping, GrowingOff, IntervalLengths, PolyProduct, SpaceBump
from services.geodesic_service import (
    Geodesic,
    GeodesicSampling,
    L_curve,
    L_infinity,
    check_tgcc,
    direction_angles,
    line_integral,
    line_integral_curve,
    propagator_G,
    quadrature_nodes,
    sample_geodesics,
    sigma,
    sigma_curve,
    window_minimum,
)

FAST = GeodesicSampling(n_points=4, n_directions=4, n_start_times=16, t0_max=40.0, refine=False)


def growing_off():
    return GrowingOff(ConstantDamping(1.0), 1.0, IntervalLengths("power", 1.0, alpha=1.0))


def test_geodesic_wraps_and_checks_direction():
    gamma = Geodesic([6.0], [1.0])
    np.testing.assert_allclose(gamma.position(1.0), [(7.0) % (2 * math.pi)])
    with pytest.raises(DomainError):
        Geodesic([0.0, 0.0], [1.0, 1.0])


def test_direction_angles_include_axes_and_diagonals():
    assert len(direction_angles(4)) == 8
    assert len(direction_angles(8)) == 8
    assert len(direction_angles(3)) == 10


def test_sample_geodesics_counts():
    assert len(sample_geodesics(1, FAST)) == 8
    assert len(sample_geodesics(2, FAST)) == 16 * 8


def test_quadrature_splits_at_switch_times():
    nodes, weights, cuts = quadrature_nodes(growing_off(), 0.0, 6.0, 0.01)
    np.testing.assert_allclose(cuts, [0.0, 1.0, 2.0, 3.0, 5.0, 6.0])
    assert weights.sum() == pytest.approx(6.0)
    assert not np.any(np.isin(nodes, cuts))


def test_line_integral_of_cosine_over_period():
    W = CosineDamping(1.0, 1.0)
    value = line_integral(W, Geodesic([0.0], [1.0]), 0.0, 2 * math.pi)
    assert value == pytest.approx(2 * math.pi, rel=1e-10)


def test_line_integral_counts_on_time():
    value = line_integral(growing_off(), Geodesic([0.0], [1.0]), 0.0, 6.0)
    assert value == pytest.approx(3.0, rel=1e-12)


def test_propagator_of_constant_damping():
    gamma = Geodesic([1.0], [-1.0])
    assert propagator_G(ConstantDamping(0.2), gamma, 1.0, 3.5) == pytest.approx(math.exp(-0.5))
    assert propagator_G(None, gamma, 0.0, 3.0) == 1.0
    with pytest.raises(DomainError):
        propagator_G(ConstantDamping(0.2), gamma, 2.0, 1.0)


def test_line_integral_curve_matches_pointwise():
    W = growing_off()
    gamma = Geodesic([0.0], [1.0])
    curve = line_integral_curve(W, gamma, 0.5, [1.0, 2.5, 5.5])
    np.testing.assert_allclose(curve, [0.5, 1.0, 2.0], rtol=1e-12)


def test_sigma_of_constant_damping_is_linear():
    W = ConstantDamping(0.1)
    report = sigma(W, 10.0, FAST)
    assert report.value == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(sigma_curve(W, [0.0, 1.0, 5.0], FAST), [0.0, 0.1, 0.5], rtol=1e-12, atol=1e-15)


def test_sigma_curve_is_nondecreasing():
    curve = sigma_curve(growing_off(), np.linspace(0, 20, 41), FAST)
    assert np.all(np.diff(curve) >= 0)
    assert curve[-1] == pytest.approx(growing_off().on_duration(20.0), rel=1e-12)


def test_strip_bump_misses_vertical_geodesics():
    W = SpaceBump(1.0, [math.pi, 0.0], 1.5, axes=[0])
    report = sigma(W, 5.0, FAST, dim=2)
    assert report.value == 0.0
    assert report.witness is not None


def test_tgcc_constant_damping_holds():
    report = check_tgcc(ConstantDamping(0.3), 1.0, FAST)
    assert report.satisfied
    assert report.value == pytest.approx(0.3, rel=1e-12)
    assert [T for T, _ in report.curve] == [1.0, 2.0, 4.0]


def test_tgcc_growing_gaps_fail():
    report = check_tgcc(growing_off(), 1.0, FAST)
    assert not report.satisfied
    assert report.value == 0.0
    assert report.to_dict()["satisfied"] is False


def test_L_curve_for_constant():
    curve = L_curve(ConstantDamping(0.5), [1.0, 2.0], FAST)
    assert curve == [(1.0, pytest.approx(0.5)), (2.0, pytest.approx(0.5))]


def test_negative_inputs():
    with pytest.raises(DomainError):
        sigma(ConstantDamping(1.0), -1.0, FAST)
    with pytest.raises(DomainError):
        check_tgcc(ConstantDamping(1.0), 0.0, FAST)


def test_quadrature_merges_jittered_cuts_and_sizes_pieces():
    nodes, weights, cuts = quadrature_nodes(growing_off(), 0.0, 6.0, 0.01, breaks=[0.3, 0.1 + 0.2, 2.0 + 1e-15])
    np.testing.assert_allclose(cuts, [0.0, 0.3, 1.0, 2.0, 3.0, 5.0, 6.0])
    assert nodes.size < 700
    assert weights.sum() == pytest.approx(6.0)


def test_quadrature_refuses_runaway_node_counts():
    with pytest.raises(NumericalError):
        quadrature_nodes(ConstantDamping(1.0), 0.0, 1e9, 0.01)


def test_sigma_curve_on_dense_jittered_times():
    W = growing_off()
    times = np.concatenate([np.arange(0.0, 20.0, 1e-3), [0.1 + 0.2, 0.3]])
    times = np.unique(times)
    curve = sigma_curve(W, times, FAST)
    assert curve.shape == times.shape
    for t in (0.3, 1.5, 2.5, 19.0):
        i = int(np.argmin(np.abs(times - t)))
        assert curve[i] == pytest.approx(W.on_duration(times[i]), abs=1e-9)


def test_propagator_is_one_on_an_empty_interval():
    gamma = Geodesic([0.5, 1.0], [1.0, 0.0])
    assert propagator_G(PolyProduct(CosineDamping(1.0, 0.5, (1, 1)), 0.5), gamma, 3.0, 3.0) == 1.0
    assert propagator_G(None, gamma, 0.0, 2.0) == 1.0


def test_L_infinity_of_constant_is_its_value():
    assert L_infinity(ConstantDamping(0.7), FAST, 8.0, levels=4) == pytest.approx(0.7, rel=1e-12)
    assert L_infinity(None, FAST, 8.0) == 0.0
    with pytest.raises(DomainError):
        L_infinity(ConstantDamping(0.7), FAST, 0.0)


def test_t_times_L_is_superadditive():
    # start time 0 only and shifts by multiples of the point spacing keep the geodesic set closed
    W = SpaceBump(1.0, [math.pi], 1.5)
    sampling = GeodesicSampling(n_points=8, t0_max=0.0, refine=False, quadrature_step=1e-3)
    quarter = math.pi / 4
    for m, n in ((1, 1), (1, 3), (2, 3), (2, 5), (4, 4)):
        s, t = m * quarter, n * quarter
        joined = (s + t) * window_minimum(W, s + t, sampling).value
        split = s * window_minimum(W, s, sampling).value + t * window_minimum(W, t, sampling).value
        assert joined >= split - 1e-5


def test_L_decreases_under_sampling_refinement():
    W = PolyProduct(CosineDamping(1.0, 0.5, (1, 1)), 0.5)
    fine = GeodesicSampling(n_points=8, n_directions=8, n_start_times=31, t0_max=40.0, refine=False)
    for T in (1.0, 3.0, 6.0):
        coarse_value = window_minimum(W, T, FAST, dim=2).value
        fine_value = window_minimum(W, T, fine, dim=2).value
        assert coarse_value > 0
        assert fine_value <= coarse_value + 1e-12


def test_workers_do_not_change_results():
    W = PolyProduct(CosineDamping(1.0, 0.5, (1, 1)), 0.5)
    threaded = GeodesicSampling(n_points=4, n_directions=4, n_start_times=16, t0_max=40.0, refine=False, workers=3)
    times = np.linspace(0.0, 10.0, 11)
    np.testing.assert_array_equal(sigma_curve(W, times, threaded, dim=2), sigma_curve(W, times, FAST, dim=2))
    assert window_minimum(W, 2.0, threaded, dim=2).value == window_minimum(W, 2.0, FAST, dim=2).value
    with pytest.raises(DomainError):
        GeodesicSampling(workers=0)

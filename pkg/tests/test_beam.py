import math

import numpy as np
import pytest

from errors import DomainError, NumericalError
from services.beam_service import (
    BeamSpec,
    ConvergenceStudy,
    beam_field,
    beam_vs_exact,
    grid_for,
    image_shell,
    loglog_slope,
    propagate_frame,
    propagate_frames,
    quasi_solution,
    residual_norm,
    residual_study,
)
from services.damping_service import ConstantDamping
from services.geodesic_service import Geodesic
from services.grid_service import TorusGrid, energy
from services.solver_service import SolverConfig


def line_beam(k=32):
    return BeamSpec(Geodesic([0.0], [1.0]), k)


def test_beam_spec_validation():
    with pytest.raises(DomainError):
        BeamSpec(Geodesic([0.0], [1.0]), 0.5)
    with pytest.raises(DomainError):
        BeamSpec(Geodesic([0.0, 0.0], [1.0, 0.0]), 8, M0=np.array([[1j, 0.5], [0.0, 1j]]))
    with pytest.raises(DomainError):
        BeamSpec(Geodesic([0.0], [1.0]), 8, M0=np.array([[-1j]]))


def test_default_amplitude_normalization():
    assert line_beam().initial_amplitude() == pytest.approx(math.pi ** -0.25)
    planar = BeamSpec(Geodesic([0.0, 0.0], [1.0, 0.0]), 8)
    assert planar.initial_amplitude() == pytest.approx(math.pi ** -0.5)


def test_grid_for_powers_of_two():
    assert grid_for(32, 1).points_per_axis == 128
    assert grid_for(33, 2).points_per_axis == 256
    assert grid_for(1, 1).points_per_axis == 4


def test_riccati_on_the_plane():
    spec = BeamSpec(Geodesic([0.0, 0.0], [1.0, 0.0]), 8)
    frame = propagate_frame(spec, 1.0)
    # transverse entry solves 1/M = -i + t
    assert frame.M[1, 1] == pytest.approx((1 + 1j) / 2, abs=1e-10)
    assert frame.M[0, 0] == pytest.approx(1j, abs=1e-12)
    assert abs(frame.b0) == pytest.approx(math.pi ** -0.5 * 2 ** -0.25, rel=1e-10)
    np.testing.assert_allclose(frame.gamma_pos, [1.0, 0.0])


def random_beam(rng):
    dim = int(rng.integers(1, 3))
    if dim == 1:
        gamma = Geodesic([rng.uniform(0, 2 * math.pi)], [rng.choice([-1.0, 1.0])])
    else:
        gamma = Geodesic.from_angle(rng.uniform(0, 2 * math.pi, 2), rng.uniform(0, 2 * math.pi))
    A = rng.uniform(-1, 1, (dim, dim))
    C = rng.uniform(-0.5, 0.5, (dim, dim))
    M0 = 0.5 * (A + A.T) + 1j * (C @ C.T + 0.5 * np.eye(dim))
    return BeamSpec(gamma, 16, M0=M0, t0=float(rng.uniform(0, 5)))


def test_im_M_stays_positive_definite_on_random_beams():
    rng = np.random.default_rng(11)
    for _ in range(50):
        spec = random_beam(rng)
        times = np.linspace(spec.t0, spec.t0 + 20.0, 11)
        P = np.outer(spec.gamma.direction, spec.gamma.direction)
        Q = np.eye(spec.dim) - P
        for t, frame in zip(times, propagate_frames(spec, times, frame_dt=1e-2)):
            assert np.min(np.linalg.eigvalsh(frame.M.imag)) > 0
            # M^-1 moves by (t - t0) times the transverse projector
            closed = np.linalg.inv(np.linalg.inv(spec.M0) + (t - spec.t0) * Q)
            np.testing.assert_allclose(frame.M, closed, atol=1e-6)


def test_beam_energy_close_to_one():
    spec = line_beam(64)
    grid = grid_for(64, 1)
    u, v = beam_field(spec, grid, 0.5)
    assert energy(u, v) == pytest.approx(1.0, abs=0.02)


def test_under_resolved_grid_rejected():
    with pytest.raises(DomainError):
        beam_field(line_beam(64), TorusGrid(1, 128), 0.0)


def test_undamped_quasi_solution_is_the_beam():
    spec = line_beam(16)
    grid = grid_for(16, 1)
    u, v = quasi_solution(spec, None, grid, 0.3)
    bu, bv = beam_field(spec, grid, 0.3)
    np.testing.assert_array_equal(u.values, bu.values)
    np.testing.assert_array_equal(v.values, bv.values)


def test_damped_quasi_solution_is_scaled():
    spec = line_beam(16)
    grid = grid_for(16, 1)
    u, _ = quasi_solution(spec, ConstantDamping(0.2), grid, 1.0)
    bu, _ = beam_field(spec, grid, 1.0)
    np.testing.assert_allclose(u.values, math.exp(-0.2) * bu.values, rtol=1e-12)


def test_constant_damping_residual_is_a_squared_u():
    spec = line_beam(64)
    grid = grid_for(64, 1)
    a = 0.2
    u, _ = quasi_solution(spec, ConstantDamping(a), grid, 1.0)
    expected = a * a * math.sqrt(np.sum(np.abs(u.values) ** 2) * grid.cell_volume)
    assert residual_norm(spec, ConstantDamping(a), grid, 1.0) == pytest.approx(expected, rel=1e-4)


def test_residual_decays_with_k():
    study = residual_study(line_beam(), ConstantDamping(0.2), [32.0, 64.0, 128.0], 1.0)
    assert study.slope == pytest.approx(-1.0, abs=0.05)
    assert study.passes(-0.4)


def test_residual_study_on_worker_threads_matches_serial():
    serial = residual_study(line_beam(), ConstantDamping(0.2), [32.0, 64.0], 1.0)
    threaded = residual_study(line_beam(), ConstantDamping(0.2), [32.0, 64.0], 1.0, workers=2)
    assert threaded.values == serial.values


def test_loglog_slope_and_study():
    assert loglog_slope([1, 2, 4], [1.0, 0.5, 0.25]) == pytest.approx(-1.0)
    exact = ConvergenceStudy("residual", [1, 2], [0.0, 0.0], float("nan"), exact=True)
    assert exact.passes(-0.4)


def test_beam_vs_exact_follows_propagator():
    spec = line_beam(16)
    comparison = beam_vs_exact(spec, ConstantDamping(0.2), grid_for(16, 1), 1.0, SolverConfig(dt=5e-3, scheme="strang"))
    assert comparison.G_squared[-1] == pytest.approx(math.exp(-0.4))
    assert comparison.retained == pytest.approx(math.exp(-0.4), rel=1e-2)
    assert comparison.lower_bound_holds


def test_image_shell_grows_with_beam_width():
    period = 2 * math.pi
    narrow = line_beam(32)
    assert image_shell(narrow, propagate_frame(narrow, 0.0), period) == 0
    unit = BeamSpec(Geodesic([0.0], [1.0]), 1)
    assert image_shell(unit, propagate_frame(unit, 0.0), period) == 1
    wide = BeamSpec(Geodesic([0.0], [1.0]), 1, M0=np.array([[0.01j]]))
    assert image_shell(wide, propagate_frame(wide, 0.0), period) == 14
    too_wide = BeamSpec(Geodesic([0.0], [1.0]), 1, M0=np.array([[0.005j]]))
    with pytest.raises(NumericalError):
        image_shell(too_wide, propagate_frame(too_wide, 0.0), period)

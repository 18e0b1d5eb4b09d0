"""Gaussian beams on flat tori and their damped quasi-solutions.

A beam of wavenumber k travels along a geodesic gamma with unit direction p:

    u = k**(-1 + n/4) * b0(t) * exp(i k psi),
    psi = <p, y> + 1/2 <M y, y>,  y = x - gamma(t)

with the phase matrix following M' = M p p^T M - M^2 and the amplitude
b0' = -1/2 b0 tr(M (I - p p^T)). Both are integrated with rk4 at a fixed
frame step. The envelope is periodized by summing the neighbouring lattice
images while their Gaussian weight is above round-off.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from errors import DomainError, NumericalError
from services.damping_service import DampingProfile, periodic_offset
from services.geodesic_service import Geodesic, line_integral_curve, parallel_map, propagator_G
from services.grid_service import CSV_FORMAT, Field, FieldKind, TorusGrid, energy, l2_norm, laplacian
from services.solver_service import SolverConfig, WaveState, evolve

logger = logging.getLogger(__name__)

# Beam Service

IMAGE_CUTOFF = 1e-16
MAX_IMAGE_SHELL = 16
ROUNDOFF_RESIDUAL = 1e-10
DERIVATIVE_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class BeamSpec:
    gamma: Geodesic
    k: float
    M0: Optional[np.ndarray] = None
    b0_init: Optional[complex] = None
    t0: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"beam wavenumber must be >= 1, got {self.k}")
        if self.t0 < 0:
            raise DomainError("beam start time must be nonnegative")
        n = self.gamma.dim
        M0 = 1j * np.eye(n) if self.M0 is None else np.atleast_2d(np.asarray(self.M0, dtype=complex))
        if M0.shape != (n, n):
            raise DomainError(f"M0 must be {n}x{n}")
        if not np.allclose(M0, M0.T, atol=1e-12):
            raise DomainError("M0 must be symmetric")
        if np.min(np.linalg.eigvalsh(M0.imag)) <= 0:
            raise DomainError("Im M0 must be positive definite")
        object.__setattr__(self, "M0", M0)

    @property
    def dim(self) -> int:
        return self.gamma.dim

    def initial_amplitude(self) -> complex:
        """b0 at t0; normalized so the beam energy tends to 1 unless given."""
        if self.b0_init is not None:
            return complex(self.b0_init)
        det = float(np.linalg.det(self.M0.imag))
        return complex(det ** 0.25 / math.pi ** (self.dim / 4))

    def with_k(self, k: float) -> "BeamSpec":
        return BeamSpec(self.gamma, k, self.M0, self.b0_init, self.t0)

    def describe(self) -> Dict:
        return {
            "gamma": self.gamma.describe(),
            "k": self.k,
            "M0_re": self.M0.real.tolist(),
            "M0_im": self.M0.imag.tolist(),
            "b0_init": None if self.b0_init is None else [complex(self.b0_init).real, complex(self.b0_init).imag],
            "t0": self.t0,
        }


@dataclass(frozen=True, eq=False)
class BeamFrame:
    t: float
    M: np.ndarray
    M_dot: np.ndarray
    b0: complex
    gamma_pos: np.ndarray
    gamma_dir: np.ndarray


def _frame_rhs(M: np.ndarray, b0: complex, P: np.ndarray, Q: np.ndarray):
    M_dot = M @ P @ M - M @ M
    return M_dot, -0.5 * b0 * np.trace(M @ Q)


def _make_frame(spec: BeamSpec, t: float, M: np.ndarray, b0: complex, P: np.ndarray, Q: np.ndarray) -> BeamFrame:
    M_dot, _ = _frame_rhs(M, b0, P, Q)
    return BeamFrame(t, M.copy(), M_dot, b0, spec.gamma.position(t), spec.gamma.direction.copy())


def propagate_frames(spec: BeamSpec, times: Sequence[float], frame_dt: float = Config.BEAM_FRAME_DT) -> List[BeamFrame]:
    """Frames at each requested time (any order), integrating once through them."""
    times = [float(t) for t in times]
    if any(t < spec.t0 for t in times):
        raise DomainError("beam frames exist for t >= t0 only")
    p = spec.gamma.direction
    P = np.outer(p, p)
    Q = np.eye(spec.dim) - P
    M, b0, t = spec.M0.copy(), spec.initial_amplitude(), spec.t0
    frames = {}
    for target in sorted(set(times)):
        n = int(math.ceil((target - t) / frame_dt - 1e-9))
        h = (target - t) / n if n else 0.0
        for _ in range(n):
            k1 = _frame_rhs(M, b0, P, Q)
            k2 = _frame_rhs(M + 0.5 * h * k1[0], b0 + 0.5 * h * k1[1], P, Q)
            k3 = _frame_rhs(M + 0.5 * h * k2[0], b0 + 0.5 * h * k2[1], P, Q)
            k4 = _frame_rhs(M + h * k3[0], b0 + h * k3[1], P, Q)
            M = M + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            b0 = b0 + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            M = 0.5 * (M + M.T)
            if np.min(np.linalg.eigvalsh(M.imag)) <= 0:
                raise NumericalError(f"Im M lost positive definiteness at t={t:.6g}")
            t += h
        t = target
        frames[target] = _make_frame(spec, t, M, b0, P, Q)
    return [frames[t] for t in times]


def propagate_frame(spec: BeamSpec, t: float, frame_dt: float = Config.BEAM_FRAME_DT) -> BeamFrame:
    return propagate_frames(spec, [t], frame_dt)[0]


def image_shell(spec: BeamSpec, frame: BeamFrame, period: float) -> int:
    """Largest |n| among the lattice images n*period whose Gaussian envelope can exceed IMAGE_CUTOFF."""
    smallest = float(np.min(np.linalg.eigvalsh(frame.M.imag)))
    # |exp(ik psi)| <= cutoff once |y| >= reach; image n sits at least (|n| - 1/2) * period away
    reach = math.sqrt(2.0 * math.log(1.0 / IMAGE_CUTOFF) / (spec.k * smallest))
    shell = max(int(math.ceil(reach / period + 0.5)) - 1, 0)
    if shell > MAX_IMAGE_SHELL:
        raise NumericalError(f"beam is too wide to periodize: needs {shell} image shells at t={frame.t:.6g}")
    return shell


def _images(spec: BeamSpec, frame: BeamFrame, period: float) -> List[np.ndarray]:
    shell = image_shell(spec, frame, period)
    offsets = range(-shell, shell + 1)
    return [period * np.array(n, dtype=float) for n in itertools.product(offsets, repeat=spec.dim)]


def _check_grid(spec: BeamSpec, grid: TorusGrid):
    if grid.dim != spec.dim:
        raise DomainError(f"beam on T^{spec.dim} cannot be sampled on a T^{grid.dim} grid")
    if not grid.resolves(spec.k):
        raise DomainError(f"grid N={grid.points_per_axis} does not resolve k={spec.k}; need N >= {4 * spec.k:g}")


def beam_arrays(spec: BeamSpec, frame: BeamFrame, grid: TorusGrid, order: int = 1) -> List[np.ndarray]:
    """[u, u_t] (order 1) or [u, u_t, u_tt] (order 2) sampled on the grid."""
    _check_grid(spec, grid)
    k, n = spec.k, spec.dim
    p, M, M_dot = frame.gamma_dir, frame.M, frame.M_dot
    P = np.outer(p, p)
    Q = np.eye(n) - P
    M_ddot = M_dot @ P @ M + M @ P @ M_dot - M_dot @ M - M @ M_dot
    A = k ** (-1 + n / 4) * frame.b0
    A1 = -0.5 * A * np.trace(M @ Q)
    A2 = -0.5 * (A1 * np.trace(M @ Q) + A * np.trace(M_dot @ Q))
    base = periodic_offset(grid.nodes(), frame.gamma_pos, grid.period)
    out = [np.zeros(grid.shape, dtype=complex) for _ in range(order + 1)]
    for shift in _images(spec, frame, grid.period):
        y = base + shift
        My = y @ M
        psi = y @ p + 0.5 * np.sum(y * My, axis=-1)
        psi_t = -1.0 - My @ p + 0.5 * np.sum(y * (y @ M_dot), axis=-1)
        e = np.exp(1j * k * psi)
        out[0] += A * e
        out[1] += (A1 + 1j * k * A * psi_t) * e
        if order >= 2:
            psi_tt = 0.5 * np.sum(y * (y @ M_ddot), axis=-1) - 2.0 * ((y @ M_dot) @ p) + p @ M @ p
            out[2] += (A2 + 2j * k * A1 * psi_t + 1j * k * A * psi_tt - k * k * A * psi_t ** 2) * e
    return out


def beam_field(spec: BeamSpec, grid: TorusGrid, t: float) -> Tuple[Field, Field]:
    frame = propagate_frame(spec, t)
    u, u_t = beam_arrays(spec, frame, grid)
    return Field(grid, u, FieldKind.POSITION), Field(grid, u_t, FieldKind.VELOCITY)


def _damping_along(W: DampingProfile, spec: BeamSpec, t: float) -> Tuple[float, float]:
    """W(gamma(t), t) and its time derivative along the ray (finite differences)."""
    def w(s):
        return float(W.eval(spec.gamma.position(s)[None, :], s)[0])

    h = DERIVATIVE_STEP
    switches = W.switch_times(t + h)
    near_switch = any(abs(s - t) < h for s in switches)
    value = w(t)
    if t - h < spec.t0 or near_switch:
        return value, (w(t + h) - value) / h
    return value, (w(t + h) - w(t - h)) / (2 * h)


def quasi_solution(spec: BeamSpec, W: Optional[DampingProfile], grid: TorusGrid, t: float) -> Tuple[Field, Field]:
    """G(gamma, t0, t) times the beam, with velocity G*(u_t - W(gamma(t), t)*u)."""
    u, u_t = beam_field(spec, grid, t)
    if W is None:
        return u, u_t
    G = propagator_G(W, spec.gamma, spec.t0, t)
    w_gamma = float(W.eval(spec.gamma.position(t)[None, :], t)[0])
    return u.with_values(G * u.values), u_t.with_values(G * (u_t.values - w_gamma * u.values))


def residual_norm(spec: BeamSpec, W: Optional[DampingProfile], grid: TorusGrid, t: float) -> float:
    """L2 norm of (d_tt - Laplace + 2W d_t) applied to the quasi-solution at time t."""
    frame = propagate_frame(spec, t)
    u, u_t, u_tt = beam_arrays(spec, frame, grid, order=2)
    lap = laplacian(Field(grid, u)).values
    residual = u_tt - lap
    if W is not None:
        G = propagator_G(W, spec.gamma, spec.t0, t)
        w_gamma, w_gamma_dot = _damping_along(W, spec, t)
        W_here = W.eval(grid.nodes(), t)
        residual = G * (
            residual
            - 2.0 * w_gamma * u_t
            + (w_gamma ** 2 - w_gamma_dot) * u
            + 2.0 * W_here * (u_t - w_gamma * u)
        )
    return l2_norm(Field(grid, residual))


def grid_for(k: float, dim: int, period: float = Config.DEFAULT_PERIOD) -> TorusGrid:
    """Smallest power-of-two grid resolving wavenumber k."""
    n = 1 << max(2, int(math.ceil(math.log2(4 * k))))
    return TorusGrid(dim, n, period)


@dataclass
class ConvergenceStudy:
    """Values of one measurement across wavenumbers, with the log-log slope."""

    name: str
    ks: List[float]
    values: List[float]
    slope: float
    exact: bool = False
    meta: Dict = field(default_factory=dict)

    def passes(self, max_slope: float) -> bool:
        return self.exact or self.slope <= max_slope

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "ks": list(self.ks),
            "values": list(self.values),
            "slope": self.slope,
            "exact": self.exact,
            "meta": dict(self.meta),
        }

    def to_csv(self, path) -> None:
        table = np.column_stack([self.ks, self.values])
        np.savetxt(path, table, delimiter=",", header="k,value", comments="", fmt=CSV_FORMAT)


def loglog_slope(ks: Sequence[float], values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        return float("-inf")
    return float(np.polyfit(np.log(ks), np.log(values), 1)[0])


def residual_study(spec: BeamSpec, W: Optional[DampingProfile], ks: Sequence[float], t: float, workers: int = 1) -> ConvergenceStudy:
    def one(k):
        value = residual_norm(spec.with_k(k), W, grid_for(k, spec.dim, spec.gamma.period), t)
        logger.info("residual k=%s t=%s -> %.6g", k, t, value)
        return value

    values = parallel_map(one, ks, workers)
    exact = max(values) < ROUNDOFF_RESIDUAL
    slope = float("nan") if exact else loglog_slope(ks, values)
    return ConvergenceStudy("residual", list(ks), values, slope, exact, {"t": t})


def energy_study(spec: BeamSpec, W: Optional[DampingProfile], ks: Sequence[float], times: Sequence[float], workers: int = 1) -> ConvergenceStudy:
    """sup over `times` of |E(quasi-solution) - G^2| for each k."""
    times = list(times)
    G2 = np.exp(-2.0 * line_integral_curve(W, spec.gamma, spec.t0, times))

    def one(k):
        beam = spec.with_k(k)
        grid = grid_for(k, spec.dim, spec.gamma.period)
        worst = 0.0
        for t, g2 in zip(times, G2):
            u, v = quasi_solution(beam, W, grid, t)
            worst = max(worst, abs(energy(u, v) - g2))
        logger.info("energy defect k=%s -> %.6g", k, worst)
        return worst

    values = parallel_map(one, ks, workers)
    return ConvergenceStudy("energy_defect", list(ks), values, loglog_slope(ks, values), False, {"times": times})


@dataclass
class BeamComparison:
    times: np.ndarray
    E_exact: np.ndarray
    G_squared: np.ndarray
    defect: np.ndarray
    eps: float
    lower_bound_holds: bool

    @property
    def retained(self) -> float:
        """E(t_end) / E(t0) for the exact solution."""
        return float(self.E_exact[-1] / self.E_exact[0])

    def to_csv(self, path) -> None:
        table = np.column_stack([self.times, self.E_exact, self.G_squared, self.defect])
        np.savetxt(path, table, delimiter=",", header="t,E_exact,G_squared,defect", comments="", fmt=CSV_FORMAT)

    def to_dict(self) -> Dict:
        return {
            "sup_defect": self.eps,
            "lower_bound_holds": self.lower_bound_holds,
            "E_t0": float(self.E_exact[0]),
            "E_end": float(self.E_exact[-1]),
            "retained": self.retained,
        }


def beam_vs_exact(
    spec: BeamSpec,
    W: Optional[DampingProfile],
    grid: TorusGrid,
    t_end: float,
    config: SolverConfig = SolverConfig(scheme="strang", dt=5e-3),
) -> BeamComparison:
    """Evolve the exact solution from quasi-solution data and compare its energy with G^2."""
    if t_end < spec.t0:
        raise DomainError("t_end must be >= the beam start time")
    u, v = quasi_solution(spec, W, grid, spec.t0)
    _, trace = evolve(WaveState(u, v, spec.t0), W, t_end, config)
    G2 = np.exp(-2.0 * line_integral_curve(W, spec.gamma, spec.t0, trace.times))
    defect = np.abs(trace.energy - G2)
    eps = float(np.max(defect))
    holds = bool(np.all(trace.energy > trace.energy[0] * (G2 - 2 * eps)))
    logger.info("beam vs exact k=%s: sup defect %.4g, retained %.4f", spec.k, eps, trace.energy[-1] / trace.energy[0])
    return BeamComparison(trace.times, trace.energy, G2, defect, eps, holds)

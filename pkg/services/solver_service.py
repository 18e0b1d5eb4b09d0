"""Time stepping for u_tt - Laplace(u) + 2 W u_t = 0 on a torus grid.

The state is the first-order pair (u, v = u_t). Two schemes are available:

    rk4     classical Runge-Kutta on the full system with the spectral
            Laplacian; the observed quantity integral of W|v|^2 is carried
            as an extra scalar unknown through the same stages.
    strang  half-step pointwise damping decay, exact Fourier rotation of the
            undamped flow, half-step decay again.

Steps never straddle a damping switch time (when alignment is on) or a
requested checkpoint.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from errors import DomainError, NumericalError
from services.damping_service import DampingProfile
from services.grid_service import EnergyTrace, Field, FieldKind, TorusGrid, energy

logger = logging.getLogger(__name__)

# Solver Service

RK4_STABILITY = 2.8
# step endpoints sample the damping this fraction of a step inside the step
EDGE = 1e-9
MERGE_TOL = 1e-12
SCHEMES = ("rk4", "strang")


@dataclass(frozen=True)
class WaveState:
    u: Field
    v: Field
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise DomainError("u and v must share a grid")
        if self.t < 0:
            raise DomainError("state time must be nonnegative")

    @property
    def grid(self) -> TorusGrid:
        return self.u.grid

    def energy(self) -> float:
        return energy(self.u, self.v)


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    scheme: str = "rk4"
    align_to_discontinuities: bool = True
    trace_stride: int = 1
    growth_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.trace_stride < 1:
            raise DomainError("trace_stride must be >= 1")


def max_stable_dt(grid: TorusGrid) -> float:
    return RK4_STABILITY / grid.lambda_max


class _Stepper:
    """Array-level stepping kernel bound to one grid and damping profile."""

    def __init__(self, grid: TorusGrid, W: Optional[DampingProfile], observer: Optional[DampingProfile], real: bool):
        self.grid = grid
        self.W = W
        self.observer = observer
        self.real = real
        self.k2 = grid.k_squared()
        self.omega = np.sqrt(self.k2)
        self.nodes = grid.nodes()
        self._cache = {}

    def _snapshot(self, profile: Optional[DampingProfile], t: float):
        if profile is None:
            return None
        key = (id(profile), 0.0 if profile.autonomous else t)
        if key not in self._cache:
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[key] = profile.eval(self.nodes, t)
        return self._cache[key]

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        out = np.fft.ifftn(-self.k2 * np.fft.fftn(u))
        return out.real if self.real else out

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        spectrum = np.fft.fftn(u)
        grad = np.sum(self.k2 * np.abs(spectrum) ** 2) / self.grid.n_nodes
        kinetic = np.sum(np.abs(v) ** 2)
        return float(0.5 * (grad + kinetic) * self.grid.cell_volume)

    def observed_rate(self, v: np.ndarray, t: float) -> float:
        w = self._snapshot(self.observer, t)
        if w is None:
            return 0.0
        return float(np.sum(w * np.abs(v) ** 2) * self.grid.cell_volume)

    def _rhs(self, u, v, t):
        w = self._snapshot(self.W, t)
        dv = self.laplacian(u)
        if w is not None:
            dv = dv - 2.0 * w * v
        return v, dv, self.observed_rate(v, t)

    def rk4(self, u, v, t, h):
        lo, hi = t + EDGE * h, t + h - EDGE * h
        k1 = self._rhs(u, v, lo)
        k2 = self._rhs(u + 0.5 * h * k1[0], v + 0.5 * h * k1[1], t + 0.5 * h)
        k3 = self._rhs(u + 0.5 * h * k2[0], v + 0.5 * h * k2[1], t + 0.5 * h)
        k4 = self._rhs(u + h * k3[0], v + h * k3[1], hi)
        u_new = u + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v_new = v + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        dq = h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        return u_new, v_new, dq

    def _decay(self, v, t, h):
        """Exact v' = -2 W v over [t, t + h]; returns (v, observed increment)."""
        if self.W is None:
            return v, 0.0
        # Simpson in time
        lo, mid, hi = t + EDGE * h, t + 0.5 * h, t + h - EDGE * h
        w = (self._snapshot(self.W, lo) + 4 * self._snapshot(self.W, mid) + self._snapshot(self.W, hi)) / 6.0
        factor = np.exp(-2.0 * h * w)
        v_new = v * factor
        lost = 0.25 * float(np.sum(np.abs(v) ** 2 * (1.0 - factor ** 2)) * self.grid.cell_volume)
        return v_new, lost

    def _rotate(self, u, v, h):
        """Exact undamped flow over time h, mode by mode."""
        u_hat, v_hat = np.fft.fftn(u), np.fft.fftn(v)
        c = np.cos(self.omega * h)
        s = np.sin(self.omega * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_over = np.where(self.omega > 0, s / np.where(self.omega > 0, self.omega, 1.0), h)
        u_new = np.fft.ifftn(c * u_hat + s_over * v_hat)
        v_new = np.fft.ifftn(-self.omega * s * u_hat + c * v_hat)
        if self.real:
            return u_new.real, v_new.real
        return u_new, v_new

    def strang(self, u, v, t, h):
        start_rate = self.observed_rate(v, t + EDGE * h)
        v, q1 = self._decay(v, t, 0.5 * h)
        u, v = self._rotate(u, v, h)
        v, q2 = self._decay(v, t + 0.5 * h, 0.5 * h)
        if self.observer is self.W:
            return u, v, q1 + q2
        # trapezoid in time for a weight that is not the damping
        return u, v, 0.5 * h * (start_rate + self.observed_rate(v, t + h - EDGE * h))


def step_plan(t_start: float, t_end: float, dt: float, breaks: Sequence[float]) -> list:
    """Step sizes covering [t_start, t_end] with every break an exact step end.

    Returns a list of (h, n_steps, segment_end). Breaks closer than MERGE_TOL * span to a
    kept cut are dropped.
    """
    tol = MERGE_TOL * max(1.0, t_end - t_start)
    cuts = [t_start]
    for b in sorted(b for b in breaks if t_start < b < t_end):
        if b - cuts[-1] > tol and t_end - b > tol:
            cuts.append(b)
    if t_end > t_start:
        cuts.append(t_end)
    plan = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        plan.append(((b - a) / n, n, b))
    return plan


def evolve(
    state: WaveState,
    W: Optional[DampingProfile],
    t_end: float,
    config: SolverConfig = SolverConfig(),
    observer: Union[DampingProfile, None, str] = "damping",
    checkpoints: Sequence[float] = (),
) -> Tuple[WaveState, EnergyTrace]:
    """Integrate from state.t to t_end; the trace records E and the observed quantity.

    `observer` is the weight of the observed quantity (default: the damping
    itself, which makes the energy identity checkable).
    """
    if t_end < state.t:
        raise DomainError(f"t_end {t_end} is before the state time {state.t}")
    grid = state.grid
    if config.scheme == "rk4" and config.dt > max_stable_dt(grid) * (1 + 1e-12):
        raise NumericalError(
            f"dt={config.dt} exceeds the rk4 stability limit {max_stable_dt(grid):.4g} for N={grid.points_per_axis}"
        )
    weight = W if isinstance(observer, str) else observer
    matches = weight is W
    u = np.array(state.u.values)
    v = np.array(state.v.values)
    real = not (np.iscomplexobj(u) or np.iscomplexobj(v))
    if not real:
        u, v = u.astype(complex), v.astype(complex)
    stepper = _Stepper(grid, W, weight, real)

    breaks = list(checkpoints)
    if W is not None and config.align_to_discontinuities:
        breaks += [s for s in W.switch_times(t_end) if s > state.t]
    plan = step_plan(state.t, t_end, config.dt, breaks)
    advance = stepper.rk4 if config.scheme == "rk4" else stepper.strang

    E0 = stepper.energy(u, v)
    ceiling = E0 * (1.0 + config.growth_tolerance) + 1e-300
    times, energies, observed = [state.t], [E0], [0.0]
    t, q, count = state.t, 0.0, 0
    logger.debug("evolve %s from t=%s to %s, %d segments, scheme=%s", grid, state.t, t_end, len(plan), config.scheme)
    for h, n, segment_end in plan:
        for i in range(n):
            u, v, dq = advance(u, v, t, h)
            q += dq
            count += 1
            t = segment_end if i == n - 1 else t + h
            if count % config.trace_stride and i != n - 1:
                continue
            E = stepper.energy(u, v)
            if not math.isfinite(E) or E > ceiling:
                raise NumericalError(
                    f"energy grew from {E0:.6g} to {E:.6g} at t={t:.6g} (dt={h:.3g}, scheme={config.scheme})"
                )
            if t > times[-1]:
                times.append(t)
                energies.append(E)
                observed.append(q)
    trace = EnergyTrace(
        np.array(times),
        np.array(energies),
        kinetic_obs=np.array(observed),
        obs_matches_damping=matches,
        meta={"scheme": config.scheme, "dt": config.dt, "steps": count},
    )
    kind_u, kind_v = FieldKind.POSITION, FieldKind.VELOCITY
    final = WaveState(Field(grid, u, kind_u), Field(grid, v, kind_v), t)
    return final, trace


def energy_identity_check(trace: EnergyTrace) -> float:
    """max |E(t) - E(0) + 2 * integral of W|v|^2| along the trace."""
    if trace.kinetic_obs is None:
        raise DomainError("trace has no cumulative observation channel")
    if not trace.obs_matches_damping:
        raise DomainError("trace observation weight differs from the damping")
    defect = trace.energy - trace.energy[0] + 2.0 * trace.kinetic_obs
    return float(np.max(np.abs(defect)))


# Initial data

def random_band_limited(grid: TorusGrid, seed: int = 0, band: int = 16, target_energy: float = 1.0) -> WaveState:
    """Real data with Fourier support in |m_i| <= band, scaled to the target energy."""
    if band < 1 or 2 * band >= grid.points_per_axis:
        raise DomainError(f"band {band} is not resolved by N={grid.points_per_axis}")
    rng = np.random.default_rng(seed)
    scale = 2 * math.pi / grid.period
    mask = np.all([np.abs(k) <= band * scale + 1e-9 for k in grid.wavenumbers()], axis=0)
    parts = []
    for _ in range(2):
        spectrum = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        parts.append(np.fft.ifftn(spectrum * mask).real)
    u = Field(grid, parts[0], FieldKind.POSITION)
    v = Field(grid, parts[1], FieldKind.VELOCITY)
    E = energy(u, v)
    if not E > 0:
        raise NumericalError("random data has zero energy")
    factor = math.sqrt(target_energy / E)
    return WaveState(u.with_values(parts[0] * factor), v.with_values(parts[1] * factor), 0.0)


def single_mode(grid: TorusGrid, wave_vector, u_amp: float = 1.0, v_amp: float = 0.0, t: float = 0.0) -> WaveState:
    """u = u_amp*cos(<m, x>), v = v_amp*cos(<m, x>)."""
    m = np.atleast_1d(np.asarray(wave_vector, dtype=float))
    if m.size != grid.dim:
        raise DomainError("wave vector size does not match grid dim")
    if not grid.resolves(float(np.max(np.abs(m)))):
        raise DomainError(f"mode {m.tolist()} is not resolved by N={grid.points_per_axis}")
    profile = np.cos((2 * math.pi / grid.period) * (grid.nodes() @ m))
    return WaveState(
        Field(grid, u_amp * profile, FieldKind.POSITION),
        Field(grid, v_amp * profile, FieldKind.VELOCITY),
        t,
    )


def mode_solution(lam: float, a: float, q0: float, q1: float, t):
    """Closed form of q'' + 2a q' + lam^2 q = 0 with q(0)=q0, q'(0)=q1; returns (q, q')."""
    t = np.asarray(t, dtype=float)
    envelope = np.exp(-a * t)
    omega = np.sqrt(complex(lam * lam - a * a))
    drift = q1 + a * q0
    if abs(omega) < 1e-12:
        q = envelope * (q0 + drift * t)
        dq = -a * q + envelope * drift
        return q, dq
    q = envelope * (q0 * np.cos(omega * t) + drift * np.sin(omega * t) / omega)
    dq = -a * q + envelope * (-q0 * omega * np.sin(omega * t) + drift * np.cos(omega * t))
    return np.real(q), np.real(dq)


def mode_energy(grid: TorusGrid, wave_vector, q: float, dq: float) -> float:
    """Energy of q*cos(<m,x>) with velocity dq*cos(<m,x>)."""
    m = np.atleast_1d(np.asarray(wave_vector, dtype=float)) * (2 * math.pi / grid.period)
    lam2 = float(np.sum(m ** 2))
    norm2 = grid.period ** grid.dim / (1.0 if lam2 == 0 else 2.0)
    return 0.5 * (lam2 * q * q + dq * dq) * norm2

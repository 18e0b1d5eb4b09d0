"""Observability measurements for damped and undamped waves."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from errors import DomainError, NumericalError
from services.damping_service import DampingProfile
from services.grid_service import CSV_FORMAT, EnergyTrace
from services.solver_service import SolverConfig, WaveState, evolve

logger = logging.getLogger(__name__)

# Observe Service


@dataclass(frozen=True)
class ObservationWindow:
    t0: float
    T: float
    W: Optional[DampingProfile] = None

    def __post_init__(self):
        if self.t0 < 0:
            raise DomainError("window start must be nonnegative")
        if not self.T > 0:
            raise DomainError("window length must be positive")

    @property
    def t1(self) -> float:
        return self.t0 + self.T


def _window_from_trace(trace: EnergyTrace, window: ObservationWindow):
    if trace.kinetic_obs is None:
        raise DomainError("trace has no cumulative observation channel")
    if window.t0 < trace.times[0] - 1e-12 or window.t1 > trace.times[-1] + 1e-9:
        raise DomainError(f"window [{window.t0}, {window.t1}] is outside the simulated range")
    i, j = trace.index_of(window.t0), trace.index_of(window.t1)
    return trace.energy[i], trace.kinetic_obs[j] - trace.kinetic_obs[i]


def observe_undamped(state: WaveState, window: ObservationWindow, config: SolverConfig = SolverConfig()) -> EnergyTrace:
    """Undamped run from `state` through the window, weighted by the window's profile."""
    if state.t > window.t0:
        raise DomainError("initial data must not be later than the window start")
    _, trace = evolve(state, None, window.t1, config, observer=window.W, checkpoints=[window.t0, window.t1])
    return trace


def observed_quantity(source: Union[EnergyTrace, WaveState], window: ObservationWindow, config: SolverConfig = SolverConfig()) -> float:
    """Integral over the window of the weighted kinetic energy, from a trace or by simulation.

    A trace must already carry the observation weighted by `window.W`.
    """
    if window.W is None:
        return 0.0
    trace = source if isinstance(source, EnergyTrace) else observe_undamped(source, window, config)
    return max(float(_window_from_trace(trace, window)[1]), 0.0)


def observability_ratio(state: WaveState, window: ObservationWindow, config: SolverConfig = SolverConfig()) -> float:
    """E(psi, t0) divided by the observed quantity of the undamped run."""
    if window.W is None:
        raise NumericalError("unobservable on window: observation weight is zero")
    trace = observe_undamped(state, window, config)
    E, obs = _window_from_trace(trace, window)
    if not obs > 0:
        raise NumericalError(f"unobservable on window [{window.t0}, {window.t1}]")
    return float(E / obs)


def observability_curve(
    state: WaveState, W: DampingProfile, T: float, t0_values: Sequence[float], config: SolverConfig = SolverConfig()
) -> List[float]:
    """C_obs for windows [t0, t0 + T] from one undamped run."""
    t0_values = [float(t0) for t0 in t0_values]
    checkpoints = sorted({*t0_values, *(t0 + T for t0 in t0_values)})
    _, trace = evolve(state, None, max(checkpoints), config, observer=W, checkpoints=checkpoints)
    out = []
    for t0 in t0_values:
        E, obs = _window_from_trace(trace, ObservationWindow(t0, T, W))
        out.append(float(E / obs) if obs > 0 else math.inf)
    return out


@dataclass
class SandwichReport:
    lhs: float
    mid: float
    rhs: float
    C_T: float
    holds: bool

    @property
    def slack_lower(self) -> float:
        return self.mid - self.lhs

    @property
    def slack_upper(self) -> float:
        return self.rhs - self.mid

    def to_dict(self) -> Dict:
        return {
            "lhs": self.lhs,
            "mid": self.mid,
            "rhs": self.rhs,
            "C_T": self.C_T,
            "holds": self.holds,
            "slack_lower": self.slack_lower,
            "slack_upper": self.slack_upper,
        }


def sandwich_check(state: WaveState, W: Optional[DampingProfile], T: float, config: SolverConfig = SolverConfig()) -> SandwichReport:
    """Compare damped and undamped observations of the same data over [t, t + T]."""
    window = ObservationWindow(state.t, T, W)
    sup = W.sup_norm if W is not None else 0.0
    C_T = 1.0 + 2.0 * T * sup
    if W is None:
        return SandwichReport(0.0, 0.0, 0.0, C_T, True)
    _, damped = evolve(state, W, window.t1, config, checkpoints=[window.t1])
    lhs = observed_quantity(damped, window)
    mid = observed_quantity(state, window, config)
    rhs = C_T ** 2 * lhs
    tol = 1e-8 * max(1.0, mid)
    holds = lhs <= mid + tol and mid <= rhs + tol
    logger.info("sandwich T=%s: %.6g <= %.6g <= %.6g (%s)", T, lhs, mid, rhs, "ok" if holds else "violated")
    return SandwichReport(lhs, mid, rhs, C_T, holds)


def trig_integral(A: complex, B: complex, lam: float, delta: float) -> float:
    """Integral over [0, delta] of |-A sin(lam t) + B cos(lam t)|^2."""
    s2 = math.sin(2 * lam * delta)
    return (
        abs(A) ** 2 * (2 * lam * delta - s2) / (4 * lam)
        + abs(B) ** 2 * (2 * lam * delta + s2) / (4 * lam)
        - (A * np.conj(B)).real * math.sin(lam * delta) ** 2 / lam
    )


@dataclass
class ShortTimeTable:
    A: complex
    B: complex
    lam: float
    deltas: np.ndarray
    integrals: np.ndarray
    ratios: np.ndarray
    slope: float

    @property
    def constants(self) -> np.ndarray:
        """C(delta) = ratio * delta**3."""
        return self.ratios * self.deltas ** 3

    def to_csv(self, path) -> None:
        table = np.column_stack([self.deltas, self.integrals, self.ratios, self.constants])
        header = "delta,integral,ratio,C"
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=CSV_FORMAT)

    def to_dict(self) -> Dict:
        return {"A": [complex(self.A).real, complex(self.A).imag], "B": [complex(self.B).real, complex(self.B).imag],
                "lambda": self.lam, "slope": self.slope, "max_C": float(np.max(self.constants))}


def short_time_sweep(A: complex, B: complex, lam: float, deltas: Sequence[float]) -> ShortTimeTable:
    """Energy over short-window observation for psi = (A cos(lam t) + B sin(lam t))/lam * e(x).

    e is an L2-normalized eigenfunction with eigenvalue lam^2, so E(psi) = (|A|^2 + |B|^2)/2
    and the full-domain observation reduces to trig_integral.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0):
        raise DomainError("window lengths delta must be positive")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    E = 0.5 * (abs(A) ** 2 + abs(B) ** 2)
    integrals = np.array([trig_integral(A, B, lam, d) for d in deltas])
    ratios = E / integrals
    slope = float(np.polyfit(np.log(deltas), np.log(ratios), 1)[0]) if deltas.size > 1 else float("nan")
    return ShortTimeTable(A, B, lam, deltas, integrals, ratios, slope)


@dataclass
class DecayBookkeeping:
    b: np.ndarray
    T0: float
    bounds: np.ndarray
    flagged: List[int] = field(default_factory=list)
    measured: Optional[np.ndarray] = None
    violations: List[int] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_csv(self, path) -> None:
        k = np.arange(self.bounds.size)
        measured = self.measured if self.measured is not None else np.full(k.shape, np.nan)
        b = np.concatenate([self.b, [np.nan]])
        table = np.column_stack([k, k * self.T0, b, self.bounds, measured])
        np.savetxt(path, table, delimiter=",", header="k,t,b,bound,energy", comments="", fmt=CSV_FORMAT)

    def to_dict(self) -> Dict:
        return {"T0": self.T0, "windows": int(self.b.size), "flagged": list(self.flagged),
                "violations": list(self.violations), "holds": self.holds}


def window_checkpoints(t_end: float, T0: float) -> List[float]:
    n = int(math.floor(t_end / T0 + 1e-9))
    return [j * T0 for j in range(1, n + 1)]


def measure_window_fractions(trace: EnergyTrace, T0: float) -> np.ndarray:
    """b_j = (observed damping on [jT0, (j+1)T0]) / E(jT0) for every complete window."""
    if trace.kinetic_obs is None or not trace.obs_matches_damping:
        raise DomainError("trace must carry the damping-weighted observation")
    start = trace.times[0]
    fractions = []
    j = 0
    while start + (j + 1) * T0 <= trace.times[-1] + 1e-9:
        a = trace.index_of(start + j * T0)
        b = trace.index_of(start + (j + 1) * T0)
        E = trace.energy[a]
        fractions.append((trace.kinetic_obs[b] - trace.kinetic_obs[a]) / E if E > 0 else 0.0)
        j += 1
    return np.array(fractions)


def decay_bookkeeping(b_seq: Sequence[float], T0: float, trace: Optional[EnergyTrace] = None) -> DecayBookkeeping:
    """exp(-(b_0 + ... + b_{k-1})) per k; with a trace, checks E(kT0) <= E(0) * that bound."""
    b = np.asarray(b_seq, dtype=float)
    if np.any(b < 0):
        raise DomainError("window fractions must be nonnegative")
    flagged = [int(j) for j in np.nonzero(b >= 1)[0]]
    bounds = np.exp(-np.concatenate([[0.0], np.cumsum(b)]))
    if flagged:
        logger.warning("window fractions >= 1 at %s; bound clamped to 0", flagged)
        bounds[flagged[0] + 1:] = 0.0
    report = DecayBookkeeping(b, T0, bounds, flagged)
    if trace is None:
        return report
    start = trace.times[0]
    measured = np.array([trace.energy[trace.index_of(start + k * T0)] for k in range(bounds.size)])
    E0 = measured[0]
    slack = 1e-10 * E0
    report.measured = measured
    report.violations = [k for k in range(bounds.size) if measured[k] > E0 * bounds[k] + slack]
    return report

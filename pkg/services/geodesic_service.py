"""Straight-line geodesics on flat tori and damping functionals along them.

Infima over geodesics and start times are taken over deterministic samples:
base points on a lattice, directions on the circle (T^2 only) and start times
on a uniform grid plus the damping's own switch times. Ties resolve to the
lowest candidate index.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from config import Config
from errors import DomainError, NumericalError
from services.damping_service import DampingProfile

logger = logging.getLogger(__name__)

# Geodesic Service

CHUNK = 64
MIN_PIECE_NODES = 8
MERGE_TOL = 1e-12
MAX_NODES = 5_000_000


@dataclass(frozen=True, eq=False)
class Geodesic:
    """gamma(s) = x0 + s*direction (mod period), unit speed."""

    x0: np.ndarray
    direction: np.ndarray
    period: float = Config.DEFAULT_PERIOD

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        direction = np.atleast_1d(np.asarray(self.direction, dtype=float))
        if x0.shape != direction.shape or x0.size not in (1, 2):
            raise DomainError("geodesic base point and direction must be 1- or 2-vectors of equal size")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise DomainError("geodesic direction must be a unit vector")
        object.__setattr__(self, "x0", x0 % self.period)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def from_angle(cls, x0: Sequence[float], theta: float, period: float = Config.DEFAULT_PERIOD) -> "Geodesic":
        return cls(np.asarray(x0, dtype=float), np.array([math.cos(theta), math.sin(theta)]), period)

    @property
    def dim(self) -> int:
        return self.x0.size

    def position(self, s):
        """Points gamma(s) for scalar or array s; shape s.shape + (dim,)."""
        s = np.asarray(s, dtype=float)
        return (self.x0 + s[..., None] * self.direction) % self.period

    def describe(self) -> Dict:
        return {"x0": self.x0.tolist(), "direction": self.direction.tolist()}


@dataclass(frozen=True)
class GeodesicSampling:
    n_points: int = 16
    n_directions: int = 8
    n_start_times: int = 32
    quadrature_step: float = Config.QUADRATURE_STEP
    t0_max: float = 100.0
    refine: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("n_points", "n_directions", "n_start_times", "workers"):
            if getattr(self, name) < 1:
                raise DomainError(f"sampling {name} must be >= 1")
        if not self.quadrature_step > 0:
            raise DomainError("sampling quadrature_step must be positive")
        if self.t0_max < 0:
            raise DomainError("sampling t0_max must be nonnegative")

    def describe(self) -> Dict:
        return {
            "n_points": self.n_points,
            "n_directions": self.n_directions,
            "n_start_times": self.n_start_times,
            "quadrature_step": self.quadrature_step,
            "t0_max": self.t0_max,
            "refine": self.refine,
        }


@dataclass
class FunctionalReport:
    """Value of a damping functional with the candidate that attains it."""

    name: str
    value: float
    witness: Optional[Geodesic] = None
    t0: float = 0.0
    T: Optional[float] = None
    satisfied: Optional[bool] = None
    curve: List[Tuple[float, float]] = field(default_factory=list)
    sampling: Optional[GeodesicSampling] = None

    def to_dict(self) -> Dict:
        out = {
            "functional": self.name,
            "value": self.value,
            "t0": self.t0,
            "witness": self.witness.describe() if self.witness is not None else None,
        }
        if self.T is not None:
            out["T"] = self.T
        if self.satisfied is not None:
            out["satisfied"] = self.satisfied
        if self.curve:
            out["curve"] = [[T, v] for T, v in self.curve]
        if self.sampling is not None:
            out["sampling"] = self.sampling.describe()
        return out


def parallel_map(func: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map over a thread pool; inline when workers <= 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def direction_angles(n_directions: int) -> np.ndarray:
    """Uniform angles plus the axis and diagonal directions, deduplicated."""
    uniform = 2 * math.pi * np.arange(n_directions) / n_directions
    special = math.pi / 4 * np.arange(8)
    angles = np.concatenate([special, uniform]) % (2 * math.pi)
    _, first = np.unique(np.round(angles, 12), return_index=True)
    return angles[np.sort(first)]


def sample_geodesics(dim: int, sampling: GeodesicSampling, period: float = Config.DEFAULT_PERIOD) -> List[Geodesic]:
    axis = np.arange(sampling.n_points) * period / sampling.n_points
    if dim == 1:
        return [Geodesic([x], [d], period) for d in (1.0, -1.0) for x in axis]
    if dim != 2:
        raise DomainError(f"geodesics are sampled on T^1 or T^2, got dim {dim}")
    points = [(a, b) for a in axis for b in axis]
    return [Geodesic.from_angle(p, theta, period) for theta in direction_angles(sampling.n_directions) for p in points]


def quadrature_nodes(W: DampingProfile, t0: float, t1: float, step: float, breaks: Sequence[float] = ()):
    """Composite midpoint nodes and weights on [t0, t1], split at W's switch times and `breaks`.

    Each piece gets its own node count; cuts closer than MERGE_TOL * (t1 - t0) are merged.
    """
    tol = MERGE_TOL * max(1.0, t1 - t0)
    inner = sorted({s for s in W.switch_times(t1) if t0 < s < t1} | {b for b in breaks if t0 < b < t1})
    cuts = [t0]
    for c in inner:
        if c - cuts[-1] > tol and t1 - c > tol:
            cuts.append(c)
    if t1 > t0:
        cuts.append(t1)
    h = min(step, Config.QUADRATURE_STEP)
    counts = [max(MIN_PIECE_NODES, int(math.ceil((b - a) / h))) for a, b in zip(cuts[:-1], cuts[1:])]
    if sum(counts) > MAX_NODES:
        raise NumericalError(
            f"quadrature on [{t0}, {t1}] needs {sum(counts)} nodes (limit {MAX_NODES}); use a larger quadrature_step"
        )
    nodes, weights = [], []
    for (a, b), n in zip(zip(cuts[:-1], cuts[1:]), counts):
        width = (b - a) / n
        nodes.append(a + width * (np.arange(n) + 0.5))
        weights.append(np.full(n, width))
    if not nodes:
        return np.zeros(0), np.zeros(0), np.array(cuts)
    return np.concatenate(nodes), np.concatenate(weights), np.array(cuts)


def _integrand(W: DampingProfile, geodesics: List[Geodesic], s: np.ndarray) -> np.ndarray:
    """W(gamma_i(s_j), s_j) with shape (len(geodesics), len(s))."""
    x0 = np.stack([g.x0 for g in geodesics])
    direction = np.stack([g.direction for g in geodesics])
    period = geodesics[0].period
    points = (x0[:, None, :] + s[None, :, None] * direction[:, None, :]) % period
    return W.eval(points, s)


def _window_integrals(W, geodesics, t0, t1, step) -> np.ndarray:
    s, w, _ = quadrature_nodes(W, t0, t1, step)
    out = np.zeros(len(geodesics))
    if s.size == 0:
        return out
    for start in range(0, len(geodesics), CHUNK):
        chunk = geodesics[start:start + CHUNK]
        out[start:start + len(chunk)] = _integrand(W, chunk, s) @ w
    return out


def line_integral(W: Optional[DampingProfile], gamma: Geodesic, t0: float, t1: float, step: float = Config.QUADRATURE_STEP) -> float:
    """Integral of W(gamma(s), s) over s in [t0, t1]."""
    if t0 < 0:
        raise DomainError("line integrals start at t0 >= 0")
    if t1 < t0:
        raise DomainError("line integral needs t1 >= t0")
    if W is None or t1 == t0:
        return 0.0
    return max(float(_window_integrals(W, [gamma], t0, t1, step)[0]), 0.0)


def propagator_G(W: Optional[DampingProfile], gamma: Geodesic, t0: float, t: float, step: float = Config.QUADRATURE_STEP) -> float:
    """exp(-integral of W along gamma from t0 to t), in (0, 1]."""
    if t < t0:
        raise DomainError("propagator needs t >= t0")
    return math.exp(-line_integral(W, gamma, t0, t, step))


def line_integral_curve(W: Optional[DampingProfile], gamma: Geodesic, t0: float, times: Sequence[float], step: float = Config.QUADRATURE_STEP) -> np.ndarray:
    """Integrals of W along gamma from t0 to each of `times` (all >= t0)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < t0) or t0 < 0:
        raise DomainError("line integral curve needs 0 <= t0 <= times")
    if W is None:
        return np.zeros_like(times)
    totals = _cumulative(W, [gamma], np.concatenate([[t0], times]), step)[0]
    return np.maximum(totals[1:] - totals[0], 0.0)


def _cumulative(W, geodesics, times, step, workers: int = 1) -> np.ndarray:
    """Integrals over [0, t] for each geodesic (rows) and each requested t (columns).

    The rule is split at switch times only; values between cell edges are linear in t.
    """
    times = np.asarray(times, dtype=float)
    t_max = float(np.max(times)) if times.size else 0.0
    out = np.zeros((len(geodesics), times.size))
    if t_max <= 0:
        return out
    s, w, _ = quadrature_nodes(W, 0.0, t_max, step)
    edges = np.concatenate([[0.0], s + 0.5 * w])
    left = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, s.size - 1)
    frac = np.clip((times - edges[left]) / w[left], 0.0, 1.0)

    def block(start):
        cells = _integrand(W, geodesics[start:start + CHUNK], s) * w
        running = np.concatenate([np.zeros((cells.shape[0], 1)), np.cumsum(cells, axis=1)], axis=1)
        return running[:, left] + frac * cells[:, left]

    starts = range(0, len(geodesics), CHUNK)
    for start, values in zip(starts, parallel_map(block, starts, workers)):
        out[start:start + values.shape[0]] = values
    return out


def _perturbed(gamma: Geodesic, coord: int, value: float) -> Geodesic:
    """Copy of gamma with one coordinate replaced; the last coordinate on T^2 is the angle."""
    if gamma.dim == 2 and coord == 2:
        return Geodesic.from_angle(gamma.x0, value, gamma.period)
    x0 = gamma.x0.copy()
    x0[coord] = value
    return Geodesic(x0, gamma.direction, gamma.period)


def _refine(objective, gamma: Geodesic, t0: float, sampling: GeodesicSampling, vary_t0: bool):
    """One bounded scalar minimization per coordinate around the grid minimizer."""
    best = objective(gamma, t0)
    h = gamma.period / sampling.n_points
    coords = list(range(gamma.dim))
    if gamma.dim == 2:
        coords.append(2)
    for coord in coords:
        if coord == 2:
            centre = math.atan2(gamma.direction[1], gamma.direction[0])
            width = math.pi / max(len(direction_angles(sampling.n_directions)), 1)
        else:
            centre, width = float(gamma.x0[coord]), h
        found = minimize_scalar(
            lambda c: objective(_perturbed(gamma, coord, c), t0),
            bounds=(centre - width, centre + width),
            method="bounded",
        )
        if found.fun < best:
            best, gamma = float(found.fun), _perturbed(gamma, coord, float(found.x))
    if vary_t0 and sampling.n_start_times > 1:
        width = sampling.t0_max / (sampling.n_start_times - 1)
        found = minimize_scalar(
            lambda c: objective(gamma, c),
            bounds=(max(0.0, t0 - width), t0 + width),
            method="bounded",
        )
        if found.fun < best:
            best, t0 = float(found.fun), float(found.x)
    return best, gamma, t0


def sigma(W: Optional[DampingProfile], t: float, sampling: GeodesicSampling, dim: int = 1) -> FunctionalReport:
    """Smallest total damping met by time t along a sampled geodesic."""
    if t < 0:
        raise DomainError("sigma needs t >= 0")
    geodesics = sample_geodesics(dim, sampling)
    if W is None or t == 0:
        return FunctionalReport("sigma", 0.0, geodesics[0], sampling=sampling)
    totals = _cumulative(W, geodesics, [t], sampling.quadrature_step, sampling.workers)[:, 0]
    i = int(np.argmin(totals))
    value, witness = float(totals[i]), geodesics[i]
    if sampling.refine:
        value, witness, _ = _refine(
            lambda g, _t0: line_integral(W, g, 0.0, t, sampling.quadrature_step), witness, 0.0, sampling, False
        )
    logger.debug("sigma(%s)=%.6g", t, value)
    return FunctionalReport("sigma", max(value, 0.0), witness, sampling=sampling)


def sigma_curve(W: Optional[DampingProfile], times: Sequence[float], sampling: GeodesicSampling, dim: int = 1) -> np.ndarray:
    """Sigma at each requested time (grid minimum, no refinement); nondecreasing."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise DomainError("sigma needs t >= 0")
    if W is None:
        return np.zeros_like(times)
    totals = _cumulative(W, sample_geodesics(dim, sampling), times, sampling.quadrature_step, sampling.workers)
    curve = np.min(totals, axis=0)
    return np.maximum.accumulate(np.maximum(curve, 0.0))


def start_times(W: DampingProfile, sampling: GeodesicSampling) -> np.ndarray:
    if W.autonomous:
        return np.zeros(1)
    grid = np.linspace(0.0, sampling.t0_max, sampling.n_start_times)
    switches = [s for s in W.switch_times(sampling.t0_max)]
    return np.unique(np.concatenate([grid, switches]))


def window_minimum(W: Optional[DampingProfile], T: float, sampling: GeodesicSampling, dim: int = 1) -> FunctionalReport:
    """Smallest average of W over windows of length T, with its witness."""
    if not T > 0:
        raise DomainError("window length T must be positive")
    geodesics = sample_geodesics(dim, sampling)
    if W is None:
        return FunctionalReport("L", 0.0, geodesics[0], 0.0, T, sampling=sampling)
    best, witness, best_t0 = math.inf, geodesics[0], 0.0
    starts = [float(t0) for t0 in start_times(W, sampling)]
    windows = parallel_map(
        lambda t0: _window_integrals(W, geodesics, t0, t0 + T, sampling.quadrature_step) / T,
        starts, sampling.workers,
    )
    for t0, averages in zip(starts, windows):
        i = int(np.argmin(averages))
        if averages[i] < best:
            best, witness, best_t0 = float(averages[i]), geodesics[i], float(t0)
    if sampling.refine:
        best, witness, best_t0 = _refine(
            lambda g, t0: line_integral(W, g, t0, t0 + T, sampling.quadrature_step) / T,
            witness, best_t0, sampling, not W.autonomous,
        )
    return FunctionalReport("L", max(best, 0.0), witness, best_t0, T, sampling=sampling)


def L_of_T(W: Optional[DampingProfile], T: float, sampling: GeodesicSampling, dim: int = 1) -> float:
    return window_minimum(W, T, sampling, dim).value


def L_curve(W: Optional[DampingProfile], T_values: Sequence[float], sampling: GeodesicSampling, dim: int = 1) -> List[Tuple[float, float]]:
    return [(float(T), L_of_T(W, float(T), sampling, dim)) for T in T_values]


def L_infinity(W: Optional[DampingProfile], sampling: GeodesicSampling, T_max: float, dim: int = 1, levels: int = 6) -> float:
    """Largest L(T) over the dyadic ladder T_max / 2**m, m < levels."""
    if not T_max > 0:
        raise DomainError("T_max must be positive")
    ladder = [T_max / 2 ** m for m in range(levels)]
    return max(v for _, v in L_curve(W, ladder, sampling, dim))


def check_tgcc(W: Optional[DampingProfile], T0: float, sampling: GeodesicSampling, dim: int = 1, tol: float = 1e-9) -> FunctionalReport:
    """Smallest window average over T in {T0, 2*T0, 4*T0}; satisfied when it exceeds tol."""
    if not T0 > 0:
        raise DomainError("T0 must be positive")
    reports = [window_minimum(W, T0 * m, sampling, dim) for m in (1, 2, 4)]
    worst = min(reports, key=lambda r: r.value)
    satisfied = worst.value > tol
    logger.info("tgcc T0=%s min_average=%.6g satisfied=%s", T0, worst.value, satisfied)
    return FunctionalReport(
        "tgcc",
        worst.value,
        worst.witness,
        worst.t0,
        worst.T,
        satisfied,
        [(r.T, r.value) for r in reports],
        sampling,
    )

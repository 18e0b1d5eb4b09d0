"""Damping coefficients W(x, t) and the named damping families.

Every profile evaluates on arrays of points with shape (..., dim) and a time
(scalar or broadcastable to the point batch). Profiles are immutable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DomainError
from services.grid_service import Field, FieldKind, TorusGrid

# Damping Service


@dataclass(frozen=True)
class IntervalLengths:
    """Sequence j -> f(j) of interval lengths, evaluable at real j.

    kinds: power C1*j**alpha, geometric C1*r**j, double_exp C1*exp(j + e**j),
    decay C1*(1 + j)**(-beta).
    """

    kind: str
    C1: float = 1.0
    alpha: float = 1.0
    r: float = 2.0
    beta: float = 1.0

    KINDS = ("power", "geometric", "double_exp", "decay")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown interval-length kind {self.kind!r}")
        if not self.C1 > 0:
            raise DomainError("interval lengths need C1 > 0")
        if self.kind == "geometric" and not self.r > 1:
            raise DomainError("geometric interval lengths need r > 1")
        if self.kind == "power" and self.alpha < 0:
            raise DomainError("power interval lengths need alpha >= 0")
        if self.kind == "decay" and self.beta < 0:
            raise DomainError("decay interval lengths need beta >= 0")

    def __call__(self, j):
        z = np.asarray(j, dtype=float)
        if self.kind == "power":
            out = self.C1 * z ** self.alpha
        elif self.kind == "geometric":
            out = self.C1 * self.r ** z
        elif self.kind == "double_exp":
            with np.errstate(over="ignore"):
                out = self.C1 * np.exp(z + np.exp(z))
        else:
            out = self.C1 * (1.0 + z) ** (-self.beta)
        return float(out) if np.ndim(out) == 0 else out

    def describe(self) -> Dict:
        return {"kind": self.kind, "C1": self.C1, "alpha": self.alpha, "r": self.r, "beta": self.beta}

    @classmethod
    def from_params(cls, params: Dict, field: str = "f") -> "IntervalLengths":
        allowed = {"kind", "C1", "alpha", "r", "beta"}
        unknown = set(params) - allowed
        if unknown:
            raise ConfigError(f"{field}.{sorted(unknown)[0]}", "unknown key")
        if "kind" not in params:
            raise ConfigError(f"{field}.kind", "missing")
        try:
            return cls(**params)
        except DomainError as e:
            raise ConfigError(field, str(e)) from e


def periodic_offset(x: np.ndarray, center: np.ndarray, period: float) -> np.ndarray:
    """Componentwise displacement x - center wrapped into [-period/2, period/2)."""
    return (x - center + period / 2) % period - period / 2


class DampingProfile:
    """A nonnegative coefficient W(x, t) with a declared upper bound."""

    family = "abstract"
    autonomous = False

    def __init__(self, sup_norm: float, dim: Optional[int] = None, period: float = 2 * math.pi):
        if sup_norm < 0:
            raise DomainError("sup_norm must be nonnegative")
        self.sup_norm = float(sup_norm)
        self.dim = dim
        self.period = float(period)

    def _evaluate(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval(self, x, t) -> np.ndarray:
        """W at points `x` (shape (..., dim)) and times `t` (scalar or broadcastable)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise DomainError("damping is defined for t >= 0 only")
        batch = x.shape[:-1]
        t_arr = np.broadcast_to(t_arr, batch) if t_arr.ndim else t_arr
        values = np.asarray(self._evaluate(x, t_arr), dtype=float)
        return np.broadcast_to(values, batch).copy() if values.shape != batch else values

    def switch_times(self, t_max: float) -> List[float]:
        """Sorted times in (0, t_max] where W jumps or changes formula."""
        return []

    def params(self) -> Dict:
        return {}

    def describe(self) -> Dict:
        return {"family": self.family, "params": self.params(), "sup_norm": self.sup_norm}

    def __repr__(self) -> str:
        return f"<DampingProfile {self.family} {self.params()}>"


class ConstantDamping(DampingProfile):
    family = "constant"
    autonomous = True

    def __init__(self, a: float):
        if a < 0:
            raise DomainError("constant damping must be nonnegative")
        super().__init__(a)
        self.a = float(a)

    def _evaluate(self, x, t):
        return np.full(x.shape[:-1], self.a)

    def params(self):
        return {"a": self.a}


class CosineDamping(DampingProfile):
    """W(x) = a0 + a1*cos(<m, x>) with integer wave vector m."""

    family = "cosine"
    autonomous = True

    def __init__(self, a0: float, a1: float, wave_vector: Sequence[int] = (1,), period: float = 2 * math.pi):
        if a0 < abs(a1):
            raise DomainError("cosine damping needs a0 >= |a1| to stay nonnegative")
        super().__init__(a0 + abs(a1), dim=len(wave_vector), period=period)
        self.a0 = float(a0)
        self.a1 = float(a1)
        self.wave_vector = np.asarray(wave_vector, dtype=float)

    def _evaluate(self, x, t):
        phase = (2 * math.pi / self.period) * (x @ self.wave_vector)
        return np.maximum(self.a0 + self.a1 * np.cos(phase), 0.0)

    def params(self):
        return {"a0": self.a0, "a1": self.a1, "wave_vector": self.wave_vector.astype(int).tolist()}


class SpaceBump(DampingProfile):
    """Autonomous bump w0*phi(|x - center| / radius), zero outside the radius.

    `axes` restricts the distance to some coordinates (a strip on T^2).
    """

    family = "space_bump"
    autonomous = True

    def __init__(
        self,
        w0: float,
        center: Sequence[float],
        radius: float,
        smoothness: str = "smooth",
        axes: Optional[Sequence[int]] = None,
        period: float = 2 * math.pi,
    ):
        if w0 < 0:
            raise DomainError("bump height must be nonnegative")
        if not 0 < radius <= period / 2:
            raise DomainError("bump radius must lie in (0, period/2]")
        if smoothness not in ("smooth", "flat"):
            raise DomainError("bump smoothness must be 'smooth' or 'flat'")
        center = np.asarray(center, dtype=float)
        super().__init__(w0, dim=center.size, period=period)
        self.w0 = float(w0)
        self.center = center
        self.radius = float(radius)
        self.smoothness = smoothness
        self.axes = tuple(range(center.size)) if axes is None else tuple(int(a) for a in axes)

    def _evaluate(self, x, t):
        offset = periodic_offset(x, self.center, self.period)[..., list(self.axes)]
        s = np.sqrt(np.sum(offset ** 2, axis=-1)) / self.radius
        inside = s < 1
        if self.smoothness == "flat":
            return np.where(inside, self.w0, 0.0)
        out = np.zeros_like(s)
        si = s[inside]
        out[inside] = self.w0 * np.exp(1.0 - 1.0 / (1.0 - si ** 2))
        return out

    def params(self):
        return {
            "w0": self.w0,
            "center": self.center.tolist(),
            "radius": self.radius,
            "smoothness": self.smoothness,
            "axes": list(self.axes),
        }


class PolyProduct(DampingProfile):
    """W = base(x, t) * f(t), C_m*b(t) <= f <= C_M*b(t), b(t) = (1 + t)**(-beta)."""

    family = "poly_product"

    def __init__(self, base: DampingProfile, beta: float, C_m: float = 1.0, C_M: float = 1.0, omega: float = 1.0):
        if beta < 0:
            raise DomainError("poly_product needs beta >= 0")
        if not 0 < C_m <= C_M:
            raise DomainError("poly_product needs 0 < C_m <= C_M")
        super().__init__(base.sup_norm * C_M, dim=base.dim, period=base.period)
        self.base = base
        self.beta = float(beta)
        self.C_m = float(C_m)
        self.C_M = float(C_M)
        self.omega = float(omega)

    def rate(self, t):
        """b(t) = (1 + t)**(-beta)."""
        return (1.0 + np.asarray(t, dtype=float)) ** (-self.beta)

    def factor(self, t):
        wobble = 0.5 * (1.0 + np.sin(self.omega * np.asarray(t, dtype=float)))
        return self.rate(t) * (self.C_m + (self.C_M - self.C_m) * wobble)

    def _evaluate(self, x, t):
        return self.base._evaluate(x, t) * self.factor(t)

    def switch_times(self, t_max):
        return self.base.switch_times(t_max)

    def params(self):
        return {"base": self.base.describe(), "beta": self.beta, "C_m": self.C_m, "C_M": self.C_M, "omega": self.omega}


class GrowingOff(DampingProfile):
    """On for length L0 starting at k*L0 + T_k, then off for f(k + 1).

    T_k = f(1) + ... + f(k); the base profile is evaluated at the time elapsed
    since the start of the current on-interval.
    """

    family = "growing_off"

    def __init__(self, base: DampingProfile, L0: float, f: IntervalLengths):
        if not L0 > 0:
            raise DomainError("growing_off needs L0 > 0")
        super().__init__(base.sup_norm, dim=base.dim, period=base.period)
        self.base = base
        self.L0 = float(L0)
        self.f = f

    def on_intervals(self, t_max: float) -> np.ndarray:
        """Rows (start, end) of the on-intervals with start <= t_max."""
        rows = []
        k, T_k = 0, 0.0
        while True:
            start = k * self.L0 + T_k
            if start > t_max:
                break
            rows.append((start, start + self.L0))
            k += 1
            T_k += self.f(k)
            if not math.isfinite(T_k):
                break
        return np.array(rows, dtype=float).reshape(-1, 2)

    def _evaluate(self, x, t):
        t_arr = np.asarray(t, dtype=float)
        intervals = self.on_intervals(float(np.max(t_arr)) if t_arr.size else 0.0)
        idx = np.searchsorted(intervals[:, 0], t_arr, side="right") - 1
        idx = np.clip(idx, 0, len(intervals) - 1)
        start = intervals[idx, 0]
        on = t_arr <= intervals[idx, 1]
        local = np.where(on, t_arr - start, 0.0)
        return np.where(on, self.base._evaluate(x, local), 0.0)

    def switch_times(self, t_max):
        times = set()
        for start, end in self.on_intervals(t_max):
            if 0 < start <= t_max:
                times.add(float(start))
            if end <= t_max:
                times.add(float(end))
        for s in self.base.switch_times(self.L0):
            for start, _ in self.on_intervals(t_max):
                if start + s <= t_max:
                    times.add(float(start + s))
        return sorted(times)

    def on_duration(self, t: float) -> float:
        """Total length of on-time in [0, t]."""
        intervals = self.on_intervals(t)
        return float(np.sum(np.clip(np.minimum(intervals[:, 1], t) - intervals[:, 0], 0.0, None)))

    def on_count(self, t: float) -> int:
        """N(t): number of complete on-intervals finished by time t."""
        intervals = self.on_intervals(t)
        return int(np.sum(intervals[:, 1] <= t))

    def params(self):
        return {"base": self.base.describe(), "L0": self.L0, "f": self.f.describe()}


# samples within this fraction of an on-interval's right end count as off
CHI_TOL = 1e-12


def indicator_chi(s):
    """1 on [0, 1), 0 elsewhere; the right end of an on-interval is already off."""
    s = np.asarray(s, dtype=float)
    return ((s >= 0) & (s < 1.0 - CHI_TOL)).astype(float)


def smooth_chi(s):
    """Equal to 1 on [1/4, 3/4], sin^2 ramps on [0, 1/4] and [3/4, 1]."""
    s = np.asarray(s, dtype=float)
    ramp_up = np.sin(2 * math.pi * np.clip(s, 0, 0.25)) ** 2
    ramp_down = np.sin(2 * math.pi * (1 - np.clip(s, 0.75, 1))) ** 2
    out = np.where(s < 0.25, ramp_up, np.where(s > 0.75, ramp_down, 1.0))
    return np.where((s >= 0) & (s < 1.0 - CHI_TOL), out, 0.0)


CHI_SHAPES: Dict[str, Callable] = {"indicator": indicator_chi, "smooth": smooth_chi}


class ShrinkingOn(DampingProfile):
    """W = g(x)*chi((t - k*S0)/f(k)) on [k*S0, k*S0 + f(k)], zero until (k+1)*S0."""

    family = "shrinking_on"

    def __init__(self, g: DampingProfile, S0: float, f: IntervalLengths, chi: str = "indicator", floor_samples: int = 64):
        if not g.autonomous:
            raise DomainError("shrinking_on needs an autonomous spatial profile g")
        if not S0 > 0:
            raise DomainError("shrinking_on needs S0 > 0")
        if chi not in CHI_SHAPES:
            raise DomainError(f"unknown chi shape {chi!r}")
        with np.errstate(over="ignore"):
            longest = float(np.max(f(np.arange(51))))
        if longest > S0:
            raise DomainError("shrinking_on needs f(k) <= S0")
        super().__init__(g.sup_norm, dim=g.dim, period=g.period)
        dim = g.dim or 1
        sample_nodes = TorusGrid(dim, floor_samples, g.period).nodes()
        floor = float(np.min(g._evaluate(sample_nodes, np.zeros(sample_nodes.shape[:-1]))))
        if not floor > 0:
            raise DomainError("shrinking_on needs g bounded below by a positive constant")
        self.g = g
        self.floor = floor
        self.S0 = float(S0)
        self.f = f
        self.chi = chi

    def _evaluate(self, x, t):
        t_arr = np.asarray(t, dtype=float)
        k = np.floor(t_arr / self.S0)
        length = np.asarray(self.f(k), dtype=float)
        s = (t_arr - k * self.S0) / length
        return self.g._evaluate(x, t_arr) * CHI_SHAPES[self.chi](s)

    def switch_times(self, t_max):
        times = set()
        k = 0
        while k * self.S0 <= t_max:
            start = k * self.S0
            end = start + self.f(k)
            if start > 0:
                times.add(float(start))
            if end <= t_max:
                times.add(float(end))
            if self.chi == "smooth":
                for frac in (0.25, 0.75):
                    mid = start + frac * self.f(k)
                    if mid <= t_max:
                        times.add(float(mid))
            k += 1
        return sorted(times)

    def params(self):
        return {"g": self.g.describe(), "S0": self.S0, "f": self.f.describe(), "chi": self.chi}


def snapshot(profile: DampingProfile, grid: TorusGrid, t: float) -> Field:
    """Damping sampled at the grid nodes at time t."""
    values = profile.eval(grid.nodes(), t)
    return Field(grid, values, FieldKind.DAMPING)


def discontinuity_times(profile: DampingProfile, t_max: float) -> List[float]:
    if t_max < 0:
        raise DomainError("t_max must be nonnegative")
    return [t for t in profile.switch_times(t_max) if t <= t_max]


# Config construction

FAMILY_KEYS: Dict[str, Tuple[set, set]] = {
    "constant": ({"a"}, set()),
    "cosine": ({"a0", "a1"}, {"wave_vector"}),
    "space_bump": ({"w0", "center", "radius"}, {"smoothness", "axes"}),
    "poly_product": ({"base", "beta"}, {"C_m", "C_M", "omega"}),
    "growing_off": ({"base", "L0", "f"}, set()),
    "shrinking_on": ({"g", "S0", "f"}, {"chi"}),
}


def build_profile(spec: Optional[Dict], field: str = "damping", period: float = 2 * math.pi) -> Optional[DampingProfile]:
    """Build a profile from {family, params}; `None` or family 'none' means no damping."""
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ConfigError(field, "expected a mapping with 'family' and 'params'")
    unknown = set(spec) - {"family", "params"}
    if unknown:
        raise ConfigError(f"{field}.{sorted(unknown)[0]}", "unknown key")
    family = spec.get("family")
    if family in (None, "none"):
        return None
    if family not in FAMILY_KEYS:
        raise ConfigError(f"{field}.family", f"unknown damping family {family!r}")
    params = dict(spec.get("params") or {})
    required, optional = FAMILY_KEYS[family]
    for key in params:
        if key not in required | optional:
            raise ConfigError(f"{field}.params.{key}", f"not a parameter of {family}")
    for key in required:
        if key not in params:
            raise ConfigError(f"{field}.params.{key}", "missing")
    try:
        if family == "constant":
            return ConstantDamping(params["a"])
        if family == "cosine":
            return CosineDamping(params["a0"], params["a1"], params.get("wave_vector", (1,)), period=period)
        if family == "space_bump":
            return SpaceBump(
                params["w0"], params["center"], params["radius"],
                params.get("smoothness", "smooth"), params.get("axes"), period=period,
            )
        if family == "poly_product":
            base = build_profile(params["base"], f"{field}.params.base", period)
            return PolyProduct(base, params["beta"], params.get("C_m", 1.0), params.get("C_M", 1.0), params.get("omega", 1.0))
        if family == "growing_off":
            base = build_profile(params["base"], f"{field}.params.base", period)
            f = IntervalLengths.from_params(params["f"], f"{field}.params.f")
            return GrowingOff(base, params["L0"], f)
        g = build_profile(params["g"], f"{field}.params.g", period)
        f = IntervalLengths.from_params(params["f"], f"{field}.params.f")
        return ShrinkingOn(g, params["S0"], f, params.get("chi", "indicator"))
    except DomainError as e:
        raise ConfigError(f"{field}.params", str(e)) from e

"""Decay-law fits for energy traces and closed-form rate predictions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect, minimize_scalar

from errors import DomainError
from services.damping_service import GrowingOff, IntervalLengths
from services.grid_service import CSV_FORMAT, EnergyTrace

logger = logging.getLogger(__name__)

# Rates Service

MODELS = ("exp_sigma", "stretched", "power", "log_power")
MIN_SAMPLES = 8
STRETCH_BOUNDS = (0.05, 3.0)
SIGMA_LIMIT = 2.0
EXPONENT_TOLERANCE = 0.1
# energies below this fraction of E(0) are at the solver's round-off floor
RESOLVED_FRACTION = 1e-25


@dataclass
class RateFit:
    """log E ~ log C - c * g(t) for the model's transform g."""

    model: str
    C: float
    c: float
    p: Optional[float]
    residual: float
    window: Tuple[float, float]
    n_samples: int

    def __post_init__(self):
        if self.model not in MODELS:
            raise DomainError(f"unknown rate model {self.model!r}")
        if self.residual < 0 or not self.window[0] < self.window[1]:
            raise DomainError("invalid fit residual or window")

    def predict(self, times, sigma=None) -> np.ndarray:
        return self.C * np.exp(-self.c * _transform(self.model, np.asarray(times, dtype=float), sigma, self.p))

    def to_dict(self) -> Dict:
        return {
            "model": self.model,
            "C": self.C,
            "c": self.c,
            "p": self.p,
            "residual": self.residual,
            "window": list(self.window),
            "n_samples": self.n_samples,
        }

    def summary(self) -> str:
        form = {
            "exp_sigma": "C exp(-c Sigma(t))",
            "stretched": f"C exp(-c t^{self.p:.4f})" if self.p is not None else "",
            "power": "C (1+t)^-c",
            "log_power": "C ln(2+t)^-c",
        }[self.model]
        return (
            f"{self.model}: E ~ {form} with C={self.C:.6g}, c={self.c:.6g}; "
            f"rms log residual {self.residual:.3g} on [{self.window[0]:.4g}, {self.window[1]:.4g}] ({self.n_samples} samples)"
        )


def fits_to_csv(fits: Sequence[RateFit], path) -> None:
    rows = [[MODELS.index(f.model), f.C, f.c, np.nan if f.p is None else f.p, f.residual, *f.window] for f in fits]
    header = "model_index,C,c,p,residual,t_min,t_max"
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", header=header, comments="", fmt=CSV_FORMAT)


def _transform(model: str, t: np.ndarray, sigma=None, p=None) -> np.ndarray:
    if model == "exp_sigma":
        if sigma is None:
            raise DomainError("exp_sigma needs a sigma channel")
        return np.asarray(sigma, dtype=float)
    if model == "stretched":
        return t ** p
    if model == "power":
        return np.log1p(t)
    return np.log(np.log(2.0 + t))


def _linear_fit(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    """Least squares y = a - c*x; returns (a, c, rms)."""
    design = np.column_stack([np.ones_like(x), -x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), rms


def resolved_until(trace: EnergyTrace) -> float:
    """Last sample time before E/E(0) first falls below RESOLVED_FRACTION."""
    E0 = float(trace.energy[0])
    if E0 <= 0:
        return float(trace.times[-1])
    below = np.flatnonzero(trace.energy < RESOLVED_FRACTION * E0)
    if below.size == 0:
        return float(trace.times[-1])
    return float(trace.times[max(int(below[0]) - 1, 0)])


def fit(trace: EnergyTrace, model: str, window: Optional[Tuple[float, float]] = None) -> RateFit:
    """Fit one decay model to the trace samples inside `window` (default: last 80% of the resolved part of the run)."""
    if model not in MODELS:
        raise DomainError(f"unknown rate model {model!r}; choose from {MODELS}")
    t_res = resolved_until(trace)
    lo, hi = window if window is not None else (0.2 * t_res, t_res)
    if not lo < hi:
        raise DomainError("fit window must have t_min < t_max")
    if hi > t_res:
        logger.info("fit window cut at t=%.4g where E/E(0) drops below %.0e", t_res, RESOLVED_FRACTION)
        hi = t_res
    mask = (trace.times >= lo - 1e-12) & (trace.times <= hi + 1e-12)
    n = int(np.sum(mask))
    if n < MIN_SAMPLES:
        raise DomainError(f"fit needs at least {MIN_SAMPLES} samples in [{lo}, {hi}], found {n}")
    E = trace.energy[mask]
    if np.any(E <= 0):
        raise DomainError("fit window contains nonpositive energy")
    t = trace.times[mask]
    y = np.log(E)
    sigma = None
    if model == "exp_sigma":
        if trace.sigma is None:
            raise DomainError("exp_sigma fit needs a trace with a sigma channel")
        sigma = trace.sigma[mask]

    p = None
    if model == "stretched":
        # variable projection: linear in (log C, c) for each p
        def sse(q):
            return _linear_fit(t ** q, y)[2] ** 2

        found = minimize_scalar(sse, bounds=STRETCH_BOUNDS, method="bounded", options={"xatol": 1e-10})
        p = float(found.x)
    a, c, rms = _linear_fit(_transform(model, t, sigma, p), y)
    if c < 0:
        logger.debug("fitted %s rate c=%.3g < 0 (no decay on window); clamped", model, c)
        c = 0.0
    result = RateFit(model, math.exp(a), c, p, rms, (float(lo), float(hi)), n)
    logger.info(result.summary())
    return result


@dataclass
class Verdict:
    passed: bool
    message: str

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "message": self.message}


def sigma_exponent_bound_check(fit_result: RateFit, limit: float = SIGMA_LIMIT, tolerance: float = EXPONENT_TOLERANCE) -> Verdict:
    """A measured exp(-c Sigma) rate cannot beat c = 2 (up to tolerance)."""
    if fit_result.model != "exp_sigma":
        raise DomainError(f"sigma bound check needs an exp_sigma fit, got {fit_result.model}")
    if fit_result.c <= limit + tolerance:
        return Verdict(True, f"c={fit_result.c:.4f} <= {limit} (+{tolerance})")
    return Verdict(False, f"c={fit_result.c:.4f} exceeds {limit} + {tolerance}: check resolution or the sigma channel")


@dataclass(frozen=True)
class RateForm:
    """A predicted decay form.

    kind: exponential | stretched | power | log_power | stall | none.
    `threshold` is the rate constant above which the form cannot hold, when known.
    """

    kind: str
    exponent: Optional[float] = None
    threshold: Optional[float] = None
    note: str = ""

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "exponent": self.exponent, "threshold": self.threshold, "note": self.note}

    def admits(self, measured_exponent: float, tolerance: float = EXPONENT_TOLERANCE) -> bool:
        if self.kind == "exponential":
            return abs(measured_exponent - 1.0) <= tolerance
        if self.kind == "stretched":
            return abs(measured_exponent - self.exponent) <= tolerance
        return False


def _stretched_or(exponent: float, kind: str, threshold=None, note="") -> RateForm:
    if exponent >= 1.0 - 1e-12:
        return RateForm("exponential", 1.0, threshold, note)
    return RateForm(kind, exponent, threshold, note)


# Growing off-intervals

class GrowthCalculus:
    """F(x) = int_1^{x+1} f, B(x) = int_0^x f and their inverses."""

    def __init__(self, f: IntervalLengths, C1: Optional[float] = None, samples: int = 50):
        if f.kind == "decay":
            raise DomainError("growing off-intervals need increasing lengths")
        self.f = f
        self.C1 = f.C1 if C1 is None else float(C1)
        with np.errstate(over="ignore"):
            values = np.asarray(f(np.arange(1, samples + 1)), dtype=float)
        finite = values[np.isfinite(values)]
        if np.any(finite < self.C1 * (1 - 1e-12)):
            raise DomainError(f"f must be >= C1={self.C1} on the sampled integers")

    def _integral(self, a: float, b: float) -> float:
        with np.errstate(over="ignore"):
            value, _ = quad(self.f, a, b, epsrel=1e-13, epsabs=0.0, limit=200)
        return value if math.isfinite(value) else math.inf

    def F(self, x: float) -> float:
        return self._integral(1.0, x + 1.0)

    def B(self, x: float) -> float:
        return self._integral(0.0, x)

    def _invert(self, func, s: float) -> float:
        if s < 0:
            raise DomainError("inverse is defined for s >= 0")
        if s == 0:
            return 0.0
        hi = 1.0
        while func(hi) < s:
            hi *= 2.0
            if hi > 1e6:
                raise DomainError(f"cannot bracket the inverse at s={s}")
        return float(bisect(lambda x: min(func(x), 1e300) - s, 0.0, hi, xtol=1e-12, maxiter=200))

    def F_inv(self, s: float) -> float:
        return self._invert(self.F, s)

    def B_inv(self, s: float) -> float:
        return self._invert(self.B, s)

    def closed_F_inv(self, s: float) -> Optional[float]:
        f = self.f
        if f.kind == "power":
            return ((f.alpha + 1) * s / f.C1 + 1) ** (1 / (f.alpha + 1)) - 1
        if f.kind == "geometric":
            return math.log(math.log(f.r) / f.C1 * s + f.r) / math.log(f.r) - 1
        if f.kind == "double_exp":
            return math.log(math.log(s / f.C1 + math.e ** math.e)) - 1
        return None

    def closed_B_inv(self, s: float) -> Optional[float]:
        f = self.f
        if f.kind == "power":
            return ((f.alpha + 1) * s / f.C1) ** (1 / (f.alpha + 1))
        if f.kind == "geometric":
            return math.log(math.log(f.r) / f.C1 * s + 1) / math.log(f.r)
        if f.kind == "double_exp":
            return math.log(math.log(s / f.C1 + math.e))
        return None


@dataclass
class GrowingPrediction:
    times: np.ndarray
    F_inv: np.ndarray
    B_inv: np.ndarray
    upper_rate: np.ndarray
    lower_envelope: np.ndarray
    N_lower: np.ndarray
    N_upper: np.ndarray
    form: RateForm
    N_measured: Optional[np.ndarray] = None

    @property
    def bracket_ok(self) -> bool:
        ok = bool(np.all(self.F_inv <= self.B_inv + 3 + 1e-9))
        if self.N_measured is not None:
            ok = ok and bool(np.all(self.N_lower <= self.N_measured + 1e-9)) and bool(np.all(self.N_measured <= self.N_upper + 1e-9))
        return ok

    def to_csv(self, path) -> None:
        measured = self.N_measured if self.N_measured is not None else np.full(self.times.shape, np.nan)
        table = np.column_stack([self.times, self.F_inv, self.B_inv, self.upper_rate, self.lower_envelope,
                                 self.N_lower, self.N_upper, measured])
        header = "t,F_inv,B_inv,upper_rate,lower_envelope,N_lower,N_upper,N_measured"
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=CSV_FORMAT)


def growing_form(f: IntervalLengths, L0: float, C_bar: float = 1.0) -> RateForm:
    """Shared upper/lower decay form for the named length families with its lower-bound threshold."""
    if f.kind == "power":
        exponent = 1.0 / (f.alpha + 1)
        threshold = 2 * C_bar * L0 * ((f.alpha + 1) / f.C1) ** exponent
        return _stretched_or(exponent, "stretched", threshold, "exp(-c t^(1/(alpha+1)))")
    if f.kind == "geometric":
        return RateForm("power", None, 2 * C_bar * L0 / math.log(f.r), "(1+t)^-c")
    if f.kind == "double_exp":
        return RateForm("log_power", None, 2 * C_bar * L0, "ln(2+t)^-c")
    raise DomainError("growing off-intervals need increasing lengths")


def predict_growing(
    f: IntervalLengths,
    L0: float,
    times: Sequence[float],
    C1: Optional[float] = None,
    c: float = 1.0,
    C_bar: float = 1.0,
    profile: Optional[GrowingOff] = None,
) -> GrowingPrediction:
    """Rate envelopes exp(-c F^-1(C1 t/(L0 + C1))) and exp(-c B^-1(t)) with the N(t) bracket."""
    if not L0 > 0:
        raise DomainError("L0 must be positive")
    calculus = GrowthCalculus(f, C1)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise DomainError("times must be nonnegative")
    scale = calculus.C1 / (L0 + calculus.C1)
    F_inv = np.array([calculus.F_inv(scale * t) for t in times])
    B_inv = np.array([calculus.B_inv(t) for t in times])
    measured = None
    if profile is not None:
        measured = np.array([profile.on_count(t) for t in times], dtype=float)
    return GrowingPrediction(
        times, F_inv, B_inv, np.exp(-c * F_inv), np.exp(-c * B_inv), F_inv - 1, B_inv + 2,
        growing_form(f, L0, C_bar), measured,
    )


# Shrinking on-intervals and polynomial damping

@dataclass
class RatePrediction:
    upper: RateForm
    lower: RateForm
    regime: str

    def to_dict(self) -> Dict:
        return {"regime": self.regime, "upper": self.upper.to_dict(), "lower": self.lower.to_dict()}

    def exponent_interval(self, tolerance: float = EXPONENT_TOLERANCE) -> Optional[Tuple[float, float]]:
        """[upper exponent - tol, lower exponent + tol] when both are stretched forms."""
        if self.upper.exponent is None or self.lower.exponent is None:
            return None
        lo, hi = sorted((self.upper.exponent, self.lower.exponent))
        return lo - tolerance, hi + tolerance


def predict_shrinking(beta: float, S0: float = 2.0, C_M: float = 1.0, C_W: float = 1.0) -> RatePrediction:
    """Upper form from the window-observability bookkeeping and lower form from Sigma ~ t^(1-beta)."""
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    if not S0 > 0:
        raise DomainError("S0 must be positive")
    third = 1.0 / 3.0
    if abs(beta - third) < 1e-12:
        upper = RateForm("power", None, None, "(1+t)^-c")
    elif beta < third:
        upper = _stretched_or(1 - 3 * beta, "stretched", None, "exp(-c t^(1-3beta))")
    else:
        upper = RateForm("stall", None, None, "no decay guaranteed")
    if abs(beta - 1.0) < 1e-12:
        lower = RateForm("power", None, 2 * C_M * C_W / S0, "(1+t)^-c")
    elif beta < 1:
        lower = _stretched_or(1 - beta, "stretched", 2 * C_M * C_W / ((1 - beta) * S0 ** (1 - beta)), "exp(-c t^(1-beta))")
    else:
        lower = RateForm("none", None, None, "Sigma bounded: no uniform stabilization")
    regime = "gap" if upper.exponent != lower.exponent else "sharp"
    if lower.kind == "none":
        regime = "no-stabilization"
    return RatePrediction(upper, lower, regime)


def poly_rate_check(beta: float, C_M: float = 1.0, W_sup: float = 1.0) -> RatePrediction:
    """Forms for W = base * (1+t)^-beta: stretched 1-beta, power at beta = 1, none above."""
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    if abs(beta - 1.0) < 1e-12:
        form = RateForm("power", None, 2 * C_M * W_sup, "(1+t)^-c")
        return RatePrediction(form, form, "power")
    if beta < 1:
        form = _stretched_or(1 - beta, "stretched", 2 * C_M * W_sup / (1 - beta), "exp(-c t^(1-beta))")
        return RatePrediction(form, form, "exponential" if beta == 0 else "stretched")
    form = RateForm("none", None, None, "Sigma bounded: no uniform stabilization")
    return RatePrediction(form, form, "no-stabilization")

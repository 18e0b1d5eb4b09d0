"""Named reproduction experiments with pass/fail checks.

Each experiment writes its CSVs, report.json and manifest.json into its
output directory. A failed check raises AcceptanceError after the files are
written.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config import Config
from errors import AcceptanceError
from services.beam_service import BeamSpec, beam_vs_exact, energy_study, grid_for, residual_study
from services.damping_service import (
    ConstantDamping,
    GrowingOff,
    IntervalLengths,
    PolyProduct,
    ShrinkingOn,
    SpaceBump,
)
from services.geodesic_service import Geodesic, GeodesicSampling, check_tgcc, parallel_map, sigma, sigma_curve
from services.grid_service import TorusGrid
from services.observe_service import decay_bookkeeping, measure_window_fractions, sandwich_check, short_time_sweep
from services.rates_service import (
    fit,
    poly_rate_check,
    predict_growing,
    predict_shrinking,
    resolved_until,
    sigma_exponent_bound_check,
)
from services.solver_service import (
    SolverConfig,
    evolve,
    mode_energy,
    mode_solution,
    random_band_limited,
    single_mode,
)

logger = logging.getLogger(__name__)

# Reproduce Service

PI = math.pi


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    limit: object = None

    def to_dict(self) -> Dict:
        return {"name": self.name, "passed": bool(self.passed), "value": self.value, "limit": self.limit}


Outcome = Tuple[Dict, List[Check]]


def _workers(threads: Optional[int]) -> int:
    return max(1, threads or Config.LAB_THREADS)


def energy_conservation(out: str, seed: int, threads: Optional[int]) -> Outcome:
    grid = TorusGrid(1, 256)
    state = random_band_limited(grid, seed)
    _, trace = evolve(state, None, 10.0, SolverConfig(dt=1e-3, trace_stride=10))
    trace.to_csv(os.path.join(out, "trace.csv"))
    drift = float(np.max(np.abs(trace.energy - trace.energy[0])) / trace.energy[0])
    return {"relative_drift": drift}, [Check("relative energy drift", drift <= 1e-8, drift, 1e-8)]


def constant_damping_oracle(out: str, seed: int, threads: Optional[int]) -> Outcome:
    grid = TorusGrid(1, 256)
    a, lam = 0.1, 8
    W = ConstantDamping(a)
    final, trace = evolve(single_mode(grid, [lam]), W, 10.0, SolverConfig(dt=1e-3, trace_stride=20))
    q, dq = mode_solution(lam, a, 1.0, 0.0, trace.times)
    exact = np.array([mode_energy(grid, [lam], qi, dqi) for qi, dqi in zip(q, dq)])
    energy_error = float(np.max(np.abs(trace.energy - exact) / exact))
    profile = np.cos(lam * grid.axis())
    field_error = float(np.max(np.abs(final.u.values - q[-1] * profile)) / abs(q[-1]))
    trace = trace.with_sigma(sigma_curve(W, trace.times, GeodesicSampling(n_points=4, refine=False, workers=_workers(threads))))
    trace.to_csv(os.path.join(out, "trace.csv"))
    rate = fit(trace, "exp_sigma")
    verdict = sigma_exponent_bound_check(rate)
    report = {"energy_error": energy_error, "field_error": field_error, "fit": rate.to_dict(), "sigma_bound": verdict.to_dict()}
    checks = [
        Check("energy vs closed form", energy_error <= 1e-6, energy_error, 1e-6),
        Check("final field vs closed form", field_error <= 1e-6, field_error, 1e-6),
        Check("exp_sigma exponent in [1.9, 2.1]", 1.9 <= rate.c <= 2.1, rate.c, [1.9, 2.1]),
        Check("sigma exponent bound", verdict.passed, rate.c, 2.1),
    ]
    return report, checks


def _beam_spec(dim: int, k: float = 32) -> BeamSpec:
    if dim == 1:
        return BeamSpec(Geodesic([0.0], [1.0]), k)
    return BeamSpec(Geodesic([0.0, 0.0], [1.0, 0.0]), k)


def beam_residual_slope(out: str, seed: int, threads: Optional[int]) -> Outcome:
    ks = [32.0, 64.0, 128.0, 256.0]
    report, checks = {}, []
    for dim in (1, 2):
        for label, W in (("undamped", None), ("constant", ConstantDamping(0.2))):
            study = residual_study(_beam_spec(dim), W, ks, 1.0, _workers(threads))
            name = f"T{dim}_{label}"
            study.to_csv(os.path.join(out, f"residual_{name}.csv"))
            report[name] = study.to_dict()
            checks.append(Check(f"residual slope {name}", study.passes(-0.4), "exact" if study.exact else study.slope, -0.4))
    return report, checks


def beam_energy_law(out: str, seed: int, threads: Optional[int]) -> Outcome:
    W = ConstantDamping(0.2)
    times = np.linspace(0.0, 5.0, 11).tolist()
    study = energy_study(_beam_spec(1), W, [128.0, 512.0], times, _workers(threads))
    study.to_csv(os.path.join(out, "energy_defect.csv"))
    coarse, fine = study.values
    # quadrupling k must shrink the defect at least like k^-1/2, within 30%
    limit = 1.3 * coarse / 2.0
    return {"study": study.to_dict()}, [Check("defect(512) <= 1.3 * defect(128) / 2", fine <= limit, fine, limit)]


def lower_bound_witness(out: str, seed: int, threads: Optional[int]) -> Outcome:
    W = SpaceBump(1.0, [PI, 0.0], 1.5, "smooth", axes=[0])
    spec = BeamSpec(Geodesic([0.0, 0.0], [0.0, 1.0]), 128)
    grid = grid_for(spec.k, 2)
    comparison = beam_vs_exact(spec, W, grid, 5.0, SolverConfig(dt=5e-3, scheme="strang", trace_stride=10))
    comparison.to_csv(os.path.join(out, "beam_vs_exact.csv"))
    sampling = GeodesicSampling(n_points=8, n_directions=4, refine=False, workers=_workers(threads))
    tgcc = check_tgcc(W, 1.0, sampling, dim=2)
    sig = sigma(W, 5.0, sampling, dim=2)
    report = {"comparison": comparison.to_dict(), "tgcc": tgcc.to_dict(), "sigma": sig.to_dict()}
    checks = [
        Check("exact energy retained >= 0.8", comparison.retained >= 0.8, comparison.retained, 0.8),
        Check("sigma(5) = 0", sig.value == 0.0, sig.value, 0.0),
        Check("tgcc not satisfied", not tgcc.satisfied, tgcc.value, 0.0),
    ]
    return report, checks


def sandwich(out: str, seed: int, threads: Optional[int]) -> Outcome:
    grid = TorusGrid(1, 128)
    base = ConstantDamping(0.1)
    families = {
        "constant": base,
        "poly_product": PolyProduct(base, 0.5),
        "growing_off": GrowingOff(base, 1.0, IntervalLengths("power", 1.0, alpha=1.0)),
    }
    config = SolverConfig(dt=5e-3)
    cases = [(name, W, i) for name, W in families.items() for i in range(5)]
    results = parallel_map(
        lambda case: sandwich_check(random_band_limited(grid, seed + case[2]), case[1], 5.0, config),
        cases, _workers(threads),
    )
    report, checks = {}, []
    for (name, _, i), result in zip(cases, results):
        report[f"{name}_{i}"] = result.to_dict()
        tol = 1e-8 * max(1.0, result.mid)
        checks.append(Check(f"{name} data {i} lower", result.slack_lower >= -tol, result.slack_lower, -tol))
        checks.append(Check(f"{name} data {i} upper", result.slack_upper >= -tol, result.slack_upper, -tol))
    return report, checks


def short_time(out: str, seed: int, threads: Optional[int]) -> Outcome:
    deltas = np.geomspace(0.01, 0.1, 20)
    sine = short_time_sweep(1.0, 0.0, 1.0, deltas)
    cosine = short_time_sweep(0.0, 1.0, 1.0, deltas)
    sine.to_csv(os.path.join(out, "short_time_sine.csv"))
    cosine.to_csv(os.path.join(out, "short_time_cosine.csv"))
    wide = np.linspace(0.5, 2.0, 16)
    worst = 0.0
    for lam in (1, 2, 4, 8, 16, 32, 64):
        table = short_time_sweep(1.0, 0.0, float(lam), wide)
        worst = max(worst, float(np.max(table.constants / wide ** 2)))
    bound = 1.0 / (1.0 - math.sin(1.0))
    report = {"sine": sine.to_dict(), "cosine": cosine.to_dict(), "wide_max_C_over_delta2": worst}
    checks = [
        Check("sine slope -3", abs(sine.slope + 3) <= 0.05, sine.slope, [-3.05, -2.95]),
        Check("cosine slope -1", abs(cosine.slope + 1) <= 0.05, cosine.slope, [-1.05, -0.95]),
        Check("C(delta)/delta^2 bounded for lambda*delta >= 1/2", worst <= bound, worst, bound),
    ]
    return report, checks


def _decay_run(W, out: str, seed: int, t_end: float, checkpoints=()):
    grid = TorusGrid(1, 128)
    _, trace = evolve(random_band_limited(grid, seed), W, t_end, SolverConfig(dt=0.02, trace_stride=50), checkpoints=checkpoints)
    trace.to_csv(os.path.join(out, "trace.csv"))
    return trace


def _poly(beta: float) -> Callable:
    def experiment(out: str, seed: int, threads: Optional[int]) -> Outcome:
        # integrable damping on constant(0.1) retains more than half of E(0)
        base = ConstantDamping(0.1 if beta > 1 else 1.0)
        W = PolyProduct(base, beta)
        trace = _decay_run(W, out, seed, 200.0)
        prediction = poly_rate_check(beta, W_sup=base.sup_norm)
        report = {"prediction": prediction.to_dict()}
        if beta > 1:
            retained = float(trace.energy[-1] / trace.energy[0])
            report["retained"] = retained
            return report, [Check("energy plateau >= 0.5 E(0)", retained >= 0.5, retained, 0.5)]
        stretched = fit(trace, "stretched")
        report["stretched"] = stretched.to_dict()
        if beta == 1:
            power = fit(trace, "power")
            report["power"] = power.to_dict()
            return report, [Check("power fit beats stretched fit", power.residual < stretched.residual,
                                  power.residual, stretched.residual)]
        return report, [Check("stretched exponent", prediction.upper.admits(stretched.p), stretched.p, 1 - beta)]
    return experiment


def growing_off(out: str, seed: int, threads: Optional[int]) -> Outcome:
    f = IntervalLengths("power", 1.0, alpha=1.0)
    W = GrowingOff(ConstantDamping(1.0), 1.0, f)
    trace = _decay_run(W, out, seed, 400.0)
    stretched = fit(trace, "stretched")
    hi = resolved_until(trace)
    inside = (trace.times >= 0.2 * hi) & (trace.times <= hi)
    times = trace.times[inside]
    decay = -np.log(trace.energy[inside] / trace.energy[0])
    prediction = predict_growing(f, W.L0, times, profile=W)
    prediction.to_csv(os.path.join(out, "prediction.csv"))
    # -log(E/E0) >= c F^-1 for some c > 0, and <= 4 sup W times the on-time, itself <= L0 (B^-1 + 3)
    c_upper = float(np.min(decay / prediction.F_inv))
    ceiling = 4.0 * W.sup_norm * W.L0 * (prediction.B_inv + 3.0)
    headroom = float(np.min(ceiling - decay))
    report = {"stretched": stretched.to_dict(), "form": prediction.form.to_dict(),
              "window": [float(times[0]), float(times[-1])], "c_upper": c_upper, "lower_headroom": headroom}
    checks = [
        Check("stretched exponent near 1/2", abs(stretched.p - 0.5) <= 0.1, stretched.p, [0.4, 0.6]),
        Check("decay dominates c F^-1(t) with c >= 1/2", c_upper >= 0.5, c_upper, 0.5),
        Check("decay below 4 sup W L0 (B^-1(t) + 3)", headroom >= 0.0, headroom, 0.0),
        Check("N(t) bracket", prediction.bracket_ok, None, None),
    ]
    return report, checks


def shrinking_on(out: str, seed: int, threads: Optional[int]) -> Outcome:
    beta, S0 = 0.2, 2.0
    W = ShrinkingOn(ConstantDamping(1.0), S0, IntervalLengths("decay", 1.0, beta=beta), "indicator")
    trace = _decay_run(W, out, seed, 400.0, checkpoints=np.arange(S0, 400.0 + 1e-9, S0))
    stretched = fit(trace, "stretched")
    prediction = predict_shrinking(beta, S0)
    lo, hi = prediction.exponent_interval()
    book = decay_bookkeeping(measure_window_fractions(trace, S0), S0, trace)
    book.to_csv(os.path.join(out, "bookkeeping.csv"))
    report = {"stretched": stretched.to_dict(), "prediction": prediction.to_dict(), "bookkeeping": book.to_dict()}
    checks = [
        Check("stretched exponent in the predicted gap", lo <= stretched.p <= hi, stretched.p, [lo, hi]),
        Check("decay bookkeeping bound", book.holds, book.violations, []),
    ]
    return report, checks


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    func: Callable[[str, int, Optional[int]], Outcome]
    slow: bool = False


CATALOG: Dict[str, Experiment] = {
    e.name: e
    for e in (
        Experiment("energy-conservation", "undamped T^1 energy drift over [0, 10]", energy_conservation),
        Experiment("constant-damping-oracle", "constant(0.1) single mode vs closed form and sigma <= 2", constant_damping_oracle),
        Experiment("beam-residual-slope", "beam residual slope in k on T^1/T^2, W in {0, 0.2}", beam_residual_slope, True),
        Experiment("beam-energy-law", "|E(v_k) - G^2| shrinks from k=128 to k=512", beam_energy_law, True),
        Experiment("lower-bound-witness", "beam along an undamped closed geodesic keeps its energy", lower_bound_witness, True),
        Experiment("sandwich", "damped/undamped observation sandwich on three families", sandwich, True),
        Experiment("short-time", "short-window observability slopes -3 and -1", short_time),
        Experiment("poly-beta-02", "polynomial damping beta=0.2 on constant(1): stretched exponent 0.8", _poly(0.2), True),
        Experiment("poly-beta-05", "polynomial damping beta=0.5 on constant(1): stretched exponent 0.5", _poly(0.5), True),
        Experiment("poly-beta-1", "polynomial damping beta=1 on constant(1): power law", _poly(1.0), True),
        Experiment("poly-beta-15", "polynomial damping beta=1.5 on constant(0.1): energy plateau >= E(0)/2", _poly(1.5), True),
        Experiment("growing-off", "growing off-intervals f(j)=j: stretched exponent 1/2 inside the F^-1/B^-1 envelopes", growing_off, True),
        Experiment("shrinking-on", "shrinking on-intervals beta=0.2: exponent in [0.3, 0.9]", shrinking_on, True),
    )
}


def list_experiments() -> List[Tuple[str, str]]:
    return [(e.name, e.description) for e in CATALOG.values()]


def reproduce(name: str, output_dir: Optional[str] = None, seed: int = 0, threads: Optional[int] = None, ledger: bool = True):
    """Run one catalog experiment; raises AcceptanceError when a check fails."""
    from errors import ConfigError
    from services.experiment_service import RunResult, record_outcome, write_json, write_manifest

    if name not in CATALOG:
        raise ConfigError("reproduce", f"unknown experiment {name!r}; see list-experiments")
    experiment = CATALOG[name]
    out = output_dir or os.path.join(Config.RESULTS_DIR, f"reproduce-{name}")
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    logger.info("reproducing %s into %s", name, out)
    report, checks = experiment.func(out, seed, threads)
    wall = time.perf_counter() - start
    failed = [c for c in checks if not c.passed]
    report = dict(report, checks=[c.to_dict() for c in checks], passed=not failed)
    write_json(os.path.join(out, "report.json"), report)
    artifacts = sorted(f for f in os.listdir(out) if f.endswith(".csv")) + ["report.json"]
    status = "failed" if failed else "ok"
    write_manifest(out, {"experiment": name, "description": experiment.description}, f"reproduce-{name}", seed, wall,
                   artifacts, status)
    if ledger:
        record_outcome(kind=f"reproduce-{name}", output_dir=out, status=status, exit_code=3 if failed else 0, seed=seed,
                wall_time=wall, message="; ".join(c.name for c in failed), name=name)
    for c in checks:
        logger.info("[%s] %s: %s (limit %s)", "PASS" if c.passed else "FAIL", c.name, c.value, c.limit)
    if failed:
        raise AcceptanceError(f"{name}: failed checks: " + ", ".join(c.name for c in failed))
    return RunResult("ok", 0, out, report, artifacts, wall)

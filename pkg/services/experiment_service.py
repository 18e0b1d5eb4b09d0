"""Experiment configuration, single runs, sweeps and artifact files."""
from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import yaml

from config import Config
from errors import ConfigError, DomainError, LabError
from models import record_run
from services.beam_service import BeamSpec, beam_vs_exact, energy_study, grid_for, quasi_solution, residual_study
from services.damping_service import DampingProfile, build_profile
from services.geodesic_service import (
    Geodesic,
    GeodesicSampling,
    L_curve,
    L_infinity,
    check_tgcc,
    sigma,
    sigma_curve,
)
from services.grid_service import CSV_FORMAT, EnergyTrace, TorusGrid, field_to_csv
from services.observe_service import (
    ObservationWindow,
    decay_bookkeeping,
    measure_window_fractions,
    observability_curve,
    observability_ratio,
    sandwich_check,
    short_time_sweep,
    window_checkpoints,
)
from services.rates_service import MODELS, fit, fits_to_csv, sigma_exponent_bound_check
from services.solver_service import (
    SolverConfig,
    WaveState,
    energy_identity_check,
    evolve,
    random_band_limited,
    single_mode,
)

logger = logging.getLogger(__name__)

# Experiment Service

KINDS = ("simulate", "sigma", "tgcc", "beam", "observe", "fit")
REPRODUCE_PREFIX = "reproduce-"

SCHEMA: Dict[str, Dict[str, Any]] = {
    "grid": {"dim": 1, "points": 256, "period": Config.DEFAULT_PERIOD},
    "solver": {"dt": 1e-3, "scheme": "rk4", "align": True, "trace_stride": 1, "growth_tolerance": 1e-6},
    "initial": {"kind": "random", "band": 16, "wave_vector": None, "u_amp": 1.0, "v_amp": 0.0, "energy": 1.0},
    "run": {"t_end": 10.0, "checkpoints": [], "sigma_channel": False, "window_T0": None},
    "sampling": {
        "n_points": 16,
        "n_directions": 8,
        "n_start_times": 32,
        "quadrature_step": Config.QUADRATURE_STEP,
        "t0_max": 100.0,
        "refine": True,
    },
    "functional": {"times": None, "T0": 1.0, "T_values": None, "levels": 5},
    "beam": {
        "x0": None,
        "direction": None,
        "angle": None,
        "k": 64,
        "M0_re": None,
        "M0_im": None,
        "b0_init": None,
        "t0": 0.0,
        "study": "residual",
        "ks": [32, 64, 128, 256],
        "t": 1.0,
        "t_end": 5.0,
        "n_times": 11,
    },
    "observe": {
        "mode": "ratio",
        "t0": 0.0,
        "T": Config.DEFAULT_PERIOD,
        "A": 1.0,
        "B": 0.0,
        "lam": 1.0,
        "deltas": None,
        "T0": 2.0,
        "t0_values": None,
        "weight": "damping",
    },
    "fit": {"models": list(MODELS), "window": None, "trace": None},
    "sweep": {"parameters": {}},
}
TOP_LEVEL = {"kind", "seed", "output_dir", "name", "damping"} | set(SCHEMA)
OBSERVE_MODES = ("ratio", "curve", "sandwich", "short_time", "bookkeeping")
# string or mapping; checked by build_profile
FREE_FORM = {"observe.weight"}
BEAM_STUDIES = ("residual", "energy", "exact")


def assign_dotted(raw: Dict, dotted: str, value: Any) -> None:
    """Set raw[a][b][c] = value for dotted = "a.b.c", creating mappings on the way."""
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path does not lead to a mapping")
    node[keys[-1]] = value


def _coerce(field_name: str, value: Any, default: Any) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(field_name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(field_name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field_name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(field_name, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(field_name, f"expected a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(field_name, f"expected a mapping, got {value!r}")
        return value
    return value


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    output_dir: Optional[str] = None
    name: Optional[str] = None
    damping: Optional[Dict] = None
    sections: Dict[str, Dict] = field(default_factory=dict)
    raw: Dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        for key in raw:
            if key not in TOP_LEVEL:
                raise ConfigError(str(key), "unknown key")
        kind = raw.get("kind")
        if not isinstance(kind, str):
            raise ConfigError("kind", "missing")
        if kind not in KINDS and not kind.startswith(REPRODUCE_PREFIX):
            raise ConfigError("kind", f"unknown experiment kind {kind!r}")
        seed = _coerce("seed", raw.get("seed", 0), 0)
        sections = {}
        for name, defaults in SCHEMA.items():
            given = raw.get(name) or {}
            if not isinstance(given, dict):
                raise ConfigError(name, "expected a mapping")
            merged = dict(defaults)
            for key, value in given.items():
                if key not in defaults:
                    raise ConfigError(f"{name}.{key}", "unknown key")
                dotted = f"{name}.{key}"
                merged[key] = value if dotted in FREE_FORM else _coerce(dotted, value, defaults[key])
            sections[name] = merged
        config = cls(kind, seed, raw.get("output_dir"), raw.get("name"), raw.get("damping"), sections, copy.deepcopy(raw))
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, path: str, kind: Optional[str] = None) -> "ExperimentConfig":
        """Load a YAML experiment file; `kind` fills in or must match the file's kind."""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = yaml.safe_load(handle)
        except OSError as e:
            raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from e
        except yaml.YAMLError as e:
            raise ConfigError("--config", f"invalid YAML: {e}") from e
        raw = raw or {}
        if kind is not None and isinstance(raw, dict):
            raw.setdefault("kind", kind)
            if raw["kind"] != kind:
                raise ConfigError("kind", f"file describes {raw['kind']!r}, not {kind!r}")
        return cls.from_dict(raw)

    def section(self, name: str) -> Dict:
        return self.sections[name]

    def validate(self) -> None:
        """Build every typed object once so bad values surface with their field names."""
        grid = self.build_grid()
        self.build_damping()
        self.build_solver()
        self.build_sampling()
        if self.section("initial")["kind"] not in ("random", "mode", "beam"):
            raise ConfigError("initial.kind", "expected random, mode or beam")
        if self.kind == "beam" or self.section("initial")["kind"] == "beam":
            self.build_beam(grid.dim)
            if self.section("beam")["study"] not in BEAM_STUDIES:
                raise ConfigError("beam.study", f"expected one of {BEAM_STUDIES}")
        if self.kind == "observe":
            if self.section("observe")["mode"] not in OBSERVE_MODES:
                raise ConfigError("observe.mode", f"expected one of {OBSERVE_MODES}")
            weight = self.section("observe")["weight"]
            if weight != "damping":
                if not isinstance(weight, dict):
                    raise ConfigError("observe.weight", "expected 'damping' or a {family, params} mapping")
                self.build_damping(weight)
        if self.kind == "fit":
            for model in self.section("fit")["models"]:
                if model not in MODELS:
                    raise ConfigError("fit.models", f"unknown model {model!r}")
        if not self.section("run")["t_end"] >= 0:
            raise ConfigError("run.t_end", "must be nonnegative")

    def with_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if output_dir is not None:
            raw["output_dir"] = output_dir
        if seed is not None:
            raw["seed"] = seed
        return ExperimentConfig.from_dict(raw)

    def with_value(self, dotted: str, value: Any) -> "ExperimentConfig":
        """Copy with one dotted path replaced, e.g. 'damping.params.beta'."""
        raw = copy.deepcopy(self.raw)
        assign_dotted(raw, dotted, value)
        return ExperimentConfig.from_dict(raw)

    def to_dict(self) -> Dict:
        out = {"kind": self.kind, "seed": self.seed, "damping": self.damping}
        if self.name:
            out["name"] = self.name
        out.update({name: dict(values) for name, values in self.sections.items()})
        return out

    def resolve_output_dir(self) -> str:
        return self.output_dir or os.path.join(Config.RESULTS_DIR, self.name or self.kind)

    # Typed objects

    def build_grid(self) -> TorusGrid:
        g = self.section("grid")
        try:
            return TorusGrid(g["dim"], g["points"], g["period"])
        except DomainError as e:
            raise ConfigError("grid", str(e)) from e

    def build_damping(self, spec: Any = "damping") -> Optional[DampingProfile]:
        if spec == "damping":
            return build_profile(self.damping, "damping", self.section("grid")["period"])
        return build_profile(spec, "observe.weight", self.section("grid")["period"])

    def build_solver(self) -> SolverConfig:
        s = self.section("solver")
        try:
            return SolverConfig(s["dt"], s["scheme"], s["align"], s["trace_stride"], s["growth_tolerance"])
        except DomainError as e:
            raise ConfigError("solver", str(e)) from e

    def build_sampling(self, workers: int = 1) -> GeodesicSampling:
        s = self.section("sampling")
        try:
            return GeodesicSampling(**s, workers=workers)
        except DomainError as e:
            raise ConfigError("sampling", str(e)) from e

    def build_beam(self, dim: int) -> BeamSpec:
        b = self.section("beam")
        period = self.section("grid")["period"]
        try:
            x0 = b["x0"] if b["x0"] is not None else [0.0] * dim
            if b["angle"] is not None:
                if dim != 2:
                    raise DomainError("beam.angle applies on T^2 only")
                gamma = Geodesic.from_angle(x0, b["angle"], period)
            else:
                direction = b["direction"] if b["direction"] is not None else [1.0] + [0.0] * (dim - 1)
                gamma = Geodesic(x0, direction, period)
            M0 = None
            if b["M0_re"] is not None or b["M0_im"] is not None:
                re = np.asarray(b["M0_re"] if b["M0_re"] is not None else np.zeros((dim, dim)), dtype=float)
                im = np.asarray(b["M0_im"] if b["M0_im"] is not None else np.eye(dim), dtype=float)
                M0 = re + 1j * im
            b0 = None
            if b["b0_init"] is not None:
                value = b["b0_init"]
                b0 = complex(value[0], value[1]) if isinstance(value, list) else complex(value)
            return BeamSpec(gamma, float(b["k"]), M0, b0, b["t0"])
        except (DomainError, TypeError, ValueError) as e:
            raise ConfigError("beam", str(e)) from e

    def initial_state(self, grid: TorusGrid, W: Optional[DampingProfile] = None) -> WaveState:
        init = self.section("initial")
        try:
            if init["kind"] == "random":
                return random_band_limited(grid, self.seed, init["band"], init["energy"])
            if init["kind"] == "mode":
                vector = init["wave_vector"] if init["wave_vector"] is not None else [1] * grid.dim
                return single_mode(grid, vector, init["u_amp"], init["v_amp"])
            spec = self.build_beam(grid.dim)
            u, v = quasi_solution(spec, W, grid, spec.t0)
            return WaveState(u, v, spec.t0)
        except DomainError as e:
            raise ConfigError("initial", str(e)) from e


# Artifacts

def write_json(path: str, payload: Dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2, default=_json_default)
        handle.write("\n")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


PLOT_TEMPLATE = '''"""Plot {csv} (generated by the experiment runner)."""
import matplotlib.pyplot as plt
import numpy as np

data = np.genfromtxt("{csv}", delimiter=",", names=True)
fig, ax = plt.subplots(figsize=(6, 4))
for column in {ys!r}:
    ax.plot(data["{x}"], data[column], label=column)
ax.set_xlabel("{x}")
ax.set_xscale("{xscale}")
ax.set_yscale("{yscale}")
ax.legend()
fig.tight_layout()
fig.savefig("{stem}.png", dpi=150)
'''


def write_plot_stub(out_dir: str, csv_name: str, x: str, ys: List[str], logx: bool = False, logy: bool = False) -> str:
    stem = os.path.splitext(csv_name)[0]
    name = f"plot_{stem}.py"
    text = PLOT_TEMPLATE.format(
        csv=csv_name, x=x, ys=list(ys), stem=stem, xscale="log" if logx else "linear", yscale="log" if logy else "linear"
    )
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as handle:
        handle.write(text)
    return name


class Artifacts:
    """Files written into one output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.names: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        if name not in self.names:
            self.names.append(name)
        return os.path.join(self.out_dir, name)

    def plot(self, csv_name: str, x: str, ys: List[str], logx: bool = False, logy: bool = False) -> None:
        self.names.append(write_plot_stub(self.out_dir, csv_name, x, ys, logx, logy))


# Runners

def _simulate(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Tuple[Dict, EnergyTrace]:
    grid = cfg.build_grid()
    W = cfg.build_damping()
    state = cfg.initial_state(grid, W)
    run = cfg.section("run")
    checkpoints = list(run["checkpoints"])
    if run["window_T0"]:
        checkpoints += [state.t + t for t in window_checkpoints(run["t_end"] - state.t, run["window_T0"])]
    final, trace = evolve(state, W, run["t_end"], cfg.build_solver(), checkpoints=checkpoints)
    if run["sigma_channel"]:
        trace = trace.with_sigma(sigma_curve(W, trace.times, cfg.build_sampling(workers), grid.dim))
    trace.to_csv(art.path("trace.csv"))
    art.plot("trace.csv", "t", ["energy"], logy=True)
    field_to_csv(final.u, art.path("final_u.csv"))
    field_to_csv(final.v, art.path("final_v.csv"))
    E0 = float(trace.energy[0])
    report = {
        "E0": E0,
        "E_end": float(trace.energy[-1]),
        "energy_ratio": float(trace.energy[-1] / E0) if E0 > 0 else None,
        "identity_defect": energy_identity_check(trace),
        "nonincreasing": bool(np.all(np.diff(trace.energy) <= 1e-10 * max(E0, 1e-300))),
        "samples": len(trace),
    }
    if run["window_T0"]:
        b = measure_window_fractions(trace, run["window_T0"])
        book = decay_bookkeeping(b, run["window_T0"], trace)
        book.to_csv(art.path("bookkeeping.csv"))
        report["bookkeeping"] = book.to_dict()
    return report, trace


def run_simulate(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    return _simulate(cfg, art, workers)[0]


def run_sigma(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    W = cfg.build_damping()
    sampling = cfg.build_sampling(workers)
    dim = cfg.section("grid")["dim"]
    times = cfg.section("functional")["times"] or np.linspace(0.0, cfg.section("run")["t_end"], 21).tolist()
    curve = sigma_curve(W, times, sampling, dim)
    np.savetxt(art.path("sigma.csv"), np.column_stack([times, curve]), delimiter=",", header="t,sigma", comments="", fmt=CSV_FORMAT)
    art.plot("sigma.csv", "t", ["sigma"])
    final = sigma(W, float(times[-1]), sampling, dim)
    return {"sigma": final.to_dict(), "curve_end": float(curve[-1])}


def run_tgcc(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    W = cfg.build_damping()
    sampling = cfg.build_sampling(workers)
    dim = cfg.section("grid")["dim"]
    functional = cfg.section("functional")
    T0 = functional["T0"]
    report = check_tgcc(W, T0, sampling, dim)
    T_values = functional["T_values"] or [T0 * 2 ** m for m in range(functional["levels"])]
    curve = L_curve(W, T_values, sampling, dim)
    np.savetxt(art.path("L_curve.csv"), np.array(curve), delimiter=",", header="T,L", comments="", fmt=CSV_FORMAT)
    art.plot("L_curve.csv", "T", ["L"], logx=True)
    T_max = max(T_values)
    t_end = cfg.section("run")["t_end"]
    return {
        "tgcc": report.to_dict(),
        "L_infinity": L_infinity(W, sampling, T_max, dim, functional["levels"]),
        "L_infinity_T_max": T_max,
        "sigma_at_t_end": sigma(W, t_end, sampling, dim).value,
        "t_end": t_end,
    }


def run_beam(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    grid = cfg.build_grid()
    W = cfg.build_damping()
    spec = cfg.build_beam(grid.dim)
    b = cfg.section("beam")
    if b["study"] == "residual":
        study = residual_study(spec, W, [float(k) for k in b["ks"]], b["t"], workers)
        study.to_csv(art.path("residual.csv"))
        art.plot("residual.csv", "k", ["value"], logx=True, logy=True)
        return {"study": study.to_dict(), "passes": study.passes(-0.4)}
    if b["study"] == "energy":
        times = np.linspace(spec.t0, spec.t0 + b["t_end"], b["n_times"]).tolist()
        study = energy_study(spec, W, [float(k) for k in b["ks"]], times, workers)
        study.to_csv(art.path("energy_defect.csv"))
        art.plot("energy_defect.csv", "k", ["value"], logx=True, logy=True)
        return {"study": study.to_dict()}
    if not grid.resolves(spec.k):
        grid = grid_for(spec.k, grid.dim, grid.period)
    comparison = beam_vs_exact(spec, W, grid, spec.t0 + b["t_end"], cfg.build_solver())
    comparison.to_csv(art.path("beam_vs_exact.csv"))
    art.plot("beam_vs_exact.csv", "t", ["E_exact", "G_squared"])
    return {"comparison": comparison.to_dict(), "grid_points": grid.points_per_axis}


def run_observe(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    o = cfg.section("observe")
    mode = o["mode"]
    if mode == "short_time":
        deltas = o["deltas"] or np.geomspace(0.01, 0.1, 20).tolist()
        table = short_time_sweep(o["A"], o["B"], o["lam"], deltas)
        table.to_csv(art.path("short_time.csv"))
        art.plot("short_time.csv", "delta", ["ratio"], logx=True, logy=True)
        return table.to_dict()
    grid = cfg.build_grid()
    W = cfg.build_damping()
    weight = W if o["weight"] == "damping" else cfg.build_damping(o["weight"])
    solver = cfg.build_solver()
    state = cfg.initial_state(grid, W)
    if mode == "ratio":
        window = ObservationWindow(o["t0"], o["T"], weight)
        return {"C_obs": observability_ratio(state, window, solver), "t0": o["t0"], "T": o["T"]}
    if mode == "curve":
        t0_values = o["t0_values"] or np.linspace(0.0, 10.0, 11).tolist()
        values = observability_curve(state, weight, o["T"], t0_values, solver)
        np.savetxt(art.path("C_obs.csv"), np.column_stack([t0_values, values]), delimiter=",",
                   header="t0,C_obs", comments="", fmt=CSV_FORMAT)
        art.plot("C_obs.csv", "t0", ["C_obs"])
        return {"max_C_obs": max(values), "T": o["T"]}
    if mode == "sandwich":
        return sandwich_check(state, W, o["T"], solver).to_dict()
    t_end = cfg.section("run")["t_end"]
    checkpoints = [state.t + t for t in window_checkpoints(t_end - state.t, o["T0"])]
    _, trace = evolve(state, W, t_end, solver, checkpoints=checkpoints)
    book = decay_bookkeeping(measure_window_fractions(trace, o["T0"]), o["T0"], trace)
    book.to_csv(art.path("bookkeeping.csv"))
    art.plot("bookkeeping.csv", "t", ["bound", "energy"], logy=True)
    return book.to_dict()


def run_fit(cfg: ExperimentConfig, art: Artifacts, workers: int = 1) -> Dict:
    f = cfg.section("fit")
    if f["trace"]:
        trace = EnergyTrace.from_csv(f["trace"])
        report = {"trace": f["trace"]}
    else:
        if "exp_sigma" in f["models"] and not cfg.section("run")["sigma_channel"]:
            cfg = cfg.with_value("run.sigma_channel", True)
        report, trace = _simulate(cfg, art, workers)
    window = tuple(f["window"]) if f["window"] else None
    fits = [fit(trace, model, window) for model in f["models"]]
    fits_to_csv(fits, art.path("fits.csv"))
    report["fits"] = [r.to_dict() for r in fits]
    report["summaries"] = [r.summary() for r in fits]
    report["best_model"] = min(fits, key=lambda r: r.residual).model
    for r in fits:
        if r.model == "exp_sigma":
            report["sigma_bound"] = sigma_exponent_bound_check(r).to_dict()
    return report


RUNNERS: Dict[str, Callable[[ExperimentConfig, Artifacts, int], Dict]] = {
    "simulate": run_simulate,
    "sigma": run_sigma,
    "tgcc": run_tgcc,
    "beam": run_beam,
    "observe": run_observe,
    "fit": run_fit,
}


@dataclass
class RunResult:
    status: str
    exit_code: int
    output_dir: str
    report: Dict
    artifacts: List[str]
    wall_time: float


def write_manifest(out_dir: str, cfg_echo: Dict, kind: str, seed: int, wall_time: float, artifacts: List[str], status: str) -> None:
    write_json(
        os.path.join(out_dir, "manifest.json"),
        {
            "kind": kind,
            "seed": seed,
            "config": cfg_echo,
            "code_version": Config.CODE_VERSION,
            "wall_time": wall_time,
            "artifacts": sorted(artifacts),
            "status": status,
        },
    )


def record_outcome(**kwargs) -> None:
    try:
        record_run(**kwargs)
    except Exception as e:  # the ledger never decides the outcome of a run
        logger.warning("could not record run in ledger: %s", e)


def run(cfg: ExperimentConfig, threads: Optional[int] = None, ledger: bool = True) -> RunResult:
    """Execute one experiment and write report.json, manifest.json and its CSVs."""
    if cfg.kind.startswith(REPRODUCE_PREFIX):
        from services.reproduce_service import reproduce

        return reproduce(cfg.kind[len(REPRODUCE_PREFIX):], cfg.output_dir, cfg.seed, threads, ledger)
    out_dir = cfg.resolve_output_dir()
    art = Artifacts(out_dir)
    start = time.perf_counter()
    logger.info("running %s into %s (seed %s)", cfg.kind, out_dir, cfg.seed)
    try:
        report = RUNNERS[cfg.kind](cfg, art, max(1, threads or Config.LAB_THREADS))
    except LabError as e:
        wall = time.perf_counter() - start
        write_manifest(out_dir, cfg.to_dict(), cfg.kind, cfg.seed, wall, art.names, "failed")
        if ledger:
            record_outcome(kind=cfg.kind, output_dir=out_dir, status="failed", exit_code=e.exit_code, seed=cfg.seed,
                    wall_time=wall, message=str(e), config=cfg.to_dict(), name=cfg.name)
        raise
    wall = time.perf_counter() - start
    write_json(art.path("report.json"), report)
    write_manifest(out_dir, cfg.to_dict(), cfg.kind, cfg.seed, wall, art.names, "ok")
    if ledger:
        record_outcome(kind=cfg.kind, output_dir=out_dir, seed=cfg.seed, wall_time=wall, config=cfg.to_dict(), name=cfg.name)
    logger.info("%s finished in %.2fs", cfg.kind, wall)
    return RunResult("ok", 0, out_dir, report, list(art.names), wall)


# Sweeps

def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def point_label(index: int, assignment: Dict[str, Any]) -> str:
    parts = [f"{path.split('.')[-1]}={_format_value(value)}" for path, value in assignment.items()]
    return "_".join([f"point_{index:03d}", *parts])


def sweep_points(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    parameters = cfg.section("sweep")["parameters"]
    if not parameters:
        raise ConfigError("sweep.parameters", "sweep grid is empty")
    paths = sorted(parameters)
    for path in paths:
        if not isinstance(parameters[path], list) or not parameters[path]:
            raise ConfigError(f"sweep.parameters.{path}", "expected a nonempty list of values")
    return [dict(zip(paths, combo)) for combo in itertools.product(*(parameters[p] for p in paths))]


def _run_point(raw: Dict) -> Dict:
    """Worker entry: run one sweep point from its raw config; never raises."""
    label = raw.pop("_label")
    params = raw.pop("_params")
    try:
        for path, value in params.items():
            assign_dotted(raw, path, value)
        result = run(ExperimentConfig.from_dict(raw), threads=1, ledger=False)
        return {"label": label, "params": params, "status": "ok", "message": "",
                "output_dir": result.output_dir, "report": result.report}
    except LabError as e:
        message = str(e)
    except Exception as e:
        logger.exception("sweep point %s crashed", label)
        message = f"{type(e).__name__}: {e}"
    return {"label": label, "params": params, "status": "failed", "message": message,
            "output_dir": raw.get("output_dir"), "report": {}}


def _numeric_metrics(report: Dict, prefix: str = "") -> Dict[str, float]:
    out = {}
    for key, value in sorted(report.items()):
        name = f"{prefix}{key}"
        if isinstance(value, bool):
            out[name] = float(value)
        elif isinstance(value, (int, float)) and value is not None:
            out[name] = float(value)
        elif isinstance(value, dict) and not prefix:
            out.update(_numeric_metrics(value, f"{key}."))
    return out


@dataclass
class SweepResult:
    output_dir: str
    points: List[Dict]
    slopes: Dict[str, float]

    @property
    def failures(self) -> int:
        return sum(1 for p in self.points if p["status"] != "ok")


def sweep(cfg: ExperimentConfig, threads: Optional[int] = None, ledger: bool = True) -> SweepResult:
    """One run per grid point (deterministic names), then summary.csv and summary.json."""
    assignments = sweep_points(cfg)
    out_dir = cfg.resolve_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    start = time.perf_counter()
    jobs = []
    for i, assignment in enumerate(assignments):
        raw = copy.deepcopy(cfg.raw)
        raw.pop("sweep", None)
        label = point_label(i, assignment)
        raw["output_dir"] = os.path.join(out_dir, label)
        raw["_label"], raw["_params"] = label, assignment
        jobs.append(raw)
    workers = max(1, threads or Config.LAB_THREADS)
    logger.info("sweep of %d points on %d workers", len(jobs), workers)
    if workers == 1 or len(jobs) == 1:
        results = [_run_point(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))

    metrics = [_numeric_metrics(r["report"]) for r in results]
    metric_names = sorted(set().union(*metrics)) if metrics else []
    paths = sorted(assignments[0])
    header = ["index", *paths, "ok", *metric_names]
    rows = []
    for i, (r, m) in enumerate(zip(results, metrics)):
        row = [str(i), *[_format_value(r["params"][p]) for p in paths], "1" if r["status"] == "ok" else "0"]
        row += [_format_value(m[name]) if name in m else "nan" for name in metric_names]
        rows.append(row)
    np.savetxt(os.path.join(out_dir, "summary.csv"), np.array(rows, dtype=object), delimiter=",",
               header=",".join(header), comments="", fmt="%s")

    slopes = {}
    if len(paths) == 1:
        xs = np.array([r["params"][paths[0]] for r in results], dtype=object)
        if all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in xs):
            for name in metric_names:
                ys = [m.get(name, math.nan) for m in metrics]
                if len(ys) > 1 and all(np.isfinite(y) and y > 0 for y in ys):
                    slopes[name] = float(np.polyfit(np.log(xs.astype(float)), np.log(ys), 1)[0])
    write_json(os.path.join(out_dir, "summary.json"), {
        "points": [{k: r[k] for k in ("label", "params", "status", "message")} for r in results],
        "loglog_slopes": slopes,
    })
    wall = time.perf_counter() - start
    result = SweepResult(out_dir, results, slopes)
    write_manifest(out_dir, cfg.to_dict(), f"sweep:{cfg.kind}", cfg.seed, wall, ["summary.csv", "summary.json"],
                   "ok" if not result.failures else "partial")
    if ledger:
        record_outcome(kind=f"sweep:{cfg.kind}", output_dir=out_dir, status="ok" if not result.failures else "partial",
                seed=cfg.seed, wall_time=wall, config=cfg.to_dict(), name=cfg.name, points=results)
    return result

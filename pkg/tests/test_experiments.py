import json
import os

import pytest
from click.testing import CliRunner

from app import create_cli
from errors import ConfigError
from models import recent_runs
from services.experiment_service import ExperimentConfig, point_label, run, sweep

SIMULATE = {
    "kind": "simulate",
    "seed": 7,
    "grid": {"dim": 1, "points": 32},
    "damping": {"family": "constant", "params": {"a": 0.1}},
    "solver": {"dt": 0.01, "trace_stride": 10},
    "initial": {"band": 8},
    "run": {"t_end": 1.0},
}


@pytest.fixture
def cli():
    return create_cli()


def invoke(cli, *args):
    return CliRunner().invoke(cli, list(args))


def test_simulate_writes_artifacts(cli, write_config, tmp_path):
    out = tmp_path / "sim"
    result = invoke(cli, "simulate", "--config", write_config(SIMULATE), "--out", str(out))
    assert result.exit_code == 0, result.output
    for name in ("trace.csv", "final_u.csv", "final_v.csv", "report.json", "manifest.json", "plot_trace.py"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["status"] == "ok"
    assert "code_version" in manifest
    report = json.loads((out / "report.json").read_text())
    assert report["nonincreasing"] is True


def test_same_seed_reproduces_csv_bytes(write_config, tmp_path):
    path = write_config(SIMULATE)
    first = run(ExperimentConfig.from_yaml(path).with_overrides(str(tmp_path / "a")), ledger=False)
    second = run(ExperimentConfig.from_yaml(path).with_overrides(str(tmp_path / "b")), ledger=False)
    for name in ("trace.csv", "final_u.csv", "final_v.csv"):
        with open(os.path.join(first.output_dir, name), "rb") as a, open(os.path.join(second.output_dir, name), "rb") as b:
            assert a.read() == b.read()


def test_seed_flag_overrides_file(write_config, tmp_path):
    cfg = ExperimentConfig.from_yaml(write_config(SIMULATE)).with_overrides(seed=11)
    assert cfg.seed == 11


def test_unknown_key_exits_with_config_error(cli, write_config):
    payload = dict(SIMULATE, solver={"dtt": 0.01})
    result = invoke(cli, "simulate", "--config", write_config(payload))
    assert result.exit_code == 1
    assert "solver.dtt" in result.output


def test_kind_mismatch_is_rejected(cli, write_config):
    result = invoke(cli, "sigma", "--config", write_config(SIMULATE))
    assert result.exit_code == 1
    assert "kind" in result.output


def test_missing_config_file(cli, tmp_path):
    result = invoke(cli, "simulate", "--config", str(tmp_path / "nope.yaml"))
    assert result.exit_code == 1


def test_unstable_step_exits_with_numerical_error(cli, write_config, tmp_path):
    payload = dict(SIMULATE, solver={"dt": 0.5})
    result = invoke(cli, "simulate", "--config", write_config(payload), "--out", str(tmp_path / "bad"))
    assert result.exit_code == 2
    manifest = json.loads((tmp_path / "bad" / "manifest.json").read_text())
    assert manifest["status"] == "failed"


@pytest.mark.parametrize(
    "payload, field",
    [
        ({"kind": "simulate", "grid": {"points": "many"}}, "grid.points"),
        ({"kind": "simulate", "colour": 1}, "colour"),
        ({"kind": "wiggle"}, "kind"),
        ({"kind": "observe", "observe": {"mode": "stare"}}, "observe.mode"),
        ({"kind": "fit", "fit": {"models": ["exp"]}}, "fit.models"),
        ({"kind": "simulate", "damping": {"family": "constant", "params": {"a": -1}}}, "damping.params"),
    ],
)
def test_config_validation_names_field(payload, field):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(payload)
    assert info.value.field == field


def test_observe_weight_accepts_profile():
    cfg = ExperimentConfig.from_dict(
        {"kind": "observe", "observe": {"weight": {"family": "constant", "params": {"a": 0.5}}}}
    )
    assert cfg.build_damping(cfg.section("observe")["weight"]).sup_norm == 0.5


def test_with_value_sets_nested_path():
    cfg = ExperimentConfig.from_dict(SIMULATE).with_value("damping.params.a", 0.3)
    assert cfg.build_damping().sup_norm == 0.3


def test_point_label_is_deterministic():
    assert point_label(3, {"observe.lam": 2.0, "seed": 4}) == "point_003_lam=2_seed=4"


def test_sweep_short_time(cli, write_config, tmp_path):
    payload = {
        "kind": "observe",
        "observe": {"mode": "short_time"},
        "sweep": {"parameters": {"observe.lam": [1.0, 2.0, 4.0]}},
    }
    out = tmp_path / "sweep"
    result = invoke(cli, "sweep", "--config", write_config(payload), "--out", str(out), "--threads", "1")
    assert result.exit_code == 0, result.output
    assert "3/3 points ok" in result.output
    lines = (out / "summary.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("index,observe.lam,ok")
    for label in ("point_000_lam=1", "point_001_lam=2", "point_002_lam=4"):
        assert (out / label / "report.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["loglog_slopes"]["lambda"] == pytest.approx(1.0)


def test_sweep_records_failures_and_continues(write_config, tmp_path):
    payload = dict(SIMULATE, sweep={"parameters": {"solver.dt": [0.01, 0.5]}})
    cfg = ExperimentConfig.from_yaml(write_config(payload)).with_overrides(str(tmp_path / "sw"))
    result = sweep(cfg, threads=1)
    assert [p["status"] for p in result.points] == ["ok", "failed"]
    assert result.failures == 1
    assert "stability" in result.points[1]["message"]
    runs = recent_runs()
    assert runs[0]["kind"] == "sweep:simulate"
    assert runs[0]["status"] == "partial"


def test_sweep_requires_grid(cli, write_config):
    result = invoke(cli, "sweep", "--config", write_config(SIMULATE))
    assert result.exit_code == 1
    assert "sweep.parameters" in result.output


def test_ledger_lists_runs(cli, write_config, tmp_path):
    invoke(cli, "simulate", "--config", write_config(SIMULATE), "--out", str(tmp_path / "sim"))
    result = invoke(cli, "runs", "--json")
    assert result.exit_code == 0
    rows = json.loads(result.output)
    assert rows[0]["kind"] == "simulate"
    assert rows[0]["status"] == "ok"


def test_tgcc_strip_fails(cli, write_config, tmp_path):
    payload = {
        "kind": "tgcc",
        "grid": {"dim": 2, "points": 16},
        "damping": {"family": "space_bump",
                    "params": {"w0": 1.0, "center": [3.141592653589793, 0.0], "radius": 1.5, "axes": [0]}},
        "sampling": {"n_points": 4, "n_directions": 4, "refine": False},
        "functional": {"T0": 1.0, "levels": 2},
        "run": {"t_end": 2.0},
    }
    out = tmp_path / "tgcc"
    result = invoke(cli, "tgcc", "--config", write_config(payload), "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["tgcc"]["satisfied"] is False
    assert report["sigma_at_t_end"] == 0.0


def test_tgcc_reports_L_infinity_of_constant(cli, write_config, tmp_path):
    payload = {
        "kind": "tgcc",
        "grid": {"dim": 1, "points": 16},
        "damping": {"family": "constant", "params": {"a": 0.7}},
        "sampling": {"n_points": 4, "refine": False},
        "functional": {"T0": 1.0, "levels": 2},
        "run": {"t_end": 2.0},
    }
    out = tmp_path / "tgcc_constant"
    result = invoke(cli, "tgcc", "--config", write_config(payload), "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["L_infinity"] == pytest.approx(0.7, rel=1e-12)
    assert report["L_infinity_T_max"] == 2.0
    assert report["tgcc"]["satisfied"] is True


def test_fit_pipeline(cli, write_config, tmp_path):
    payload = dict(SIMULATE, kind="fit", run={"t_end": 5.0}, fit={"models": ["exp_sigma", "power"]},
                   sampling={"n_points": 4, "refine": False})
    out = tmp_path / "fit"
    result = invoke(cli, "fit", "--config", write_config(payload), "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert "sigma_bound" in report
    assert report["best_model"] in ("exp_sigma", "power")
    assert (out / "fits.csv").exists()


def test_observe_ratio_command(cli, write_config, tmp_path):
    payload = {
        "kind": "observe",
        "grid": {"dim": 1, "points": 32},
        "damping": {"family": "constant", "params": {"a": 0.5}},
        "initial": {"kind": "mode", "wave_vector": [2]},
        "observe": {"mode": "ratio", "T": 6.283185307179586},
    }
    out = tmp_path / "obs"
    result = invoke(cli, "observe", "--config", write_config(payload), "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["C_obs"] == pytest.approx(1 / (0.5 * 6.283185307179586), rel=1e-6)


def test_beam_residual_command(cli, write_config, tmp_path):
    payload = {
        "kind": "beam",
        "grid": {"dim": 1, "points": 64},
        "damping": {"family": "constant", "params": {"a": 0.2}},
        "beam": {"study": "residual", "ks": [32, 64, 128]},
    }
    out = tmp_path / "beam"
    result = invoke(cli, "beam", "--config", write_config(payload), "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["passes"] is True
    assert (out / "residual.csv").read_text().splitlines()[0] == "k,value"


def test_list_experiments(cli):
    result = invoke(cli, "list-experiments")
    assert result.exit_code == 0
    assert "poly-beta-05" in result.output
    assert "short-time" in result.output


def test_reproduce_unknown_name(cli):
    result = invoke(cli, "reproduce", "no-such-thing")
    assert result.exit_code == 1
    assert "list-experiments" in result.output


def test_reproduce_short_time(cli, tmp_path):
    out = tmp_path / "short"
    result = invoke(cli, "reproduce", "short-time", "--out", str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert (out / "short_time_sine.csv").exists()


def test_sigma_run_is_independent_of_threads(write_config, tmp_path):
    payload = {
        "kind": "sigma",
        "grid": {"dim": 2, "points": 16},
        "damping": {"family": "poly_product",
                    "params": {"base": {"family": "cosine", "params": {"a0": 1.0, "a1": 0.5, "wave_vector": [1, 1]}},
                               "beta": 0.5}},
        "sampling": {"n_points": 4, "n_directions": 4, "refine": False},
        "functional": {"times": [0.0, 1.0, 2.0, 4.0]},
    }
    cfg = ExperimentConfig.from_yaml(write_config(payload))
    serial = run(cfg.with_overrides(str(tmp_path / "serial")), threads=1, ledger=False)
    threaded = run(cfg.with_overrides(str(tmp_path / "threaded")), threads=3, ledger=False)
    assert threaded.report == serial.report

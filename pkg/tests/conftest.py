import pytest

from config import Config


@pytest.fixture(autouse=True)
def lab_dirs(tmp_path, monkeypatch):
    """Send results and the run ledger into a per-test temporary directory."""
    results = tmp_path / "results"
    monkeypatch.setattr(Config, "RESULTS_DIR", str(results))
    monkeypatch.setattr(Config, "DATABASE_URL", "sqlite:///" + str(results / "runs.db"))
    monkeypatch.setattr(Config, "LAB_THREADS", 1)
    return results


@pytest.fixture
def write_config(tmp_path):
    """Write a YAML experiment file and return its path."""
    import yaml

    def _write(payload, name="experiment.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(payload))
        return str(path)

    return _write

"""Tests for running experiments and writing their artifacts."""

import json

import pytest

from specdet import __version__
from specdet.config import config_from_dict, dump_config
from specdet.runner import ExperimentRunner


@pytest.fixture
def gkdet_config():
    return config_from_dict({
        "experiment": "gkdet",
        "perturbation": {"terms": [{"kind": "cos", "mode": [1], "amplitude": 0.3}]},
        "cutoff": 8,
        "seed": 11,
        "params": {"p": 2, "z": 0.5},
    })


def test_gkdet_run_writes_artifacts(tmp_path, gkdet_config):
    result = ExperimentRunner(gkdet_config, output_dir=tmp_path, use_cache=False).run()
    assert result.passed
    names = {check.name for check in result.outcome.checks}
    assert {"gk_rp_vs_product", "gk_trace_series_vs_product", "det2_identity"} <= names

    csv_path = tmp_path / "gkdet.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "# experiment=gkdet"
    assert lines[1].startswith("# config_hash=")
    assert lines[2] == "# seed=11"
    assert lines[5].startswith("route,value_re")

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] is True
    assert summary["versions"]["specdet"] == __version__
    assert summary["config"]["params"] == {"p": 2, "z": 0.5}
    assert summary["cache"] is None
    assert summary["config_hash"] == lines[1].split("=", 1)[1]

    verdicts = (tmp_path / "checks.csv").read_text().splitlines()
    assert verdicts[5] == "check,passed,relative_error,tolerance"
    rows = {row.split(",")[0]: row.split(",")[1:] for row in verdicts[6:]}
    assert rows["det2_identity"][0] == "True"
    assert rows["det2_identity"][2] == repr(1e-12)
    assert set(rows) == names


def test_rerun_reproduces_tables(tmp_path, gkdet_config):
    ExperimentRunner(gkdet_config, output_dir=tmp_path / "a", use_cache=False).run()
    ExperimentRunner(gkdet_config, output_dir=tmp_path / "b", use_cache=False).run()
    assert (tmp_path / "a" / "gkdet.csv").read_bytes() == (tmp_path / "b" / "gkdet.csv").read_bytes()


def test_runner_from_summary_config(tmp_path, gkdet_config):
    """The config echoed in a summary reproduces the run."""
    first = ExperimentRunner(gkdet_config, output_dir=tmp_path / "first", use_cache=False).run()
    echoed = config_from_dict(first.summary["config"])
    dump_config(echoed, tmp_path / "echo.yaml")
    again = ExperimentRunner.from_file(tmp_path / "echo.yaml", output_dir=tmp_path / "again", use_cache=False)
    assert again.config_hash == first.summary["config_hash"]
    again.run()
    assert (tmp_path / "first" / "gkdet.csv").read_bytes() == (tmp_path / "again" / "gkdet.csv").read_bytes()


def test_zeta_run_uses_cache(tmp_path):
    config = config_from_dict({
        "experiment": "zeta",
        "perturbation": {"terms": [{"kind": "cos", "mode": [1], "amplitude": 1.0}]},
        "cutoff": 256,
    })
    runner = ExperimentRunner(config, output_dir=tmp_path / "out", cache_dir=tmp_path / "cache")
    result = runner.run()
    assert result.passed, [c.to_dict() for c in result.outcome.checks]
    assert result.summary["cache"]["misses"] >= 1
    second = ExperimentRunner(config, output_dir=tmp_path / "out2", cache_dir=tmp_path / "cache").run()
    assert second.summary["cache"]["hits"] >= 1


def test_failed_tolerance_is_reported(tmp_path):
    config = config_from_dict({
        "experiment": "zeta",
        "geometry": {"mass": 0.5},
        "cutoff": 64,
        "tolerances": {"closed_form": 0.0},
    })
    result = ExperimentRunner(config, output_dir=tmp_path, use_cache=False).run()
    assert not result.passed
    assert json.loads((tmp_path / "summary.json").read_text())["passed"] is False
    verdicts = (tmp_path / "checks.csv").read_text().splitlines()
    closed = next(row for row in verdicts if row.startswith("closed_form,"))
    assert closed.startswith("closed_form,False,")
    assert closed.endswith(",0.0")

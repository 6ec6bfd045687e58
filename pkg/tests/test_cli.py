import csv

import pytest
import yaml

from conftest import short_scenario

from adaptive_planner.cli import EXIT_BAD_INPUT, EXIT_FAILURE, EXIT_OK, SUMMARY_COLUMNS, main
from adaptive_planner.config import PlannerConfig, dump_document, load_config


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text(dump_document(short_scenario()))
    return path


def test_write_config_round_trips(tmp_path):
    out = tmp_path / "planner.yaml"
    assert main(["write-config", "--out", str(out)]) == EXIT_OK
    assert load_config(out) == PlannerConfig()


def test_write_config_to_stdout(capsys):
    assert main(["write-config"]) == EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out)["version"] == 1


def test_run_writes_episode_outputs(tmp_path, scenario_file):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == EXIT_OK
    header = (out / "flight_log.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,y,z")
    metrics = yaml.safe_load((out / "metrics.yaml").read_text())
    assert metrics["outcome"] == "goal"
    assert metrics["scenario"] == "short"
    timing = yaml.safe_load((out / "timing.yaml").read_text())
    assert timing["local"]["count"] == metrics["local_replans"]


def test_failed_episode_exits_one(tmp_path):
    path = tmp_path / "late.yaml"
    path.write_text(dump_document(short_scenario(goal_x=20.0, timeout=0.5)))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "out")]) == EXIT_FAILURE
    assert yaml.safe_load((tmp_path / "out" / "metrics.yaml").read_text())["outcome"] == "timeout"


def test_bad_weight_count_exits_two(tmp_path, scenario_file, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("version: 1\nhigh_mpcc:\n  weights: [1, 2, 3, 4]\n")
    code = main(["run", "--config", str(config), "--scenario", str(scenario_file), "--out", str(tmp_path / "o")])
    assert code == EXIT_BAD_INPUT
    assert f"{config}:3:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_scenario_exits_two(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == EXIT_BAD_INPUT


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as excinfo:
        main(["check-gradients", "--trials", "0"])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "--out", "x"])
    assert excinfo.value.code == 2


def test_check_gradients_passes():
    assert main(["check-gradients", "--trials", "1"]) == EXIT_OK


def test_check_gradients_catches_sign_flip(capsys):
    assert main(["check-gradients", "--trials", "1", "--inject-sign-flip"]) == EXIT_FAILURE
    assert "MISMATCH" in capsys.readouterr().out


def test_sweep_with_failing_cells(tmp_path, scenario_file):
    sweep = tmp_path / "sweep.yaml"
    sweep.write_text("parameter: scenario.planner.sim.timeout\nvalues: [0.5, -1.0]\nseeds: [0]\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--scenario", str(scenario_file), "--sweep", str(sweep), "--out", str(out)]) == EXIT_OK
    with open(out / "summary.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == list(SUMMARY_COLUMNS)
    assert [row["outcome"] for row in rows] == ["timeout", "error"]
    medians = yaml.safe_load((out / "medians.yaml").read_text())
    assert medians["0.5"] == {
        "runs": 1, "successes": 0, "median_flight_time": None, "median_path_length": None, "min_clearance": None,
    }
    assert (out / "cells" / "0.5_seed0.yaml").exists()


@pytest.mark.slow
def test_ablation_outputs(tmp_path):
    out = tmp_path / "gate"
    assert main(["run", "--scenario", "scenarios/gate.yaml", "--out", str(out), "--ablate-easa"]) == EXIT_OK
    for suffix in ("_on", "_off"):
        assert (out / f"flight_log{suffix}.csv").exists()
        assert (out / f"metrics{suffix}.yaml").exists()
    comparison = yaml.safe_load((out / "comparison.yaml").read_text())
    assert comparison["hazard_min_speed"]["on"] < comparison["hazard_min_speed"]["off"]


@pytest.mark.slow
def test_density_sweep(tmp_path):
    out = tmp_path / "density"
    args = ["sweep", "--scenario", "scenarios/forest.yaml", "--sweep", "sweeps/density.yaml",
            "--out", str(out), "--jobs", "4"]
    assert main(args) == EXIT_OK
    with open(out / "summary.csv") as f:
        assert len(list(csv.DictReader(f))) == 80
    medians = yaml.safe_load((out / "medians.yaml").read_text())
    assert len(medians) == 4
    times = [cell["median_flight_time"] for cell in medians.values()]
    assert all(later >= earlier for earlier, later in zip(times, times[1:]))

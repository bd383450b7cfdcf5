import csv
import json

import pytest

from errorcalc.cli import format_table, list_experiments, main
from errorcalc.experiments import REGISTRY, REPORT_COLUMNS


def run(tmp_path, *args):
    return main(["run", "--out", str(tmp_path), "--samples", "20000", *args])


def test_list_text(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for key in REGISTRY:
        assert key in out


def test_list_json(capsys):
    assert main(["list", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["id"] for r in rows] == list(REGISTRY)
    assert all(r["anchor"] and r["description"] for r in rows)


def test_empty_registry_gives_empty_table():
    assert list_experiments({}) == []
    assert format_table([]) == ""


def test_run_writes_reports(tmp_path, capsys):
    assert run(tmp_path, "--experiment", "binary-bias", "--seed", "3") == 0
    summary = json.loads((tmp_path / "binary-bias.json").read_text())
    assert summary["pass"] is True and summary["seed"] == 3 and summary["samples"] == 20000
    with open(tmp_path / "binary-bias.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert any(r["test_name"] and r["pass"] == "true" for r in rows)
    assert "PASS" in capsys.readouterr().out


def test_run_failing_criterion_exits_one(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "binary-bias", "tolerances": {"z": 0.0}}))
    assert run(tmp_path, "--config", str(cfg)) == 1
    assert json.loads((tmp_path / "binary-bias.json").read_text())["pass"] is False


def test_unknown_experiment_lists_ids(tmp_path, capsys):
    assert run(tmp_path, "--experiment", "nope") == 2
    err = capsys.readouterr().err
    assert "nope" in err and all(k in err for k in REGISTRY)


@pytest.mark.parametrize(
    "args",
    [
        ["--experiment", "binary-bias", "--samples", "10"],
        ["--experiment", "binary-bias", "--seed", "-1"],
        ["--experiment", "binary-bias", "--n", "a,b"],
        ["--experiment", "binary-bias", "--workers", "0"],
        ["--experiment", "binary-bias", "--law", "uniform"],
        ["--experiment", "graduation-bias", "--law", "{bad json"],
    ],
)
def test_invalid_arguments_exit_two(tmp_path, args):
    assert run(tmp_path, *args) == 2


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "binary-bias", "colour": "red"}))
    assert run(tmp_path, "--config", str(cfg)) == 2


def test_same_seed_same_csv(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--experiment", "locality", "--samples", "20000", "--seed", "9", "--out", str(a)]) in (0, 1)
    assert main(["run", "--experiment", "locality", "--samples", "20000", "--seed", "9", "--out", str(b),
                 "--workers", "3"]) in (0, 1)
    assert (a / "locality.csv").read_bytes() == (b / "locality.csv").read_bytes()


def test_law_override(tmp_path):
    assert run(tmp_path, "--experiment", "graduation-afp", "--law", "uniform", "--n", "32") in (0, 1)
    summary = json.loads((tmp_path / "graduation-afp.json").read_text())
    assert summary["levels"] == [32]


def test_json_output(tmp_path, capsys):
    assert run(tmp_path, "--experiment", "polya-variance", "--json", "--samples", "50000") in (0, 1)
    doc = json.loads(capsys.readouterr().out)
    assert doc["experiment"] == "polya-variance" and doc["criteria"]

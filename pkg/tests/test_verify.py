# tests/test_verify.py
from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from cimo.cli import cli
from cimo.core.rng import RngStream
from cimo.verify.cli import suite_options
from cimo.verify.suites import RATE_SLOPE_TOL, SUITES, estimation_rate, run_suite


@pytest.mark.parametrize(
    "name, instances",
    [
        ("reduction", 20),
        ("moments", 10),
        ("jensen", 300),
        ("estimation", 10),
        ("end2end", 6),
        ("greedy", 10),
    ],
)
def test_exact_suites_pass_on_small_runs(name, instances):
    report = run_suite(name, instances, seed=1)
    assert report.passed, report.violations[:3]
    assert report.checks > 0


def test_statistical_suites_pass_on_small_runs():
    assert run_suite("oracle", 10, seed=2, R=4000).passed
    assert run_suite("ips", 1, seed=2).passed


def test_runs_are_deterministic():
    a = run_suite("reduction", 5, seed=9)
    b = run_suite("reduction", 5, seed=9, threads=3)
    assert a.to_dict() == b.to_dict()


def test_injected_convexity_is_caught():
    report = run_suite("jensen", 200, seed=0, inject="concavity")
    assert not report.passed
    assert {v["check"] for v in report.violations} & {"jensen_gap", "interp_concavity"}


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suite("nope", 1)


def test_cli_failure_writes_reproducers_and_replays(tmp_path):
    runner = CliRunner()
    out = tmp_path / "verify"
    result = runner.invoke(cli, ["verify", "--suite", "jensen", "-M", "200", "--inject", "concavity",
                                 "--out", str(out)])
    assert result.exit_code == 1
    repros = sorted((out / "repro").glob("jensen-*.json"))
    assert repros
    doc = json.loads(repros[0].read_text())
    assert doc["inject"] == "concavity"
    assert "stream_path" in doc
    summary = json.loads((out / "verify.json").read_text())
    assert summary["suites"][0]["suite"] == "jensen"
    assert (out / "manifest.json").exists()

    replay = runner.invoke(cli, ["verify", "replay", str(repros[0])])
    assert replay.exit_code == 1


def test_cli_pass_and_list(tmp_path):
    runner = CliRunner()
    result = runner.invoke(cli, ["verify", "--suite", "reduction", "-M", "5", "--out", str(tmp_path / "v")])
    assert result.exit_code == 0, result.output
    listing = runner.invoke(cli, ["verify", "list"])
    assert listing.exit_code == 0
    for name in SUITES:
        assert name in listing.output


def test_curve_error_falls_like_inverse_sample_size():
    slope, mse = estimation_rate(RngStream(0), reps=50)
    assert abs(slope + 1.0) <= RATE_SLOPE_TOL
    assert mse[0] > mse[-1]
    report = run_suite("estimation", 10, seed=1)
    assert abs(report.notes["mse_slope"] + 1.0) <= RATE_SLOPE_TOL


def test_full_flag_selects_acceptance_sizes():
    assert suite_options("oracle", None, True) == {"R": 100_000}
    assert suite_options("oracle", 500, True) == {"R": 500}
    assert suite_options("oracle", 500, False) == {"R": 500}
    assert suite_options("ips", None, False) == {}
    assert suite_options("ips", 5, True) == {"datasets": 1000}
    listing = CliRunner().invoke(cli, ["verify", "list"])
    assert "R=100000" in listing.output
    assert "datasets=1000" in listing.output


def test_replay_rejects_other_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"hello": 1}))
    assert CliRunner().invoke(cli, ["verify", "replay", str(path)]).exit_code == 2


@pytest.mark.slow
@pytest.mark.parametrize("name", list(SUITES))
def test_acceptance_size_runs(name):
    assert run_suite(name, seed=0).passed


@pytest.mark.slow
def test_cli_full_ips_run(tmp_path):
    out = tmp_path / "full"
    result = CliRunner().invoke(cli, ["verify", "--suite", "ips", "-M", "1", "--full", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert json.loads((out / "verify.json").read_text())["suites"][0]["suite"] == "ips"

"""CLI behavior: exit-code contract, JSON round-trip, config validation."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from eigenframe import cli
from eigenframe import corpus as corpus_mod


def corpus_path(name: str) -> str:
    return str(Path(corpus_mod.corpus_dir()) / name)


def test_analyze_exit_zero(capsys):
    rc = cli.main(["analyze", corpus_path("ex6.2.json")])
    assert rc == cli.EXIT_PASS
    out = capsys.readouterr().out
    assert "unconstrained" in out


def test_analyze_json_round_trip(capsys):
    rc = cli.main(["--output", "json", "analyze", corpus_path("ex6.3.json")])
    assert rc == cli.EXIT_PASS
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["beta_case"] == "rank2-unclassified"
    assert json.loads(json.dumps(parsed)) == parsed


def test_verify_pass_and_fail(tmp_path, capsys):
    cand = tmp_path / "beta.json"
    cand.write_text(json.dumps({
        "kind": "beta", "exprs": ["-K*u2", "K*u2", "K"], "params": {"K": 1.0},
    }))
    rc = cli.main(["verify", corpus_path("ex6.11.json"), str(cand)])
    assert rc == cli.EXIT_PASS
    capsys.readouterr()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "kind": "beta", "exprs": ["-K*u2", "K*u2", "u1"], "params": {"K": 1.0},
    }))
    rc = cli.main(["verify", corpus_path("ex6.11.json"), str(bad)])
    assert rc == cli.EXIT_MATH_FAILURE


def test_schema_error_exit_two(tmp_path, capsys):
    frame = tmp_path / "broken.json"
    frame.write_text(json.dumps({"id": "x", "n": 3}))
    rc = cli.main(["analyze", str(frame)])
    assert rc == cli.EXIT_INPUT_ERROR


def test_undeclared_identifier_exit_two(tmp_path, capsys):
    doc = json.loads(Path(corpus_path("ex6.5.json")).read_text())
    doc["frame"][0][0] = "nope*2"
    frame = tmp_path / "frame.json"
    frame.write_text(json.dumps(doc))
    rc = cli.main(["analyze", str(frame)])
    assert rc == cli.EXIT_INPUT_ERROR


def test_singular_frame_exit_three(tmp_path, capsys):
    doc = json.loads(Path(corpus_path("ex6.5.json")).read_text())
    doc["frame"] = [["u1", "u2", "0"], ["u1", "u2", "0"], ["0", "0", "1"]]
    frame = tmp_path / "frame.json"
    frame.write_text(json.dumps(doc))
    rc = cli.main(["analyze", str(frame)])
    assert rc == cli.EXIT_DEGENERATE


def test_samples_floor_enforced(capsys):
    rc = cli.main(["--samples", "4", "analyze", corpus_path("ex6.2.json")])
    assert rc == cli.EXIT_INPUT_ERROR
    rc = cli.main(["--samples", "8", "analyze", corpus_path("ex6.2.json")])
    assert rc == cli.EXIT_PASS


def test_reconstruct_writes_grids(tmp_path, capsys):
    cand = tmp_path / "beta.json"
    cand.write_text(json.dumps({
        "kind": "beta", "exprs": ["-K*u2", "K*u2", "K"], "params": {"K": 1.0},
        "closed_eta": "K*(u1^2/2+(1-u2)*ln(u3))",
    }))
    rc = cli.main(["--grid", "5,5,5", "reconstruct",
                   corpus_path("ex6.11.json"), str(cand)])
    assert rc == cli.EXIT_PASS
    csv_file = tmp_path / "beta_eta.csv"
    json_file = tmp_path / "beta_eta.json"
    assert csv_file.exists() and json_file.exists()
    header = csv_file.read_text().splitlines()[0]
    assert header.split(",")[:3] == ["u1", "u2", "u3"]
    payload = json.loads(json_file.read_text())
    assert "eta" in payload["values"]


def test_curl_violation_exit_one(tmp_path, capsys):
    cand = tmp_path / "beta.json"
    cand.write_text(json.dumps({"kind": "beta", "exprs": ["1", "1", "1"], "params": {}}))
    rc = cli.main(["--grid", "4,4,4", "--tol", "10", "reconstruct",
                   corpus_path("ex6.10.json"), str(cand)])
    assert rc == cli.EXIT_MATH_FAILURE


def test_bad_grid_rejected(capsys):
    rc = cli.main(["--grid", "1,zz", "analyze", corpus_path("ex6.2.json")])
    assert rc == cli.EXIT_INPUT_ERROR


def test_selftest_tighter_than_roundoff_reports_failures(capsys):
    rc = cli.main(["--output", "json", "--samples", "12", "--tol", "1e-16", "selftest"])
    out = json.loads(capsys.readouterr().out)
    assert rc == cli.EXIT_MATH_FAILURE
    failing = [e for e in out["examples"] if e["failed_checks"]]
    assert failing, "tolerance below roundoff must surface distinct failures"


def test_selftest_default_passes(capsys):
    rc = cli.main(["--output", "json", "--samples", "20", "selftest"])
    out = json.loads(capsys.readouterr().out)
    assert rc == cli.EXIT_PASS and out["passed"]

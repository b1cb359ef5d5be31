from __future__ import annotations

import json
import subprocess
import sys

import pytest

from rollout_cards import synth
from rollout_cards.bundle import Carrier, write_bundle
from rollout_cards.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, run


@pytest.fixture
def bundle(tmp_path, mixed_card):
    path = tmp_path / "card"
    write_bundle(mixed_card, Carrier("directory", path))
    return path


def test_validate_ok_and_json(bundle, capsys):
    assert run(["validate", str(bundle)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("pass, 0 violations")
    assert run(["validate", str(bundle), "--format", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["verdict"] == "pass"


def test_validate_defect_exits_2(tmp_path, full_card, capsys):
    d = synth.inject_defect(full_card, "EDGE_CYCLE", out_dir=tmp_path)
    assert run(["validate", str(d.carrier.path)]) == EXIT_FAIL
    assert "EDGE_CYCLE" in capsys.readouterr().out


def test_validate_previous(tmp_path, full_card, capsys):
    d = synth.inject_defect(full_card, "APPEND_ONLY_VIOLATED", out_dir=tmp_path)
    assert run(["validate", str(d.carrier.path), "--previous", str(d.previous.path)]) == EXIT_FAIL
    assert "APPEND_ONLY_VIOLATED" in capsys.readouterr().out


def test_missing_path_is_io_failure(tmp_path, capsys):
    assert run(["inspect", str(tmp_path / "nowhere")]) == EXIT_IO
    assert "io failure" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run([]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["score", "x", "--rule", "not-a-rule"]) == EXIT_USAGE
    assert run(["compare", "--fixture", "swebench_gap", "--rule", "mean@1"]) == EXIT_USAGE
    assert run(["compare", "--system", "broken"]) == EXIT_USAGE
    capsys.readouterr()


def test_format_env(bundle, capsys, monkeypatch):
    monkeypatch.setenv("RCARD_FORMAT", "json")
    assert run(["inspect", str(bundle)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["manifest"]["run_id"] == "synth-5"
    monkeypatch.setenv("RCARD_FORMAT", "yaml")
    assert run(["inspect", str(bundle)]) == EXIT_USAGE


def test_inspect_text(bundle, capsys):
    assert run(["inspect", str(bundle)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "run_id: synth-5" in out and "rules: (none registered)" in out


def test_pack_unpack_round_trip(tmp_path, bundle, capsys):
    z, back = tmp_path / "c.zip", tmp_path / "back"
    assert run(["pack", str(bundle), str(z)]) == EXIT_OK
    assert run(["unpack", str(z), str(back)]) == EXIT_OK
    for f in bundle.rglob("*"):
        if f.is_file():
            assert (back / f.relative_to(bundle)).read_bytes() == f.read_bytes()
    assert run(["validate", str(z)]) == EXIT_OK
    capsys.readouterr()


def test_project_writes_table_and_drops(tmp_path, bundle, capsys):
    out = tmp_path / "proj"
    assert run(["project", str(bundle), "--view", "final_score", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "view final_score" in text and "declared losses:" in text
    assert len((out / "table.jsonl").read_text().splitlines()) == 20
    assert json.loads((out / "drops.json").read_text())["name"] == "view:final_score"
    assert run(["project", str(bundle), "--view", "nope"]) == EXIT_USAGE


def test_score_summary_line(bundle, capsys):
    assert run(["score", str(bundle), "--rule", "mean@1:missing=exclude"]) == EXIT_OK
    line = capsys.readouterr().out
    assert "failed=" in line and "errored=" in line and "skipped=" in line
    assert run(["score", str(bundle), "--rule", "mean@1", "--format", "json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["accounting"]["attempted"] == 20


def test_score_empty_denominator_exits_2(tmp_path, capsys):
    card = synth.gen_card(synth.FixtureProfile(runs=3, failure_mix={"missing": 1.0}))
    write_bundle(card, Carrier("directory", tmp_path / "m"))
    assert run(["score", str(tmp_path / "m"), "--rule", "mean@1:missing=exclude"]) == EXIT_FAIL
    assert "EmptyDenominator" in capsys.readouterr().err


def test_compare_fixture_text_and_json(capsys):
    assert run(["compare", "--fixture", "swebench_gap"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "convention share: 2.3pp" in out
    assert "headline_%" in out and "excluded" in out
    assert run(["compare", "--fixture", "swebench_gap", "--format", "json"]) == EXIT_OK
    first = capsys.readouterr().out
    assert run(["compare", "--fixture", "swebench_gap", "--format", "json"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert json.loads(first)["decomposition"]["missing_b"] == 50


def test_compare_systems_from_paths(tmp_path, capsys):
    assert run(["gen", "--fixture", "tot_prune_pairs", "--out", str(tmp_path)]) == EXIT_OK
    root = tmp_path / "tot_prune_pairs"
    args = ["compare", "--system", f"a={root / 'no_prune'}", "--system", f"b={root / 'prune'}"]
    assert run(args + ["--rule", "mean@1", "--rule", "mean@1:missing=exclude"]) == EXIT_OK
    assert "batch a+b" in capsys.readouterr().out


def test_gen_profile(tmp_path, capsys):
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"seed": 9, "runs": 2, "steps_per_run": [1, 2]}))
    assert run(["gen", "--profile", str(prof), "--out", str(tmp_path / "z.zip"), "--zip"]) == EXIT_OK
    assert "run_id=synth-9" in capsys.readouterr().out
    assert run(["validate", str(tmp_path / "z.zip")]) == EXIT_OK
    assert run(["gen", "--profile", "-", "--runs", "-2", "--out", str(tmp_path / "bad")]) == EXIT_USAGE
    prof.write_text("[1, 2]")
    assert run(["gen", "--profile", str(prof), "--out", str(tmp_path / "bad")]) == EXIT_USAGE
    prof.write_text(json.dumps({"colour": "red"}))
    assert run(["gen", "--profile", str(prof), "--out", str(tmp_path / "bad")]) == EXIT_USAGE
    capsys.readouterr()


def test_schema(capsys):
    assert run(["schema"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert "events" in json.dumps(doc)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rollout_cards", "schema"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("{")

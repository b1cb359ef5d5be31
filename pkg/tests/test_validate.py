from __future__ import annotations

import hashlib
import json

import pytest

from rollout_cards import synth
from rollout_cards.bundle import Carrier, write_bundle
from rollout_cards.errors import RunIdMismatch
from rollout_cards.model import CardBuilder
from rollout_cards.validate import VIOLATION_CAP, check_extends, validate_bundle, validate_path


def edit_stream(root, stream, edit):
    """Apply ``edit`` to the list of lines of one stream, then fix the manifest hash."""
    path = root / f"{stream}.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines()
    lines = edit(lines)
    data = "".join(line + "\n" for line in lines).encode("utf-8")
    path.write_bytes(data)
    manifest = json.loads((root / "manifest.json").read_text())
    manifest["stream_hashes"][stream] = hashlib.sha256(data).hexdigest()
    (root / "manifest.json").write_text(json.dumps(manifest))


@pytest.fixture
def bundle(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    return tmp_path / "b"


def test_clean_bundle_passes(bundle):
    report = validate_bundle(bundle)
    assert report.ok
    assert report.render_text().startswith("pass, 0 violations, 0 warnings")
    assert report.stats["rows"]["events"] > 0
    doc = json.loads(report.to_text_document())
    assert doc["verdict"] == "pass" and doc["violations"] == []


@pytest.mark.parametrize("defect", synth.DEFECT_CLASSES)
def test_each_defect_yields_exactly_its_code(tmp_path, full_card, defect):
    injected = synth.inject_defect(full_card, defect, seed=3, out_dir=tmp_path)
    report = validate_bundle(injected.carrier, previous=injected.previous)
    assert report.codes() == [defect]
    assert report.verdict == "fail"


def test_edge_cycle_names_the_closing_row(tmp_path):
    b = CardBuilder("cyc")
    for n in "abc":
        b.add_node(n)
    b.add_edge("a", "b")
    b.add_edge("b", "c")
    card = b.build()
    write_bundle(card, tmp_path / "b")

    def close_cycle(lines):
        row = json.loads(lines[-1])
        row["source_node_id"], row["target_node_id"] = "c", "a"
        return lines + [json.dumps(row, separators=(",", ":"))]

    edit_stream(tmp_path / "b", "edges", close_cycle)
    (v,) = validate_bundle(tmp_path / "b").violations
    assert v.code == "EDGE_CYCLE"
    assert v.row_locator == (3,)
    assert "c" in v.message and "a" in v.message


def test_edges_are_checked_in_created_at_order(tmp_path):
    b = CardBuilder("order")
    for n in "ab":
        b.add_node(n)
    b.add_edge("a", "b")
    write_bundle(b.build(), tmp_path / "b")

    def add_older_reverse(lines):
        row = json.loads(lines[0])
        row["source_node_id"], row["target_node_id"] = "b", "a"
        row["created_at"] = row["updated_at"] = "2000-01-01T00:00:00.000Z"
        return lines + [json.dumps(row, separators=(",", ":"))]

    edit_stream(tmp_path / "b", "edges", add_older_reverse)
    (v,) = validate_bundle(tmp_path / "b").violations
    # the older reverse edge is inserted first, so the original edge closes the cycle
    assert v.code == "EDGE_CYCLE" and v.row_locator == (1,)


def test_strict_and_tolerant_payload_shapes(bundle):
    def break_reward(lines):
        out = []
        done = False
        for line in lines:
            row = json.loads(line)
            if not done and row["event_type"] == "reward":
                row["payload"] = {"val": 1}
                done = True
            out.append(json.dumps(row, separators=(",", ":"), ensure_ascii=False))
        return out

    edit_stream(bundle, "events", break_reward)
    strict = validate_bundle(bundle)
    tolerant = validate_bundle(bundle, "tolerant")
    assert strict.codes() == ["PAYLOAD_SHAPE_MISMATCH"]
    assert tolerant.ok
    assert [w.code for w in tolerant.warnings] == ["PAYLOAD_SHAPE_MISMATCH"]


def test_unknown_event_type_is_only_a_warning(tmp_path):
    b = CardBuilder("u")
    b.add_node("n")
    b.add_event("n", "vendor_trace", {"anything": [1, 2]})
    write_bundle(b.build(), tmp_path / "b")
    report = validate_bundle(tmp_path / "b")
    assert report.ok
    assert [w.code for w in report.warnings] == ["UNKNOWN_DISCRIMINATOR"]


def test_violations_are_collected_not_fail_fast(bundle):
    edit_stream(bundle, "nodes", lambda ls: ls + ["not json", "{}"])
    edit_stream(bundle, "events", lambda ls: ls + [ls[0]])
    codes = validate_bundle(bundle).codes()
    assert codes.count("SCHEMA_VIOLATION") == 2
    assert "DUPLICATE_ID" in codes


def test_violation_cap_per_stream(tmp_path):
    b = CardBuilder("cap")
    write_bundle(b.build(), tmp_path / "b")
    edit_stream(tmp_path / "b", "nodes", lambda ls: ["{}"] * (VIOLATION_CAP + 50))
    report = validate_bundle(tmp_path / "b")
    assert len(report.violations) == VIOLATION_CAP
    assert report.stats["truncated"] == {"nodes": 50}
    assert "50 further violations" in report.render_text()


def test_hash_mismatch_still_reports_rows(bundle):
    path = bundle / "nodes.jsonl"
    path.write_bytes(path.read_bytes() + b"garbage\n")
    assert validate_bundle(bundle).codes() == ["HASH_MISMATCH", "SCHEMA_VIOLATION"]


def test_release_scope_consistency(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    manifest["release_scope"] = {"kind": "redacted_trace", "omitted": []}
    (tmp_path / "b" / "manifest.json").write_text(json.dumps(manifest))
    assert validate_bundle(tmp_path / "b").codes() == ["RELEASE_SCOPE_INCONSISTENT"]


def test_unsupported_major_version(bundle):
    manifest = json.loads((bundle / "manifest.json").read_text())
    manifest["format_version"] = "3.1"
    (bundle / "manifest.json").write_text(json.dumps(manifest))
    assert validate_bundle(bundle).codes() == ["UNSUPPORTED_VERSION"]


def test_unexpected_files_warn(bundle):
    (bundle / "notes.txt").write_text("hi")
    report = validate_bundle(bundle)
    assert report.ok
    assert [w.code for w in report.warnings] == ["UNEXPECTED_FILE"]


def test_zip_carrier(tmp_path, full_card):
    write_bundle(full_card, Carrier("zip", tmp_path / "b.zip"))
    assert validate_bundle(tmp_path / "b.zip").ok


def test_extension_by_appending_is_allowed(tmp_path):
    b = CardBuilder("grow")
    b.add_node("n", status="running")
    b.add_event("n", "message", {"text": "a"})
    write_bundle(b.build(), tmp_path / "v1")
    b.add_event("n", "message", {"text": "b"})
    b.set_status("n", "succeeded", old="running")
    write_bundle(b.build(), tmp_path / "v2")
    assert check_extends(tmp_path / "v1", tmp_path / "v2").ok
    assert validate_bundle(tmp_path / "v2", previous=tmp_path / "v1").ok
    assert not check_extends(tmp_path / "v2", tmp_path / "v1").ok


def test_extension_across_runs_is_an_error(tmp_path):
    write_bundle(CardBuilder("one").build(), tmp_path / "a")
    write_bundle(CardBuilder("two").build(), tmp_path / "b")
    with pytest.raises(RunIdMismatch):
        check_extends(tmp_path / "a", tmp_path / "b")


def test_empty_bundle_warns(tmp_path):
    write_bundle(CardBuilder("empty").build(), tmp_path / "b")
    report = validate_bundle(tmp_path / "b")
    assert report.ok and [w.code for w in report.warnings] == ["EMPTY_BUNDLE"]


def test_validate_path_on_missing_manifest(tmp_path):
    (tmp_path / "b").mkdir()
    assert validate_path(tmp_path / "b").codes() == ["LAYOUT"]

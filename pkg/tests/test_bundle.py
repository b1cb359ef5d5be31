from __future__ import annotations

import json
import zipfile

import pytest

from rollout_cards import synth
from rollout_cards.bundle import Carrier, convert, read_bundle, write_bundle
from rollout_cards.errors import (
    HashMismatch,
    InvariantViolation,
    IoFailure,
    MissingStream,
    OversizedInlinePayload,
    UnsupportedMajorVersion,
)
from rollout_cards.model import STREAM_NAMES, CardBuilder


def _files(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_directory_layout(tmp_path, full_card):
    manifest = write_bundle(full_card, tmp_path / "b")
    names = set(_files(tmp_path / "b"))
    assert {"manifest.json"} | {f"{s}.jsonl" for s in STREAM_NAMES} <= names
    assert all(n.startswith("blobs/") for n in names - {"manifest.json"} - {f"{s}.jsonl" for s in STREAM_NAMES})
    assert len(manifest.blob_index) == len([n for n in names if n.startswith("blobs/")]) > 0
    doc = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert doc["format_version"] == "1.0"


def test_read_back_equals_original(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    assert read_bundle(tmp_path / "b") == full_card
    assert read_bundle(tmp_path / "b", mode="lazy") == full_card


def test_zip_is_deterministic(tmp_path, full_card):
    write_bundle(full_card, Carrier("zip", tmp_path / "a.zip"))
    write_bundle(read_bundle(tmp_path / "a.zip"), Carrier("zip", tmp_path / "b.zip"))
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    with zipfile.ZipFile(tmp_path / "a.zip") as zf:
        names = zf.namelist()
        assert names[-1] == "manifest.json"
        assert all(info.date_time == (1980, 1, 1, 0, 0, 0) for info in zf.infolist())


def test_pack_unpack_is_byte_preserving(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "dir")
    convert(tmp_path / "dir", Carrier("zip", tmp_path / "c.zip"))
    convert(tmp_path / "c.zip", Carrier("directory", tmp_path / "back"))
    assert _files(tmp_path / "dir") == _files(tmp_path / "back")


def test_hash_mismatch_detected_on_read(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    path = tmp_path / "b" / "events.jsonl"
    path.write_bytes(path.read_bytes().replace(b"{", b"{ ", 1))
    with pytest.raises(HashMismatch):
        read_bundle(tmp_path / "b")
    assert read_bundle(tmp_path / "b", verify=False) is not None


def test_listed_stream_missing(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    (tmp_path / "b" / "edges.jsonl").unlink()
    with pytest.raises(MissingStream):
        read_bundle(tmp_path / "b")


def test_unsupported_major_version(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    path = tmp_path / "b" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["format_version"] = "2.0"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedMajorVersion):
        read_bundle(tmp_path / "b")


def test_newer_minor_version_reads(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    path = tmp_path / "b" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["format_version"] = "1.7"
    path.write_text(json.dumps(doc))
    assert read_bundle(tmp_path / "b").manifest.format_version.minor == 7


def test_missing_bundle_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        read_bundle(tmp_path / "nope")


def _big_card(size: int):
    b = CardBuilder("big")
    b.add_node("root")
    b.add_event("root", "model_output", {"text": "x" * size, "note": "small"}, worker="agent")
    return b.build()


def test_oversized_payload_rejected_without_offload(tmp_path):
    with pytest.raises(OversizedInlinePayload):
        write_bundle(_big_card(70_000), tmp_path / "b")


def test_offload_moves_large_fields_to_blobs(tmp_path):
    card = _big_card(70_000)
    write_bundle(card, tmp_path / "b", offload=True)
    assert len(card.blobs) == 0  # the caller's store is untouched
    back = read_bundle(tmp_path / "b")
    (event,) = back.rows("events")
    ref = event.payload["text"]["$blob"]
    assert event.payload["note"] == "small"
    assert back.blobs.get(ref["digest"]) == b"x" * 70_000


def test_invariants_checked_before_writing(tmp_path):
    b = CardBuilder("bad")
    b.add_node("a")
    b.add_node("b")
    b.add_edge("a", "b")
    b.add_edge("b", "a")
    with pytest.raises(InvariantViolation):
        write_bundle(b.build(), tmp_path / "b")
    assert not (tmp_path / "b" / "manifest.json").exists()


def test_rewrite_removes_stale_blobs(tmp_path, full_card):
    write_bundle(full_card, tmp_path / "b")
    empty = CardBuilder("empty").build()
    write_bundle(empty, tmp_path / "b")
    assert not any((tmp_path / "b" / "blobs").iterdir())


def test_named_fixture_round_trip(tmp_path):
    card = synth.gen_named("taubench_graders").only_card("gpt-4o")
    write_bundle(card, tmp_path / "a")
    write_bundle(read_bundle(tmp_path / "a"), tmp_path / "b")
    assert _files(tmp_path / "a") == _files(tmp_path / "b")

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from rollout_cards.errors import InvariantViolation, MalformedRecord, MissingRequiredColumn, TypeMismatch, UnknownStream
from rollout_cards.model import (
    CardBuilder,
    EdgeRow,
    EventRow,
    Manifest,
    NodeRow,
    ReleaseScope,
    field_universe,
    format_timestamp,
    parse_row,
    parse_timestamp,
    serialize_row,
    timestamp_le,
)

EVENT = (
    '{"event_id":"e1","task_execution_id":"t1","worker_binding_key":"w","sequence":3,'
    '"event_type":"message","payload":{"text":"hi"}}'
)


def test_event_line_round_trips():
    row = parse_row("events", EVENT)
    assert isinstance(row, EventRow)
    assert row.sequence == 3
    assert serialize_row(row) == (
        '{"event_id":"e1","task_execution_id":"t1","worker_binding_key":"w","sequence":3,'
        '"event_type":"message","turn_id":null,"payload":{"text":"hi"},"started_at":null,'
        '"completed_at":null,"policy_version":null}'
    )


def test_unknown_columns_kept_in_order():
    line = EVENT[:-1] + ',"zz_custom":1,"aa_custom":{"k":[1.50]}}'
    row = parse_row("events", line)
    assert list(row.extras) == ["zz_custom", "aa_custom"]
    assert row.get("aa_custom") == {"k": [1.5]}
    again = serialize_row(row)
    assert again.endswith(',"zz_custom":1,"aa_custom":{"k":[1.50]}}')
    assert parse_row("events", again) == row


@pytest.mark.parametrize(
    "line, error",
    [
        ("not json", MalformedRecord),
        ("[1,2]", MalformedRecord),
        ('{"event_id":"e1"}', MissingRequiredColumn),
        (EVENT.replace('"sequence":3', '"sequence":-1'), TypeMismatch),
        (EVENT.replace('"sequence":3', '"sequence":"3"'), TypeMismatch),
        (EVENT.replace('"sequence":3', '"sequence":true'), TypeMismatch),
    ],
)
def test_bad_lines_are_rejected(line, error):
    with pytest.raises(error):
        parse_row("events", line)


def test_edge_status_is_an_enum():
    line = '{"source_node_id":"a","target_node_id":"b","status":"blocked","created_at":"2025-01-01T00:00:00.000Z","updated_at":"2025-01-01T00:00:00.000Z"}'
    with pytest.raises(TypeMismatch):
        parse_row("edges", line)


def test_unknown_stream():
    with pytest.raises(UnknownStream):
        parse_row("logs", "{}")


def test_event_times_must_be_ordered():
    row = EventRow("e", "t", "w", 0, "message", {}, started_at="2025-01-01T00:00:01.000Z",
                   completed_at="2025-01-01T00:00:00.000Z")
    assert row.invariant_errors()
    with pytest.raises(InvariantViolation):
        serialize_row(row)


def test_timestamps_compare_across_offsets():
    assert timestamp_le("2025-01-01T01:00:00.000+01:00", "2025-01-01T00:00:00.001Z")
    moment = parse_timestamp("2025-03-04T05:06:07.089Z")
    assert format_timestamp(moment) == "2025-03-04T05:06:07.089Z"


@given(st.integers(min_value=0, max_value=2**40), st.text(min_size=1, max_size=12))
def test_node_rows_round_trip(level, name):
    row = NodeRow(name, "inst", "task", "running", level, "2025-01-01T00:00:00.000Z", "2025-01-01T00:00:00.000Z")
    assert parse_row("nodes", serialize_row(row)) == row


def test_manifest_round_trip_keeps_unknown_keys():
    manifest = Manifest("run-1", "2025-01-01T00:00:00.000Z", release_scope=ReleaseScope("redacted_trace", (("events", "pii"),)))
    doc = manifest.to_json()
    doc["future_key"] = {"x": 1}
    again = Manifest.from_json(json.loads(json.dumps(doc)))
    assert again.unknown == {"future_key": {"x": 1}}
    assert again.release_scope == manifest.release_scope
    assert Manifest.from_text(again.to_text()).to_text() == again.to_text()


def test_builder_sequences_and_levels():
    b = CardBuilder("r")
    b.add_node("root", status="running")
    b.add_node("child", parent_id="root")
    e0 = b.add_event("child", "message", {"text": "a"}, worker="agent")
    e1 = b.add_event("child", "message", {"text": "b"}, worker="agent")
    other = b.add_event("root", "reward", {"value": 1.0})
    b.annotate("node", "root", "score", {"value": 1.0})
    b.annotate("node", "root", "score", {"value": 0.5})
    b.set_status("root", "succeeded", old="running")
    card = b.build()
    assert (e0.sequence, e1.sequence, other.sequence) == (0, 1, 0)
    nodes = {n.node_id: n for n in card.rows("nodes")}
    assert nodes["child"].level == 1 and nodes["child"].parent_id == "root"
    assert [a.sequence for a in card.rows("annotations")] == [0, 1]
    assert ("events", "payload") in field_universe(card)


def test_edge_row_defaults():
    row = EdgeRow("a", "b", "pending", "2025-01-01T00:00:00.000Z", "2025-01-01T00:00:00.000Z")
    assert parse_row("edges", serialize_row(row)) == row

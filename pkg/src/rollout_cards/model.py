"""Domain types for a rollout card and the line format of its five streams.

Every stream is newline-delimited JSON. Rows are immutable values; columns
outside the schema are kept in ``extras`` in their original order and
written back after the known columns, so a reader that does not understand
them still round-trips them untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Any, ClassVar, Iterable, Iterator, NamedTuple

from . import jsontext
from .blobs import MemoryBlobStore, is_blob_ref, iter_blob_refs
from .errors import (
    InvariantViolation,
    MalformedRecord,
    MissingRequiredColumn,
    TypeMismatch,
    UnknownStream,
)

STREAM_NAMES = ("events", "nodes", "edges", "annotations", "mutations")
SUPPORTED_MAJOR = 1
CURRENT_MINOR = 0
INLINE_CAP = 64 * 1024

EDGE_STATUSES = ("pending", "satisfied", "invalidated")
TARGET_TYPES = ("node", "event", "run")
NODE_STATUSES = ("pending", "running", "succeeded", "failed", "cancelled")
RELEASE_KINDS = ("full_trace", "redacted_trace", "gated_trace", "derived_view", "metadata_only")
TOMBSTONE_KEY = "$deleted"
ENVIRONMENT_WORKER = "environment"

# ---------------------------------------------------------------------------
# timestamps

_TS_RE = re.compile(
    r"(\d{4})-(\d{2})-(\d{2})[Tt](\d{2}):(\d{2}):(\d{2})(?:\.(\d+))?([Zz]|[+-]\d{2}:\d{2})"
)


def is_timestamp(text: str) -> bool:
    return _TS_RE.fullmatch(text) is not None


def parse_timestamp(text: str) -> datetime:
    m = _TS_RE.fullmatch(text)
    if m is None:
        raise ValueError(f"not an RFC 3339 timestamp: {text!r}")
    year, month, day, hour, minute, second, frac, zone = m.groups()
    micro = int((frac or "0")[:6].ljust(6, "0"))
    if zone in ("Z", "z"):
        tz = timezone.utc
    else:
        sign = 1 if zone[0] == "+" else -1
        tz = timezone(sign * timedelta(hours=int(zone[1:3]), minutes=int(zone[4:6])))
    return datetime(int(year), int(month), int(day), int(hour), int(minute), int(second), micro, tz)


def format_timestamp(moment: datetime) -> str:
    """UTC, millisecond precision, ``Z`` suffix."""
    moment = moment.astimezone(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%S.") + f"{moment.microsecond // 1000:03d}Z"


def timestamp_key(text: str) -> datetime:
    return parse_timestamp(text)


def timestamp_le(a: str, b: str) -> bool:
    # canonical toolkit timestamps sort lexically
    if len(a) == 24 == len(b) and a[-1] == "Z" == b[-1]:
        return a <= b
    return parse_timestamp(a) <= parse_timestamp(b)


# ---------------------------------------------------------------------------
# column tables


class Column(NamedTuple):
    name: str
    kind: str  # str | int | object | json | timestamp | enum
    required: bool = True
    nullable: bool = False
    choices: tuple[str, ...] = ()


_KIND_DESCRIPTION = {
    "str": "a string",
    "int": "a non-negative integer",
    "object": "a JSON object",
    "json": "any JSON value",
    "timestamp": "an RFC 3339 timestamp string",
}


def _describe(col: Column) -> str:
    if col.kind == "enum":
        return "one of {" + ", ".join(col.choices) + "}"
    text = _KIND_DESCRIPTION[col.kind]
    return text + " or null" if col.nullable else text


_PREDICATES = {
    "str": lambda v: isinstance(v, str),
    "int": lambda v: type(v) is int and v >= 0,
    "object": lambda v: isinstance(v, dict),
    "timestamp": lambda v: isinstance(v, str) and _TS_RE.fullmatch(v) is not None,
}


def _predicate(col: Column):
    if col.kind == "enum":
        choices = frozenset(col.choices)
        return lambda v: isinstance(v, str) and v in choices
    return _PREDICATES.get(col.kind, lambda v: True)


def _check(stream: str, col: Column, value: Any) -> None:
    if value is None:
        if col.nullable:
            return
        raise TypeMismatch(stream, col.name, _describe(col))
    if not _predicate(col)(value):
        raise TypeMismatch(stream, col.name, _describe(col))


class _Row:
    __slots__ = ()
    STREAM: ClassVar[str]
    COLUMNS: ClassVar[tuple[Column, ...]]

    def get(self, column: str, default: Any = None) -> Any:
        if column in self.COLUMN_NAMES:  # type: ignore[attr-defined]
            return getattr(self, column)
        return self.extras.get(column, default)  # type: ignore[attr-defined]

    def invariant_errors(self) -> list[str]:
        return []


def _row_type(cls):
    cls.COLUMN_NAMES = frozenset(c.name for c in cls.COLUMNS)
    cls.COLUMN_ORDER = tuple(c.name for c in cls.COLUMNS)
    cls._CHECKS = tuple((c.name, c, _predicate(c)) for c in cls.COLUMNS)
    return cls


@_row_type
@dataclass(frozen=True, slots=True)
class EventRow(_Row):
    event_id: str
    task_execution_id: str
    worker_binding_key: str
    sequence: int
    event_type: str
    payload: dict
    turn_id: str | None = None
    started_at: str | None = None
    completed_at: str | None = None
    policy_version: str | None = None
    extras: dict = field(default_factory=dict, compare=True)

    STREAM: ClassVar[str] = "events"
    COLUMNS: ClassVar[tuple[Column, ...]] = (
        Column("event_id", "str"),
        Column("task_execution_id", "str"),
        Column("worker_binding_key", "str"),
        Column("sequence", "int"),
        Column("event_type", "str"),
        Column("turn_id", "str", required=False, nullable=True),
        Column("payload", "object"),
        Column("started_at", "timestamp", required=False, nullable=True),
        Column("completed_at", "timestamp", required=False, nullable=True),
        Column("policy_version", "str", required=False, nullable=True),
    )

    def invariant_errors(self) -> list[str]:
        if self.started_at and self.completed_at and not timestamp_le(self.started_at, self.completed_at):
            return [f"completed_at {self.completed_at} precedes started_at {self.started_at}"]
        return []


@_row_type
@dataclass(frozen=True, slots=True)
class NodeRow(_Row):
    node_id: str
    instance_key: str
    task_key: str
    status: str
    level: int
    created_at: str
    updated_at: str
    parent_id: str | None = None
    assigned_worker_key: str | None = None
    extras: dict = field(default_factory=dict)

    STREAM: ClassVar[str] = "nodes"
    COLUMNS: ClassVar[tuple[Column, ...]] = (
        Column("node_id", "str"),
        Column("parent_id", "str", required=False, nullable=True),
        Column("instance_key", "str"),
        Column("task_key", "str"),
        Column("status", "str"),
        Column("assigned_worker_key", "str", required=False, nullable=True),
        Column("level", "int"),
        Column("created_at", "timestamp"),
        Column("updated_at", "timestamp"),
    )

    def invariant_errors(self) -> list[str]:
        if self.parent_id == self.node_id:
            return [f"node {self.node_id!r} is its own parent"]
        return []


@_row_type
@dataclass(frozen=True, slots=True)
class EdgeRow(_Row):
    source_node_id: str
    target_node_id: str
    status: str
    created_at: str
    updated_at: str
    extras: dict = field(default_factory=dict)

    STREAM: ClassVar[str] = "edges"
    COLUMNS: ClassVar[tuple[Column, ...]] = (
        Column("source_node_id", "str"),
        Column("target_node_id", "str"),
        Column("status", "enum", choices=EDGE_STATUSES),
        Column("created_at", "timestamp"),
        Column("updated_at", "timestamp"),
    )

    def invariant_errors(self) -> list[str]:
        if self.source_node_id == self.target_node_id:
            return [f"edge is a self-loop on {self.source_node_id!r}"]
        return []


@_row_type
@dataclass(frozen=True, slots=True)
class AnnotationRow(_Row):
    target_type: str
    target_id: str
    namespace: str
    sequence: int
    payload: dict
    created_at: str
    extras: dict = field(default_factory=dict)

    STREAM: ClassVar[str] = "annotations"
    COLUMNS: ClassVar[tuple[Column, ...]] = (
        Column("target_type", "enum", choices=TARGET_TYPES),
        Column("target_id", "str"),
        Column("namespace", "str"),
        Column("sequence", "int"),
        Column("payload", "object"),
        Column("created_at", "timestamp"),
    )

    def invariant_errors(self) -> list[str]:
        if not self.namespace:
            return ["annotation namespace is empty"]
        return []


@_row_type
@dataclass(frozen=True, slots=True)
class MutationRow(_Row):
    sequence: int
    mutation_type: str
    target_type: str
    target_id: str
    actor: str
    new_value: Any
    reason: str
    created_at: str
    old_value: Any = None
    extras: dict = field(default_factory=dict)

    STREAM: ClassVar[str] = "mutations"
    COLUMNS: ClassVar[tuple[Column, ...]] = (
        Column("sequence", "int"),
        Column("mutation_type", "str"),
        Column("target_type", "enum", choices=TARGET_TYPES),
        Column("target_id", "str"),
        Column("actor", "str"),
        Column("old_value", "object", required=False, nullable=True),
        Column("new_value", "object", nullable=True),
        Column("reason", "str"),
        Column("created_at", "timestamp"),
    )

    @property
    def is_tombstone(self) -> bool:
        return isinstance(self.new_value, dict) and self.new_value.get(TOMBSTONE_KEY) is True


ROW_TYPES: dict[str, type] = {
    "events": EventRow,
    "nodes": NodeRow,
    "edges": EdgeRow,
    "annotations": AnnotationRow,
    "mutations": MutationRow,
}

Row = EventRow | NodeRow | EdgeRow | AnnotationRow | MutationRow


def schema_columns(stream: str) -> tuple[str, ...]:
    try:
        return ROW_TYPES[stream].COLUMN_ORDER
    except KeyError:
        raise UnknownStream(stream) from None


def tombstone() -> dict:
    return {TOMBSTONE_KEY: True}


# ---------------------------------------------------------------------------
# line format


def parse_row(stream_kind: str, line: str) -> Row:
    """Parse one stream line into its typed row."""
    cls = ROW_TYPES.get(stream_kind)
    if cls is None:
        raise UnknownStream(stream_kind)
    try:
        obj = jsontext.loads(line)
    except ValueError as exc:
        raise MalformedRecord(stream_kind, str(exc)) from None
    return row_from_mapping(stream_kind, obj)


def row_from_mapping(stream_kind: str, obj: Any) -> Row:
    cls = ROW_TYPES[stream_kind]
    if not isinstance(obj, dict):
        raise MalformedRecord(stream_kind, f"expected a JSON object, got {type(obj).__name__}")
    values = {}
    for name, col, ok in cls._CHECKS:
        if name in obj:
            value = obj[name]
            if value is None:
                if not col.nullable:
                    raise TypeMismatch(stream_kind, name, _describe(col))
            elif not ok(value):
                raise TypeMismatch(stream_kind, name, _describe(col))
            values[name] = value
        elif col.required:
            raise MissingRequiredColumn(stream_kind, name)
    names = cls.COLUMN_NAMES
    if len(obj) > len(values):
        values["extras"] = {k: v for k, v in obj.items() if k not in names}
    return cls(**values)


def serialize_row(row: Row) -> str:
    """Render a row as one JSON line (without the trailing newline)."""
    problems = row.invariant_errors()
    if problems:
        raise InvariantViolation(f"{row.STREAM}: " + "; ".join(problems))
    stream = row.STREAM
    parts = []
    for col in row.COLUMNS:
        value = getattr(row, col.name)
        try:
            _check(stream, col, value)
        except TypeMismatch as exc:
            raise InvariantViolation(str(exc)) from None
        parts.append(jsontext.encode_basestring(col.name) + ":" + jsontext.dumps(value))
    for key, value in row.extras.items():
        parts.append(jsontext.encode_basestring(key) + ":" + jsontext.dumps(value))
    return "{" + ",".join(parts) + "}"


def row_to_mapping(row: Row) -> dict:
    out = {name: getattr(row, name) for name in row.COLUMN_ORDER}
    out.update(row.extras)
    return out


# ---------------------------------------------------------------------------
# manifest


class FormatVersion(NamedTuple):
    major: int
    minor: int

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}"

    @classmethod
    def parse(cls, text: Any) -> "FormatVersion":
        if isinstance(text, (list, tuple)) and len(text) == 2:
            return cls(int(text[0]), int(text[1]))
        major, _, minor = str(text).partition(".")
        return cls(int(major), int(minor or 0))


@dataclass(frozen=True)
class ReleaseScope:
    kind: str = "full_trace"
    omitted: tuple[tuple[str, str], ...] = ()
    license_note: str = ""
    redistribution_limit: str = ""

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "omitted": [{"selector": s, "reason": r} for s, r in self.omitted],
            "license_note": self.license_note,
            "redistribution_limit": self.redistribution_limit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReleaseScope":
        kind = obj.get("kind", "full_trace")
        if kind not in RELEASE_KINDS:
            raise ValueError(f"release scope kind {kind!r} not in {RELEASE_KINDS}")
        omitted = tuple((o["selector"], o["reason"]) for o in obj.get("omitted", []))
        return cls(kind, omitted, obj.get("license_note", ""), obj.get("redistribution_limit", ""))

    def is_consistent(self) -> bool:
        if self.kind == "full_trace":
            return True
        return bool(self.omitted or self.license_note or self.redistribution_limit)


_MANIFEST_KEYS = (
    "format_version",
    "run_id",
    "created_at",
    "stream_hashes",
    "blob_index",
    "release_scope",
    "rule_registry",
    "extra",
)


@dataclass(frozen=True)
class Manifest:
    run_id: str
    created_at: str
    format_version: FormatVersion = FormatVersion(SUPPORTED_MAJOR, CURRENT_MINOR)
    stream_hashes: dict = field(default_factory=dict)
    blob_index: tuple[str, ...] = ()
    release_scope: ReleaseScope = ReleaseScope()
    rule_registry: tuple = ()
    extra: dict = field(default_factory=dict)
    unknown: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "format_version": str(self.format_version),
            "run_id": self.run_id,
            "created_at": self.created_at,
            "stream_hashes": {k: self.stream_hashes[k] for k in STREAM_NAMES if k in self.stream_hashes},
            "blob_index": list(self.blob_index),
            "release_scope": self.release_scope.to_json(),
            "rule_registry": list(self.rule_registry),
            "extra": self.extra,
        }
        doc.update(self.unknown)
        return doc

    def to_text(self) -> str:
        return jsontext.dumps_document(self.to_json())

    @classmethod
    def from_json(cls, doc: Any) -> "Manifest":
        if not isinstance(doc, dict):
            raise ValueError("manifest must be a JSON object")
        for key in ("format_version", "run_id", "created_at"):
            if key not in doc:
                raise ValueError(f"manifest lacks {key!r}")
        hashes = doc.get("stream_hashes", {})
        if not isinstance(hashes, dict) or any(k not in STREAM_NAMES for k in hashes):
            raise ValueError("manifest stream_hashes must map stream names to digests")
        return cls(
            run_id=doc["run_id"],
            created_at=doc["created_at"],
            format_version=FormatVersion.parse(doc["format_version"]),
            stream_hashes=dict(hashes),
            blob_index=tuple(doc.get("blob_index", [])),
            release_scope=ReleaseScope.from_json(doc.get("release_scope", {})),
            rule_registry=tuple(doc.get("rule_registry", [])),
            extra=dict(doc.get("extra", {})),
            unknown={k: v for k, v in doc.items() if k not in _MANIFEST_KEYS},
        )

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        return cls.from_json(jsontext.loads(text))


# ---------------------------------------------------------------------------
# the card


class LazyStream:
    """Re-iterable view over a stream whose rows are parsed on demand."""

    def __init__(self, stream: str, opener):
        self.stream = stream
        self._opener = opener

    def __iter__(self) -> Iterator[Row]:
        for line in self._opener():
            yield parse_row(self.stream, line)


@dataclass(eq=False)
class CardBundle:
    manifest: Manifest
    streams: dict = field(default_factory=lambda: {name: [] for name in STREAM_NAMES})
    blobs: Any = field(default_factory=MemoryBlobStore)

    def rows(self, stream: str) -> Iterable[Row]:
        if stream not in ROW_TYPES:
            raise UnknownStream(stream)
        return self.streams.get(stream, ())

    def materialize(self) -> "CardBundle":
        streams = {name: list(self.rows(name)) for name in STREAM_NAMES}
        return replace(self, streams=streams)

    def __eq__(self, other: object) -> bool:
        # stream_hashes and blob_index are derived at write time, so they are not compared
        if not isinstance(other, CardBundle):
            return NotImplemented
        mine = replace(self.manifest, stream_hashes={}, blob_index=())
        theirs = replace(other.manifest, stream_hashes={}, blob_index=())
        if mine != theirs:
            return False
        for name in STREAM_NAMES:
            if list(self.rows(name)) != list(other.rows(name)):
                return False
        if self.blobs.digests() != other.blobs.digests():
            return False
        return all(self.blobs.get(d) == other.blobs.get(d) for d in self.blobs.digests())


def field_universe(card: CardBundle) -> frozenset[tuple[str, str]]:
    """Schema columns of every stream plus extras columns seen anywhere."""
    cached = getattr(card, "_universe", None)
    if cached is not None:
        return cached
    universe = set()
    for stream in STREAM_NAMES:
        universe.update((stream, c) for c in ROW_TYPES[stream].COLUMN_ORDER)
        for row in card.rows(stream):
            if row.extras:
                universe.update((stream, k) for k in row.extras)
    result = frozenset(universe)
    card._universe = result
    return result


# ---------------------------------------------------------------------------
# building cards in memory


class CardBuilder:
    """Accumulates rows with correctly scoped sequence numbers.

    Timestamps come from an internal millisecond clock unless given
    explicitly, which keeps generated cards deterministic.
    """

    def __init__(
        self,
        run_id: str,
        start: str = "2025-01-01T00:00:00.000Z",
        release_scope: ReleaseScope | None = None,
        extra: dict | None = None,
    ):
        self.run_id = run_id
        self._now = parse_timestamp(start)
        self._created_at = format_timestamp(self._now)
        self.release_scope = release_scope or ReleaseScope()
        self.extra = dict(extra or {})
        self.streams: dict[str, list] = {name: [] for name in STREAM_NAMES}
        self.blobs = MemoryBlobStore()
        self._event_seq: dict[str, int] = {}
        self._annotation_seq: dict[tuple[str, str, str], int] = {}
        self._mutation_seq = 0
        self._event_counter = 0
        self._levels: dict[str, int] = {}

    def tick(self, ms: int = 1) -> str:
        self._now += timedelta(milliseconds=ms)
        return format_timestamp(self._now)

    def now(self) -> str:
        return format_timestamp(self._now)

    def add_node(
        self,
        node_id: str,
        *,
        parent_id: str | None = None,
        status: str = "pending",
        instance_key: str | None = None,
        task_key: str = "task",
        worker: str | None = None,
        extras: dict | None = None,
    ) -> NodeRow:
        level = 0 if parent_id is None else self._levels[parent_id] + 1
        self._levels[node_id] = level
        ts = self.tick()
        row = NodeRow(
            node_id=node_id,
            parent_id=parent_id,
            instance_key=instance_key or node_id,
            task_key=task_key,
            status=status,
            assigned_worker_key=worker,
            level=level,
            created_at=ts,
            updated_at=ts,
            extras=dict(extras or {}),
        )
        self.streams["nodes"].append(row)
        return row

    def add_event(
        self,
        task_execution_id: str,
        event_type: str,
        payload: dict,
        *,
        worker: str = ENVIRONMENT_WORKER,
        turn_id: str | None = None,
        duration_ms: int = 1,
        event_id: str | None = None,
        policy_version: str | None = None,
        extras: dict | None = None,
    ) -> EventRow:
        seq = self._event_seq.get(task_execution_id, -1) + 1
        self._event_seq[task_execution_id] = seq
        self._event_counter += 1
        started = self.tick()
        completed = self.tick(duration_ms)
        row = EventRow(
            event_id=event_id or f"{self.run_id}-e{self._event_counter}",
            task_execution_id=task_execution_id,
            worker_binding_key=worker,
            sequence=seq,
            event_type=event_type,
            turn_id=turn_id,
            payload=payload,
            started_at=started,
            completed_at=completed,
            policy_version=policy_version,
            extras=dict(extras or {}),
        )
        self.streams["events"].append(row)
        return row

    def annotate(self, target_type: str, target_id: str, namespace: str, payload: dict) -> AnnotationRow:
        key = (target_type, target_id, namespace)
        seq = self._annotation_seq.get(key, -1) + 1
        self._annotation_seq[key] = seq
        row = AnnotationRow(target_type, target_id, namespace, seq, payload, self.tick())
        self.streams["annotations"].append(row)
        return row

    def mutate(
        self,
        mutation_type: str,
        target_type: str,
        target_id: str,
        new_value: Any,
        *,
        old_value: Any = None,
        actor: str = "runtime",
        reason: str = "",
    ) -> MutationRow:
        row = MutationRow(
            sequence=self._mutation_seq,
            mutation_type=mutation_type,
            target_type=target_type,
            target_id=target_id,
            actor=actor,
            old_value=old_value,
            new_value=new_value,
            reason=reason,
            created_at=self.tick(),
        )
        self._mutation_seq += 1
        self.streams["mutations"].append(row)
        return row

    def set_status(self, node_id: str, status: str, old: str | None = None, reason: str = "") -> MutationRow:
        return self.mutate(
            "node_status",
            "node",
            node_id,
            {"status": status},
            old_value=None if old is None else {"status": old},
            reason=reason,
        )

    def add_edge(self, source: str, target: str, status: str = "pending") -> EdgeRow:
        ts = self.tick()
        row = EdgeRow(source, target, status, ts, ts)
        self.streams["edges"].append(row)
        return row

    def put_blob(self, data: bytes, media_type: str | None = None) -> dict:
        return self.blobs.put(data, media_type).to_json()

    def build(self) -> CardBundle:
        manifest = Manifest(
            run_id=self.run_id,
            created_at=self._created_at,
            release_scope=self.release_scope,
            extra=self.extra,
        )
        return CardBundle(manifest, {k: list(v) for k, v in self.streams.items()}, self.blobs)


def with_rows(card: CardBundle, stream: str, rows: list) -> CardBundle:
    streams = dict(card.streams)
    streams[stream] = rows
    return replace(card, streams=streams)


def blob_refs_in_row(row: Row):
    if isinstance(row, (EventRow, AnnotationRow)):
        yield from iter_blob_refs(row.payload)
    elif isinstance(row, MutationRow):
        yield from iter_blob_refs(row.old_value)
        yield from iter_blob_refs(row.new_value)
    if row.extras:
        yield from iter_blob_refs(row.extras)


__all__ = [
    "AnnotationRow",
    "CardBuilder",
    "CardBundle",
    "Column",
    "EdgeRow",
    "EventRow",
    "FormatVersion",
    "INLINE_CAP",
    "LazyStream",
    "Manifest",
    "MutationRow",
    "NodeRow",
    "ROW_TYPES",
    "ReleaseScope",
    "STREAM_NAMES",
    "field_universe",
    "format_timestamp",
    "is_blob_ref",
    "parse_row",
    "parse_timestamp",
    "serialize_row",
    "tombstone",
]

"""Tracked, declarative access to a card.

Views and reporting rules read cards only through a ``TrackedReader``.
The reader logs which streams, fields and rows were touched and which
filters ran, so ``finish()`` can emit a drops manifest whose complement is
exactly what the analysis did not carry forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .blobs import MemoryBlobStore, iter_blob_refs
from .errors import AlreadyFinished, UnknownColumn, UnknownStream
from .model import (
    ROW_TYPES,
    STREAM_NAMES,
    CardBundle,
    ReleaseScope,
    field_universe,
)

ROW_LIST_LIMIT = 10_000

# columns that identify a row; they are logged whenever a stream is read
KEY_COLUMNS: dict[str, tuple[str, ...]] = {
    "events": ("event_id",),
    "nodes": ("node_id",),
    "edges": ("source_node_id", "target_node_id"),
    "annotations": ("target_type", "target_id", "namespace", "sequence"),
    "mutations": ("sequence",),
}

SEED_LOSSES = (
    "duration_erasure",
    "precedence_erasure",
    "worker_identity_erasure",
    "branch_erasure",
    "tool_channel_erasure",
)


# ---------------------------------------------------------------------------
# declarative filters


class Filter:
    def matches(self, row) -> bool:
        raise NotImplementedError

    def columns(self) -> frozenset[str]:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def __and__(self, other: "Filter") -> "Filter":
        return And((self, other))

    def __or__(self, other: "Filter") -> "Filter":
        return Or((self, other))

    def __invert__(self) -> "Filter":
        return Not(self)


@dataclass(frozen=True)
class Always(Filter):
    def matches(self, row) -> bool:
        return True

    def columns(self) -> frozenset[str]:
        return frozenset()

    def describe(self) -> str:
        return "true"


TRUE = Always()

_OPS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a is not None and a < b,
    "<=": lambda a, b: a is not None and a <= b,
    ">": lambda a, b: a is not None and a > b,
    ">=": lambda a, b: a is not None and a >= b,
    "in": lambda a, b: a in b,
    "not in": lambda a, b: a not in b,
}


@dataclass(frozen=True)
class Compare(Filter):
    column: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparator {self.op!r}; use one of {sorted(_OPS)}")
        if self.op in ("in", "not in"):
            object.__setattr__(self, "value", tuple(self.value))

    def matches(self, row) -> bool:
        try:
            return bool(_OPS[self.op](row.get(self.column), self.value))
        except TypeError:
            return False

    def columns(self) -> frozenset[str]:
        return frozenset((self.column,))

    def describe(self) -> str:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return f"{self.column} {self.op} {value!r}"


@dataclass(frozen=True)
class And(Filter):
    parts: tuple[Filter, ...]

    def matches(self, row) -> bool:
        return all(p.matches(row) for p in self.parts)

    def columns(self) -> frozenset[str]:
        return frozenset().union(*(p.columns() for p in self.parts))

    def describe(self) -> str:
        return "(" + " and ".join(p.describe() for p in self.parts) + ")"


@dataclass(frozen=True)
class Or(Filter):
    parts: tuple[Filter, ...]

    def matches(self, row) -> bool:
        return any(p.matches(row) for p in self.parts)

    def columns(self) -> frozenset[str]:
        return frozenset().union(*(p.columns() for p in self.parts))

    def describe(self) -> str:
        return "(" + " or ".join(p.describe() for p in self.parts) + ")"


@dataclass(frozen=True)
class Not(Filter):
    part: Filter

    def matches(self, row) -> bool:
        return not self.part.matches(row)

    def columns(self) -> frozenset[str]:
        return self.part.columns()

    def describe(self) -> str:
        return f"not {self.part.describe()}"


def where(column: str, op: str, value: Any) -> Compare:
    return Compare(column, op, value)


def eq(column: str, value: Any) -> Compare:
    return Compare(column, "==", value)


def is_in(column: str, values: Iterable) -> Compare:
    return Compare(column, "in", tuple(values))


# ---------------------------------------------------------------------------
# logs and manifests


@dataclass(frozen=True)
class SemanticLossClass:
    name: str
    note: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("a semantic loss class needs a name")

    def to_json(self) -> dict:
        return {"name": self.name, "note": self.note}


@dataclass(frozen=True)
class FilterRecord:
    stream: str
    description: str
    matched: int
    total: int

    def to_json(self) -> dict:
        return {"stream": self.stream, "filter": self.description, "matched": self.matched, "total": self.total}


@dataclass(frozen=True)
class RowAccess:
    count: int
    total: int
    selectors: tuple[str, ...]
    indices: frozenset[int] = field(default_factory=frozenset, repr=False)

    def to_json(self) -> dict:
        doc: dict = {"count": self.count, "total": self.total, "selectors": list(self.selectors)}
        if self.count <= ROW_LIST_LIMIT:
            doc["rows"] = sorted(self.indices)
        return doc


@dataclass(frozen=True)
class AccessLog:
    streams_opened: tuple[str, ...] = ()
    fields_read: tuple[tuple[str, str], ...] = ()
    rows_read: dict = field(default_factory=dict)
    filters_applied: tuple[FilterRecord, ...] = ()
    collapses: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "streams_opened": list(self.streams_opened),
            "fields_read": [list(f) for f in self.fields_read],
            "rows_read": {s: self.rows_read[s].to_json() for s in self.streams_opened if s in self.rows_read},
            "filters_applied": [f.to_json() for f in self.filters_applied],
            "collapses": list(self.collapses),
        }


@dataclass(frozen=True)
class DropsManifest:
    rule_or_view_name: str
    footprint: AccessLog
    declared_losses: tuple[SemanticLossClass, ...]
    complement: tuple[tuple[str, str], ...]
    release_note: ReleaseScope | None = None
    omissions: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "name": self.rule_or_view_name,
            "footprint": self.footprint.to_json(),
            "declared_losses": [loss.to_json() for loss in self.declared_losses],
            "complement": [list(f) for f in self.complement],
            "omissions": list(self.omissions),
            "release_note": None if self.release_note is None else self.release_note.to_json(),
        }


def _sorted_fields(fields: Iterable[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    order = {s: i for i, s in enumerate(STREAM_NAMES)}
    return tuple(sorted(fields, key=lambda f: (order[f[0]], f[1])))


def merge_manifests(name: str, manifests: Iterable[DropsManifest]) -> DropsManifest:
    """Union of several per-card manifests, for reports over a batch of cards."""
    manifests = list(manifests)
    fields: set = set()
    complement: set = set()
    streams: list[str] = []
    filters: list[FilterRecord] = []
    collapses: list[str] = []
    losses: list[SemanticLossClass] = []
    omissions: list[str] = []
    rows: dict[str, RowAccess] = {}
    for m in manifests:
        fp = m.footprint
        fields.update(fp.fields_read)
        complement.update(m.complement)
        streams.extend(s for s in fp.streams_opened if s not in streams)
        filters.extend(fp.filters_applied)
        collapses.extend(c for c in fp.collapses if c not in collapses)
        losses.extend(x for x in m.declared_losses if x not in losses)
        omissions.extend(o for o in m.omissions if o not in omissions)
        for s, acc in fp.rows_read.items():
            prev = rows.get(s)
            if prev is None:
                rows[s] = RowAccess(acc.count, acc.total, acc.selectors)
            else:
                selectors = prev.selectors + tuple(x for x in acc.selectors if x not in prev.selectors)
                rows[s] = RowAccess(prev.count + acc.count, prev.total + acc.total, selectors)
    order = {s: i for i, s in enumerate(STREAM_NAMES)}
    log = AccessLog(
        streams_opened=tuple(sorted(streams, key=order.__getitem__)),
        fields_read=_sorted_fields(fields),
        rows_read=rows,
        filters_applied=tuple(filters),
        collapses=tuple(collapses),
    )
    return DropsManifest(name, log, tuple(losses), _sorted_fields(complement - fields), None, tuple(omissions))


# ---------------------------------------------------------------------------
# the reader


class TrackedReader:
    """Single-owner reader whose every access is logged under ``name``."""

    def __init__(self, card: CardBundle, name: str):
        self.card = card
        self.name = name
        self._universe = field_universe(card)
        self._streams: list[str] = []
        self._fields: set[tuple[str, str]] = set()
        self._rows: dict[str, set[int]] = {}
        self._selectors: dict[str, list[str]] = {}
        self._totals: dict[str, int] = {}
        self._filters: list[FilterRecord] = []
        self._collapses: list[str] = []
        self._losses: list[SemanticLossClass] = []
        self._omissions: list[str] = []
        self._finished = False

    def _check_open(self) -> None:
        if self._finished:
            raise AlreadyFinished(self.name)

    def has_column(self, stream: str, column: str) -> bool:
        """Whether the card's field universe holds ``stream.column`` (metadata, not logged)."""
        if stream not in ROW_TYPES:
            raise UnknownStream(stream)
        return (stream, column) in self._universe

    def read_rows(self, stream: str, columns: Iterable[str], filter: Filter = TRUE) -> list[dict]:
        """Rows of ``stream`` matching ``filter``, each restricted to ``columns``."""
        self._check_open()
        if stream not in ROW_TYPES:
            raise UnknownStream(stream)
        if not isinstance(filter, Filter):
            raise TypeError("filters must be declarative Filter objects, not callables")
        columns = list(columns)
        for col in list(columns) + sorted(filter.columns()):
            if (stream, col) not in self._universe:
                raise UnknownColumn(f"{stream}.{col}")
        out: list[dict] = []
        matched: set[int] = set()
        total = 0
        for index, row in enumerate(self.card.rows(stream)):
            total += 1
            if filter.matches(row):
                matched.add(index)
                out.append({c: row.get(c) for c in columns})
        if stream not in self._streams:
            self._streams.append(stream)
        self._fields.update((stream, c) for c in columns)
        self._fields.update((stream, c) for c in filter.columns())
        self._fields.update((stream, c) for c in KEY_COLUMNS[stream])
        self._rows.setdefault(stream, set()).update(matched)
        self._totals[stream] = total
        selector = filter.describe()
        if selector not in self._selectors.setdefault(stream, []):
            self._selectors[stream].append(selector)
        self._filters.append(FilterRecord(stream, selector, len(matched), total))
        return out

    def declare_loss(self, loss: SemanticLossClass | str, note: str = "") -> None:
        self._check_open()
        if isinstance(loss, str):
            loss = SemanticLossClass(loss, note)
        if loss not in self._losses:
            self._losses.append(loss)

    def collapse(self, descriptor: str) -> None:
        self._check_open()
        if descriptor not in self._collapses:
            self._collapses.append(descriptor)

    def omit(self, what: str) -> None:
        """Record a field or structure the analysis needed but the card lacks."""
        self._check_open()
        if what not in self._omissions:
            self._omissions.append(what)

    def finish(self) -> DropsManifest:
        self._check_open()
        self._finished = True
        order = {s: i for i, s in enumerate(STREAM_NAMES)}
        streams = tuple(sorted(self._streams, key=order.__getitem__))
        rows = {
            s: RowAccess(len(self._rows[s]), self._totals[s], tuple(self._selectors[s]), frozenset(self._rows[s]))
            for s in streams
        }
        log = AccessLog(
            streams_opened=streams,
            fields_read=_sorted_fields(self._fields),
            rows_read=rows,
            filters_applied=tuple(self._filters),
            collapses=tuple(self._collapses),
        )
        complement = _sorted_fields(self._universe - self._fields)
        return DropsManifest(
            self.name,
            log,
            tuple(self._losses),
            complement,
            self.card.manifest.release_scope,
            tuple(self._omissions),
        )


def open_tracked(card: CardBundle, name: str) -> TrackedReader:
    return TrackedReader(card, name)


def read_rows(reader: TrackedReader, stream: str, columns: Iterable[str], filter: Filter = TRUE) -> list[dict]:
    return reader.read_rows(stream, columns, filter)


def declare_loss(reader: TrackedReader, loss: SemanticLossClass | str) -> None:
    reader.declare_loss(loss)


def finish(reader: TrackedReader) -> DropsManifest:
    return reader.finish()


# ---------------------------------------------------------------------------
# footprint stripping


_PLACEHOLDER = {
    "str": "",
    "int": 0,
    "object": {},
    "timestamp": "1970-01-01T00:00:00.000Z",
}


def _placeholder(col):
    if col.nullable:
        return None
    if col.kind == "enum":
        return col.choices[0]
    return _PLACEHOLDER.get(col.kind)


def strip_to_footprint(card: CardBundle, drops: DropsManifest) -> CardBundle:
    """A copy of ``card`` holding only the rows and fields in ``drops``.

    Unread columns are blanked to placeholders and unread extras removed,
    so any analysis that really depends only on its footprint gives the
    same answer on the stripped card.
    """
    fields = set(drops.footprint.fields_read)
    streams: dict[str, list] = {}
    for stream in STREAM_NAMES:
        access = drops.footprint.rows_read.get(stream)
        if access is None:
            streams[stream] = []
            continue
        cls = ROW_TYPES[stream]
        kept = []
        for index, row in enumerate(card.rows(stream)):
            if index not in access.indices:
                continue
            values = {}
            for col in cls.COLUMNS:
                values[col.name] = getattr(row, col.name) if (stream, col.name) in fields else _placeholder(col)
            values["extras"] = {k: v for k, v in row.extras.items() if (stream, k) in fields}
            kept.append(cls(**values))
        streams[stream] = kept
    blobs = MemoryBlobStore()
    for stream in ("events", "annotations", "mutations"):
        for row in streams[stream]:
            for ref in iter_blob_refs([getattr(row, "payload", None), getattr(row, "new_value", None), row.extras]):
                if ref.digest in card.blobs and ref.digest not in blobs:
                    blobs.put(card.blobs.get(ref.digest), ref.media_type)
    stripped = CardBundle(card.manifest, streams, blobs)
    schema = {(s, c) for s in STREAM_NAMES for c in ROW_TYPES[s].COLUMN_ORDER}
    stripped._universe = frozenset(schema | fields)
    return stripped

"""Conformance checking for card bundles.

``validate_bundle`` never raises for a conformance problem: everything it
finds goes into the report, and it keeps going after the first defect so
one run describes a badly broken bundle fully.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .blobs import sha256_hex
from .bundle import (
    BLOB_DIR,
    MANIFEST_NAME,
    Source,
    as_carrier,
    open_source,
    read_bundle,
    split_lines,
    stream_file,
)
from .errors import ConformanceError, RowError, RunIdMismatch
from .graph import IncrementalDag
from .model import (
    EDGE_STATUSES,
    INLINE_CAP,
    STREAM_NAMES,
    SUPPORTED_MAJOR,
    AnnotationRow,
    CardBundle,
    EdgeRow,
    EventRow,
    Manifest,
    MutationRow,
    blob_refs_in_row,
    parse_row,
    serialize_row,
    timestamp_key,
)
from . import jsontext

VIOLATION_CAP = 10_000

LAYOUT = "LAYOUT"
MANIFEST_INVALID = "MANIFEST_INVALID"
UNSUPPORTED_VERSION = "UNSUPPORTED_VERSION"
HASH_MISMATCH = "HASH_MISMATCH"
SCHEMA_VIOLATION = "SCHEMA_VIOLATION"
ROW_INVARIANT = "ROW_INVARIANT"
PAYLOAD_SHAPE_MISMATCH = "PAYLOAD_SHAPE_MISMATCH"
OVERSIZED_INLINE_PAYLOAD = "OVERSIZED_INLINE_PAYLOAD"
DUPLICATE_ID = "DUPLICATE_ID"
SEQUENCE_NOT_MONOTONIC = "SEQUENCE_NOT_MONOTONIC"
MUTATION_SEQUENCE_NOT_MONOTONIC = "MUTATION_SEQUENCE_NOT_MONOTONIC"
ANNOTATION_SEQUENCE_NOT_MONOTONIC = "ANNOTATION_SEQUENCE_NOT_MONOTONIC"
PARENT_LEVEL_INCONSISTENT = "PARENT_LEVEL_INCONSISTENT"
NAMESPACE_INVALID = "NAMESPACE_INVALID"
TARGET_UNKNOWN = "TARGET_UNKNOWN"
DANGLING_BLOB_REF = "DANGLING_BLOB_REF"
BLOB_LENGTH_MISMATCH = "BLOB_LENGTH_MISMATCH"
BLOB_DIGEST_MISMATCH = "BLOB_DIGEST_MISMATCH"
EDGE_CYCLE = "EDGE_CYCLE"
EDGE_UNKNOWN_NODE = "EDGE_UNKNOWN_NODE"
RELEASE_SCOPE_INCONSISTENT = "RELEASE_SCOPE_INCONSISTENT"
APPEND_ONLY_VIOLATED = "APPEND_ONLY_VIOLATED"

_NAMESPACE_RE = re.compile(r"[A-Za-z0-9_\-]+(\.[A-Za-z0-9_\-]+)*")

# payload shapes of the event and mutation types this toolkit knows about;
# a shape maps key -> accepted python types (str also admits a blob ref)
_TEXT = (str, dict)
_NUMBER = (int, float)
EVENT_SHAPES: dict[str, dict[str, tuple]] = {
    "message": {"text": _TEXT},
    "model_output": {"text": _TEXT},
    "tool_call": {"tool": (str,), "arguments": (dict,)},
    "tool_result": {"content": (str, dict, list, int, float, bool, type(None))},
    "reward": {"value": _NUMBER},
    "search_action": {"path": (list,), "depth": (int,), "backtrack": (bool,)},
    "env_state": {"state": (dict,)},
    "proof": {"text": _TEXT},
    "final_answer": {"text": _TEXT},
}
MUTATION_SHAPES: dict[str, dict[str, tuple]] = {
    "node_status": {"status": (str,)},
    "edge_status": {"status": (str,)},
    "tombstone": {"$deleted": (bool,)},
}


@dataclass(frozen=True)
class Violation:
    code: str
    stream: str
    row_locator: tuple[int, ...]
    message: str

    def to_json(self) -> dict:
        return {
            "code": self.code,
            "stream": self.stream,
            "row_locator": list(self.row_locator),
            "message": self.message,
        }


@dataclass
class ValidationReport:
    bundle_path: str
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if not self.violations else "fail"

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_json(self) -> dict:
        return {
            "bundle_path": self.bundle_path,
            "verdict": self.verdict,
            "violations": [v.to_json() for v in self.violations],
            "warnings": [w.to_json() for w in self.warnings],
            "stats": self.stats,
        }

    def to_text_document(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    def render_text(self) -> str:
        lines = [f"{self.verdict}, {len(self.violations)} violations, {len(self.warnings)} warnings"]
        for v in self.violations:
            where = ",".join(str(n) for n in v.row_locator)
            lines.append(f"  {v.code:<34} {v.stream}{':' + where if where else ''}  {v.message}")
        for w in self.warnings:
            lines.append(f"  warning {w.code:<26} {w.stream}  {w.message}")
        for stream, extra in self.stats.get("truncated", {}).items():
            lines.append(f"  {stream}: {extra} further violations past the cap of {VIOLATION_CAP} not listed")
        counts = self.stats.get("rows", {})
        if counts:
            lines.append("  rows: " + " ".join(f"{k}={counts[k]}" for k in STREAM_NAMES if k in counts))
        return "\n".join(lines)


class _Collector:
    def __init__(self):
        self.violations: list[Violation] = []
        self.warnings: list[Violation] = []
        self._per_stream: dict[str, int] = {}
        self.truncated: dict[str, int] = {}

    def add(self, code: str, stream: str, locator: Iterable[int], message: str) -> None:
        n = self._per_stream.get(stream, 0)
        if n >= VIOLATION_CAP:
            self.truncated[stream] = self.truncated.get(stream, 0) + 1
            return
        self._per_stream[stream] = n + 1
        self.violations.append(Violation(code, stream, tuple(locator), message))

    def warn(self, code: str, stream: str, message: str, locator: Iterable[int] = ()) -> None:
        if len(self.warnings) < VIOLATION_CAP:
            self.warnings.append(Violation(code, stream, tuple(locator), message))


def _shape_problem(shape: dict[str, tuple], value) -> str | None:
    if not isinstance(value, dict):
        return "expected an object"
    for key, types in shape.items():
        if key not in value:
            return f"missing key {key!r}"
        item = value[key]
        if isinstance(item, bool) and bool not in types:
            return f"key {key!r} has type bool"
        if not isinstance(item, types):
            return f"key {key!r} has type {type(item).__name__}"
    return None


def _check_payload(row, lineno: int, strict: bool, out: _Collector, unknown_types: dict) -> None:
    if isinstance(row, EventRow):
        shape = EVENT_SHAPES.get(row.event_type)
        kind, value, stream = row.event_type, row.payload, "events"
    elif isinstance(row, MutationRow):
        shape = MUTATION_SHAPES.get(row.mutation_type)
        kind, value, stream = row.mutation_type, row.new_value, "mutations"
    else:
        return
    if shape is None:
        unknown_types.setdefault((stream, kind), lineno)
        return
    problem = _shape_problem(shape, value)
    if problem is None and isinstance(row, MutationRow) and kind == "edge_status":
        if value["status"] not in EDGE_STATUSES:
            problem = f"edge status {value['status']!r} not in {EDGE_STATUSES}"
    if problem is not None:
        message = f"{kind} payload: {problem}"
        if strict:
            out.add(PAYLOAD_SHAPE_MISMATCH, stream, (lineno,), message)
        else:
            out.warn(PAYLOAD_SHAPE_MISMATCH, stream, message, (lineno,))


def _check_rows(
    streams: dict[str, list[tuple[int, object]]],
    manifest: Manifest,
    blob_lengths: dict[str, int] | None,
    out: _Collector,
    missing: frozenset[str] = frozenset(),
    blob_lines: dict[str, set[int]] | None = None,
) -> None:
    """Cross-row checks over parsed rows; ``streams`` pairs rows with line numbers.

    References into a ``missing`` stream are not checked: the layout
    violation already covers them.
    """
    # duplicate ids and per-scope event sequences
    event_ids: dict[str, int] = {}
    last_event: dict[str, tuple[int, int]] = {}
    for lineno, row in streams["events"]:
        if row.event_id in event_ids:
            out.add(DUPLICATE_ID, "events", (event_ids[row.event_id], lineno), f"event_id {row.event_id!r} repeated")
        else:
            event_ids[row.event_id] = lineno
        prev = last_event.get(row.task_execution_id)
        if prev is not None and row.sequence <= prev[0]:
            out.add(
                SEQUENCE_NOT_MONOTONIC,
                "events",
                (prev[1], lineno),
                f"sequence {row.sequence} after {prev[0]} for task_execution_id {row.task_execution_id!r}",
            )
        if prev is None or row.sequence > prev[0]:
            last_event[row.task_execution_id] = (row.sequence, lineno)

    # node parent/level consistency
    levels: dict[str, tuple[int, int]] = {}
    for lineno, row in streams["nodes"]:
        if row.node_id in levels:
            out.add(DUPLICATE_ID, "nodes", (levels[row.node_id][1], lineno), f"node_id {row.node_id!r} repeated")
            continue
        if row.parent_id is not None:
            parent = levels.get(row.parent_id)
            if parent is None:
                out.add(
                    PARENT_LEVEL_INCONSISTENT,
                    "nodes",
                    (lineno,),
                    f"parent {row.parent_id!r} of {row.node_id!r} does not appear earlier",
                )
            elif row.level != parent[0] + 1:
                out.add(
                    PARENT_LEVEL_INCONSISTENT,
                    "nodes",
                    (parent[1], lineno),
                    f"node {row.node_id!r} has level {row.level}, parent level is {parent[0]}",
                )
        levels[row.node_id] = (row.level, lineno)

    def target_known(target_type: str, target_id: str) -> bool:
        if target_type == "node":
            return "nodes" in missing or target_id in levels
        if target_type == "event":
            return "events" in missing or target_id in event_ids
        return target_id == manifest.run_id

    # annotations: namespace syntax, targets, per-(target, namespace) sequences
    last_annotation: dict[tuple, tuple[int, int]] = {}
    for lineno, row in streams["annotations"]:
        if not _NAMESPACE_RE.fullmatch(row.namespace):
            out.add(NAMESPACE_INVALID, "annotations", (lineno,), f"namespace {row.namespace!r} is not dotted identifiers")
        if not target_known(row.target_type, row.target_id):
            out.add(TARGET_UNKNOWN, "annotations", (lineno,), f"{row.target_type} {row.target_id!r} not found")
        key = (row.target_type, row.target_id, row.namespace)
        prev = last_annotation.get(key)
        if prev is not None and row.sequence <= prev[0]:
            out.add(
                ANNOTATION_SEQUENCE_NOT_MONOTONIC,
                "annotations",
                (prev[1], lineno),
                f"sequence {row.sequence} after {prev[0]} for {key}",
            )
        if prev is None or row.sequence > prev[0]:
            last_annotation[key] = (row.sequence, lineno)

    # mutations: one sequence per run
    prev_mut: tuple[int, int] | None = None
    for lineno, row in streams["mutations"]:
        if prev_mut is not None and row.sequence <= prev_mut[0]:
            out.add(
                MUTATION_SEQUENCE_NOT_MONOTONIC,
                "mutations",
                (prev_mut[1], lineno),
                f"sequence {row.sequence} after {prev_mut[0]}",
            )
        if prev_mut is None or row.sequence > prev_mut[0]:
            prev_mut = (row.sequence, lineno)
        if not target_known(row.target_type, row.target_id):
            out.add(TARGET_UNKNOWN, "mutations", (lineno,), f"{row.target_type} {row.target_id!r} not found")

    # blob reference closure
    index = set(manifest.blob_index)
    for stream in ("events", "annotations", "mutations"):
        candidates = blob_lines.get(stream, set()) if blob_lines is not None else None
        for lineno, row in streams[stream]:
            if candidates is not None and lineno not in candidates:
                continue
            for ref in blob_refs_in_row(row):
                if ref.digest not in index or (blob_lengths is not None and ref.digest not in blob_lengths):
                    out.add(DANGLING_BLOB_REF, stream, (lineno,), f"blob {ref.digest[:16]}... is not in the bundle")
                elif blob_lengths is not None and ref.byte_length != blob_lengths[ref.digest]:
                    out.add(
                        BLOB_LENGTH_MISMATCH,
                        stream,
                        (lineno,),
                        f"blob {ref.digest[:16]}... has {blob_lengths[ref.digest]} bytes, ref says {ref.byte_length}",
                    )

    # acyclicity at every point of the run: created_at order, file order breaks ties
    edges = sorted(streams["edges"], key=lambda item: (timestamp_key(item[1].created_at), item[0]))
    dag = IncrementalDag()
    for lineno, row in edges:
        for end in (row.source_node_id, row.target_node_id):
            if "nodes" not in missing and end not in levels:
                out.add(EDGE_UNKNOWN_NODE, "edges", (lineno,), f"edge endpoint {end!r} is not a node")
        witness = dag.add(row.source_node_id, row.target_node_id)
        if witness is not None:
            cycle = " -> ".join(witness + [witness[0]])
            out.add(EDGE_CYCLE, "edges", (lineno,), f"edge {row.source_node_id}->{row.target_node_id} closes cycle {cycle}")

    if not manifest.release_scope.is_consistent():
        out.add(
            RELEASE_SCOPE_INCONSISTENT,
            "manifest",
            (),
            f"release scope {manifest.release_scope.kind} declares no omissions, licence note or redistribution limit",
        )


def _numbered(rows: Iterable) -> list[tuple[int, object]]:
    return [(i + 1, row) for i, row in enumerate(rows)]


def check_card(card: CardBundle) -> list[Violation]:
    """Run the cross-row checks on an in-memory card (used before writing)."""
    out = _Collector()
    streams = {name: _numbered(card.rows(name)) for name in STREAM_NAMES}
    for name, rows in streams.items():
        for lineno, row in rows:
            if isinstance(row, EdgeRow):
                continue  # self-loops are reported as cycles
            for problem in row.invariant_errors():
                out.add(ROW_INVARIANT, name, (lineno,), problem)
    lengths = {d: len(card.blobs.get(d)) for d in card.blobs.digests()}
    manifest = card.manifest
    if not manifest.blob_index:
        manifest = replace(manifest, blob_index=tuple(lengths))
    _check_rows(streams, manifest, lengths, out)
    return out.violations


def validate_bundle(carrier, strictness: str = "strict", previous=None) -> ValidationReport:
    """Check a bundle against the full conformance contract.

    ``previous`` optionally names an earlier snapshot of the same run; the
    bundle must then extend it append-only.
    """
    if strictness not in ("strict", "tolerant"):
        raise ValueError(f"strictness must be 'strict' or 'tolerant', not {strictness!r}")
    carrier = as_carrier(carrier)
    report = ValidationReport(str(carrier.path))
    out = _Collector()
    source = open_source(carrier)
    try:
        _validate_source(source, strictness == "strict", out, report)
    finally:
        source.close()
    if previous is not None and not out.violations:
        earlier = read_bundle(previous, verify=False)
        later = read_bundle(carrier, verify=False)
        result = check_extends(earlier, later)
        for v in result.violations:
            out.add(v.code, v.stream, v.row_locator, v.message)
    report.violations = out.violations
    report.warnings = out.warnings
    if out.truncated:
        report.stats["truncated"] = out.truncated
    return report


def _validate_source(source: Source, strict: bool, out: _Collector, report: ValidationReport) -> None:
    raw_manifest = source.read(MANIFEST_NAME)
    if raw_manifest is None:
        out.add(LAYOUT, "manifest", (), "manifest.json is missing")
        return
    try:
        manifest = Manifest.from_text(raw_manifest.decode("utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        out.add(MANIFEST_INVALID, "manifest", (), str(exc))
        return
    if manifest.format_version.major != SUPPORTED_MAJOR:
        out.add(
            UNSUPPORTED_VERSION,
            "manifest",
            (),
            f"format {manifest.format_version} has major {manifest.format_version.major}, toolkit reads {SUPPORTED_MAJOR}.x",
        )
        return

    names = set(source.names())
    known = {MANIFEST_NAME, BLOB_DIR + "/"} | {stream_file(s) for s in STREAM_NAMES}
    for name in sorted(names):
        if name not in known and not name.startswith(BLOB_DIR + "/"):
            out.warn("UNEXPECTED_FILE", "layout", f"{name} is not part of the bundle layout")

    # layout and hashes
    streams: dict[str, list[tuple[int, object]]] = {s: [] for s in STREAM_NAMES}
    rows_count: dict[str, int] = {}
    unknown_types: dict = {}
    missing: set[str] = set()
    # only lines that could spell a blob key (directly or via an escape) are walked for refs
    blob_lines: dict[str, set[int]] = {s: set() for s in STREAM_NAMES}
    for stream in STREAM_NAMES:
        fname = stream_file(stream)
        expected = manifest.stream_hashes.get(stream)
        data = source.read(fname)
        if data is None:
            missing.add(stream)
            if expected is not None:
                out.add(LAYOUT, stream, (), f"{fname} is listed in the manifest but missing")
            rows_count[stream] = 0
            continue
        if expected is None:
            out.warn("UNLISTED_STREAM", stream, f"{fname} has no content hash in the manifest")
        elif sha256_hex(data) != expected:
            out.add(HASH_MISMATCH, stream, (), f"{fname} does not match its manifest hash")
        lines = split_lines(data)
        rows_count[stream] = len(lines)
        parsed = streams[stream]
        for i, raw in enumerate(lines):
            lineno = i + 1
            try:
                line = raw.decode("utf-8")
                row = parse_row(stream, line)
            except UnicodeDecodeError as exc:
                out.add(SCHEMA_VIOLATION, stream, (lineno,), f"invalid UTF-8: {exc}")
                continue
            except RowError as exc:
                out.add(SCHEMA_VIOLATION, stream, (lineno,), str(exc))
                continue
            if not isinstance(row, EdgeRow):
                for problem in row.invariant_errors():
                    out.add(ROW_INVARIANT, stream, (lineno,), problem)
            _check_payload(row, lineno, strict, out, unknown_types)
            if isinstance(row, (EventRow, AnnotationRow)) and len(raw) > INLINE_CAP:
                size = len(jsontext.dumps(row.payload).encode("utf-8"))
                if size > INLINE_CAP:
                    out.add(OVERSIZED_INLINE_PAYLOAD, stream, (lineno,), f"inline payload of {size} bytes")
            parsed.append((lineno, row))
            if b"$blob" in raw or b"\\u" in raw:
                blob_lines[stream].add(lineno)
    for (stream, kind), lineno in sorted(unknown_types.items()):
        out.warn("UNKNOWN_DISCRIMINATOR", stream, f"no payload shape registered for {kind!r}", (lineno,))

    # blobs on disk
    present = set(source.blob_names())
    blob_lengths: dict[str, int] = {}
    for digest in sorted(present):
        data = source.read(f"{BLOB_DIR}/{digest}") or b""
        if sha256_hex(data) != digest:
            out.add(BLOB_DIGEST_MISMATCH, "blobs", (), f"blob file {digest[:16]}... does not hash to its name")
        blob_lengths[digest] = len(data)
    for digest in manifest.blob_index:
        if digest not in present:
            out.add(LAYOUT, "blobs", (), f"blob {digest[:16]}... is indexed but missing")

    _check_rows(streams, manifest, blob_lengths, out, frozenset(missing), blob_lines)

    total = sum(rows_count.values())
    if total == 0:
        out.warn("EMPTY_BUNDLE", "layout", "bundle has zero rows in every stream")
    report.stats = {
        "rows": rows_count,
        "task_execution_ids": len({row.task_execution_id for _, row in streams["events"]}),
        "namespaces": len({row.namespace for _, row in streams["annotations"]}),
        "blobs": len(present),
    }


# ---------------------------------------------------------------------------
# append-only extension between two snapshots


@dataclass
class ExtendsResult:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_extends(earlier: CardBundle, later: CardBundle) -> ExtendsResult:
    """Every stream of ``earlier`` must be a row-prefix of the same stream in ``later``."""
    if not isinstance(earlier, CardBundle):
        earlier = read_bundle(earlier, verify=False)
    if not isinstance(later, CardBundle):
        later = read_bundle(later, verify=False)
    if earlier.manifest.run_id != later.manifest.run_id:
        raise RunIdMismatch(f"{earlier.manifest.run_id!r} != {later.manifest.run_id!r}")
    violations = []
    for stream in STREAM_NAMES:
        old = [serialize_row(r) for r in earlier.rows(stream)]
        new_iter = iter(later.rows(stream))
        for i, line in enumerate(old):
            nxt = next(new_iter, None)
            if nxt is None:
                violations.append(
                    Violation(
                        APPEND_ONLY_VIOLATED,
                        stream,
                        (i + 1,),
                        f"{stream} lost rows: earlier has {len(old)}, later ends at row {i}",
                    )
                )
                break
            if serialize_row(nxt) != line:
                violations.append(
                    Violation(APPEND_ONLY_VIOLATED, stream, (i + 1,), f"{stream} row {i + 1} was rewritten or reordered")
                )
                break
    return ExtendsResult(violations)


def validate_path(path: str | Path, **kwargs) -> ValidationReport:
    try:
        return validate_bundle(path, **kwargs)
    except ConformanceError as exc:
        report = ValidationReport(str(path))
        report.violations.append(Violation(LAYOUT, "bundle", (), str(exc)))
        return report

"""Projections of a card onto reported views, and the preservation test.

A projection returns the view table together with the drops manifest the
tracked reader produced while building it. Preservation of a downstream
quantity is decided by computing the quantity from the table alone and
comparing with the same quantity computed from the full card.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any, Callable

from . import jsontext
from .access import DropsManifest, TrackedReader, eq, is_in, open_tracked
from .errors import MissingSourceField, RolloutCardError, UnknownQuantity
from .model import ENVIRONMENT_WORKER, CardBundle, parse_timestamp

SCORE_NAMESPACE = "score"
SAFETY_CALL_NAMESPACE = "safety.tool_call"
SAFETY_RESPONSE_NAMESPACE = "safety.response"
FLOW_TYPES = ("message", "model_output", "tool_call", "tool_result")
WORKER_RECORD_TYPES = FLOW_TYPES + ("reward",)
STEP_TYPES = ("tool_call", "search_action")

BUILTIN_VIEWS = (
    "final_score",
    "token_step_rl",
    "per_worker",
    "tool_call_safety",
    "proof_search_summary",
    "search_tree",
)
QUANTITIES = ("return", "timing", "worker_flow", "tool_safety", "proof_cost", "search_shape")
REDUCERS = ("latest", "first", "list", "count", "sum")


@dataclass(frozen=True)
class ColumnSource:
    """Where one output column of a view comes from.

    ``key`` picks one entry out of an object-valued column; ``event_type``
    and ``namespace`` narrow the rows of the events and annotations streams.
    Built-in plans use ``reduce="derived"`` because their columns are
    computed rather than copied.
    """

    output: str
    stream: str
    column: str
    key: str | None = None
    event_type: str | None = None
    namespace: str | None = None
    reduce: str = "latest"

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _plan(*items: tuple[str, str, str]) -> tuple[ColumnSource, ...]:
    return tuple(ColumnSource(out, stream, col, reduce="derived") for out, stream, col in items)


BUILTIN_PLANS: dict[str, tuple[ColumnSource, ...]] = {
    "final_score": _plan(
        ("run_id", "nodes", "node_id"),
        ("terminal_status", "nodes", "status"),
        ("final_score", "annotations", "payload"),
    ),
    "token_step_rl": _plan(
        ("run_id", "nodes", "node_id"),
        ("step_index", "events", "sequence"),
        ("reward", "events", "payload"),
        ("terminal_status", "nodes", "status"),
        ("duration_proxy", "events", "completed_at"),
        ("step_status", "events", "payload"),
    ),
    "per_worker": _plan(
        ("run_id", "nodes", "node_id"),
        ("worker_binding_key", "events", "worker_binding_key"),
        ("records", "events", "payload"),
    ),
    "tool_call_safety": _plan(
        ("run_id", "nodes", "node_id"),
        ("tool_calls", "events", "payload"),
        ("refused", "annotations", "payload"),
        ("text_safe", "annotations", "payload"),
        ("forbidden_call_count", "annotations", "payload"),
    ),
    "proof_search_summary": _plan(
        ("run_id", "nodes", "node_id"),
        ("outcome", "annotations", "payload"),
        ("realised_steps", "events", "event_type"),
        ("elapsed_time", "events", "completed_at"),
        ("proof_text", "events", "payload"),
    ),
    "search_tree": _plan(
        ("run_id", "nodes", "node_id"),
        ("action_paths", "events", "payload"),
        ("depth", "events", "payload"),
        ("backtracks", "events", "payload"),
        ("reward_snapshots", "events", "payload"),
    ),
}

_BUILTIN_COLLAPSES = {
    "final_score": ("per-run collapse to one outcome", "events dropped", "dependency edges dropped"),
    "token_step_rl": ("flattened to reward steps", "worker identity dropped", "dependency edges dropped"),
    "per_worker": ("per-worker grouping", "dependency edges dropped", "environment events dropped"),
    "tool_call_safety": ("per-run collapse of tool calls", "non-tool events dropped", "dependency edges dropped"),
    "proof_search_summary": ("per-run summary of steps and elapsed time", "dependency edges dropped"),
    "search_tree": ("search actions as path prefixes", "non-search events dropped", "dependency edges dropped"),
}

_BUILTIN_LOSSES = {
    "final_score": (
        "duration_erasure",
        "precedence_erasure",
        "worker_identity_erasure",
        "branch_erasure",
        "tool_channel_erasure",
    ),
    "token_step_rl": ("worker_identity_erasure", "precedence_erasure", "branch_erasure"),
    "per_worker": ("precedence_erasure", "branch_erasure"),
    "tool_call_safety": ("duration_erasure", "precedence_erasure", "branch_erasure"),
    "proof_search_summary": ("worker_identity_erasure", "precedence_erasure", "tool_channel_erasure"),
    "search_tree": ("worker_identity_erasure", "precedence_erasure", "tool_channel_erasure"),
}


@dataclass(frozen=True)
class ViewSpec:
    name: str
    column_plan: tuple[ColumnSource, ...] = ()
    collapses: tuple[str, ...] = ()
    losses: tuple[str, ...] = ()
    strict: bool = False

    @property
    def is_builtin(self) -> bool:
        return self.name in BUILTIN_VIEWS

    @classmethod
    def builtin(cls, name: str) -> "ViewSpec":
        if name not in BUILTIN_VIEWS:
            raise ValueError(f"{name!r} is not a built-in view; choose from {BUILTIN_VIEWS}")
        return cls(name, BUILTIN_PLANS[name], _BUILTIN_COLLAPSES[name], _BUILTIN_LOSSES[name])

    @classmethod
    def custom(cls, name: str, sources: list[ColumnSource], **kwargs) -> "ViewSpec":
        if name in BUILTIN_VIEWS:
            raise ValueError(f"{name!r} is reserved for a built-in view")
        for src in sources:
            if not src.output or not src.stream or not src.column:
                raise ValueError(f"custom column {src!r} must name its output, stream and column")
            if src.reduce not in REDUCERS:
                raise ValueError(f"unknown reducer {src.reduce!r}; use one of {REDUCERS}")
        return cls(name, tuple(sources), **kwargs)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "column_plan": [c.to_json() for c in self.column_plan],
            "collapses": list(self.collapses),
            "losses": list(self.losses),
        }


def as_spec(view: "ViewSpec | str") -> ViewSpec:
    return view if isinstance(view, ViewSpec) else ViewSpec.builtin(view)


@dataclass
class ViewTable:
    view_name: str
    columns: tuple[str, ...]
    rows: list[dict]
    provenance: DropsManifest

    @property
    def degraded(self) -> bool:
        return bool(self.provenance.omissions)

    def to_jsonl(self) -> str:
        return "".join(jsontext.dumps(row) + "\n" for row in self.rows)

    def drops_document(self) -> str:
        return jsontext.dumps_document(self.provenance.to_json())

    def by_run(self) -> dict[str, list[dict]]:
        out: dict[str, list[dict]] = {}
        for row in self.rows:
            out.setdefault(row["run_id"], []).append(row)
        return out


# ---------------------------------------------------------------------------
# shared reads


@dataclass
class RunIndex:
    runs: list[str]
    root_of: dict[str, str]
    status: dict[str, str]

    def run_of(self, task_execution_id: str) -> str:
        return self.root_of.get(task_execution_id, task_execution_id)


def run_index(reader: TrackedReader) -> RunIndex:
    """Runs are root nodes; a run's status is its latest node_status mutation."""
    runs: list[str] = []
    root_of: dict[str, str] = {}
    status: dict[str, str] = {}
    for row in reader.read_rows("nodes", ["node_id", "parent_id", "status"]):
        node, parent = row["node_id"], row["parent_id"]
        if parent is None:
            runs.append(node)
            root_of[node] = node
            status[node] = row["status"]
        else:
            root_of[node] = root_of.get(parent, parent)
    mutations = reader.read_rows(
        "mutations",
        ["target_id", "new_value"],
        eq("mutation_type", "node_status") & eq("target_type", "node"),
    )
    for row in mutations:
        value = row["new_value"]
        if row["target_id"] in status and isinstance(value, dict) and isinstance(value.get("status"), str):
            status[row["target_id"]] = value["status"]
    return RunIndex(runs, root_of, status)


def latest_annotations(reader: TrackedReader, namespace: str, target_type: str = "node") -> dict[str, dict]:
    """Current (highest-sequence) payload per target for one namespace."""
    rows = reader.read_rows(
        "annotations",
        ["target_id", "sequence", "payload"],
        eq("namespace", namespace) & eq("target_type", target_type),
    )
    best: dict[str, tuple[int, dict]] = {}
    for row in rows:
        prev = best.get(row["target_id"])
        if prev is None or row["sequence"] > prev[0]:
            best[row["target_id"]] = (row["sequence"], row["payload"])
    return {k: v[1] for k, v in best.items()}


def _ms_between(start: str | None, end: str | None) -> int | None:
    if start is None or end is None:
        return None
    return (parse_timestamp(end) - parse_timestamp(start)) // timedelta(milliseconds=1)


def _elapsed_seconds(starts: list[str], ends: list[str]) -> float | None:
    if not starts or not ends:
        return None
    first = min(parse_timestamp(s) for s in starts)
    last = max(parse_timestamp(e) for e in ends)
    return ((last - first) // timedelta(milliseconds=1)) / 1000


# ---------------------------------------------------------------------------
# built-in views


def _final_score(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    scores = latest_annotations(reader, SCORE_NAMESPACE)
    missing = [r for r in runs.runs if r not in scores]
    if missing:
        reader.omit(f"annotations[{SCORE_NAMESPACE}] absent for {len(missing)} run(s)")
    return [
        {
            "run_id": run,
            "terminal_status": runs.status[run],
            "final_score": scores[run].get("value") if run in scores else None,
        }
        for run in runs.runs
    ]


def _token_step_rl(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    rewards = reader.read_rows(
        "events",
        ["task_execution_id", "sequence", "payload", "started_at", "completed_at"],
        eq("event_type", "reward"),
    )
    per_run: dict[str, list[dict]] = defaultdict(list)
    for row in rewards:
        per_run[runs.run_of(row["task_execution_id"])].append(row)
    out = []
    for run in runs.runs:
        for index, row in enumerate(per_run.get(run, ())):
            payload = row["payload"]
            out.append(
                {
                    "run_id": run,
                    "step_index": index,
                    "reward": payload.get("value"),
                    "terminal_status": runs.status[run],
                    "duration_proxy": _ms_between(row["started_at"], row["completed_at"]),
                    "step_status": payload.get("step_status"),
                }
            )
    return out


def _per_worker(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    events = reader.read_rows(
        "events",
        [
            "event_id",
            "task_execution_id",
            "worker_binding_key",
            "sequence",
            "event_type",
            "payload",
            "started_at",
            "completed_at",
        ],
        is_in("event_type", WORKER_RECORD_TYPES) & ~eq("worker_binding_key", ENVIRONMENT_WORKER),
    )
    grouped: dict[str, dict[str, list[dict]]] = defaultdict(dict)
    for row in events:
        run = runs.run_of(row["task_execution_id"])
        grouped[run].setdefault(row["worker_binding_key"], []).append(
            {
                "event_id": row["event_id"],
                "sequence": row["sequence"],
                "event_type": row["event_type"],
                "payload": row["payload"],
                "started_at": row["started_at"],
                "completed_at": row["completed_at"],
            }
        )
    out = []
    for run in runs.runs:
        for worker, records in grouped.get(run, {}).items():
            out.append({"run_id": run, "worker_binding_key": worker, "records": records})
    return out


def _tool_call_safety(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    calls = reader.read_rows(
        "events",
        ["event_id", "task_execution_id", "worker_binding_key", "sequence", "payload"],
        eq("event_type", "tool_call"),
    )
    flags = latest_annotations(reader, SAFETY_CALL_NAMESPACE, "event")
    responses = latest_annotations(reader, SAFETY_RESPONSE_NAMESPACE, "node")
    per_run: dict[str, list[dict]] = defaultdict(list)
    unflagged = 0
    for row in calls:
        flag = flags.get(row["event_id"])
        if flag is None:
            unflagged += 1
        payload = row["payload"]
        per_run[runs.run_of(row["task_execution_id"])].append(
            {
                "event_id": row["event_id"],
                "worker_binding_key": row["worker_binding_key"],
                "sequence": row["sequence"],
                "tool": payload.get("tool"),
                "arguments": payload.get("arguments"),
                "forbidden": None if flag is None else flag.get("forbidden"),
            }
        )
    if unflagged:
        reader.omit(f"annotations[{SAFETY_CALL_NAMESPACE}] absent for {unflagged} tool call(s)")
    unmarked = [r for r in runs.runs if r not in responses]
    if unmarked:
        reader.omit(f"annotations[{SAFETY_RESPONSE_NAMESPACE}] absent for {len(unmarked)} run(s)")
    out = []
    for run in runs.runs:
        tool_calls = per_run.get(run, [])
        response = responses.get(run, {})
        out.append(
            {
                "run_id": run,
                "tool_calls": tool_calls,
                "refused": response.get("refused"),
                "text_safe": response.get("text_safe"),
                "forbidden_call_count": sum(1 for c in tool_calls if c["forbidden"] is True),
            }
        )
    return out


def _proof_search_summary(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    scores = latest_annotations(reader, SCORE_NAMESPACE)
    events = reader.read_rows("events", ["task_execution_id", "event_type", "started_at", "completed_at"])
    proofs = reader.read_rows("events", ["task_execution_id", "payload"], eq("event_type", "proof"))
    steps: dict[str, int] = defaultdict(int)
    starts: dict[str, list[str]] = defaultdict(list)
    ends: dict[str, list[str]] = defaultdict(list)
    for row in events:
        run = runs.run_of(row["task_execution_id"])
        if row["event_type"] in STEP_TYPES:
            steps[run] += 1
        if row["started_at"] is not None:
            starts[run].append(row["started_at"])
        if row["completed_at"] is not None:
            ends[run].append(row["completed_at"])
    proof_text: dict[str, Any] = {}
    for row in proofs:
        proof_text[runs.run_of(row["task_execution_id"])] = row["payload"].get("text")
    return [
        {
            "run_id": run,
            "outcome": scores[run].get("value") if run in scores else None,
            "realised_steps": steps.get(run, 0),
            "elapsed_time": _elapsed_seconds(starts.get(run, []), ends.get(run, [])),
            "proof_text": proof_text.get(run),
        }
        for run in runs.runs
    ]


def _search_tree(reader: TrackedReader) -> list[dict]:
    runs = run_index(reader)
    actions = reader.read_rows("events", ["task_execution_id", "sequence", "payload"], eq("event_type", "search_action"))
    rewards = reader.read_rows(
        "events",
        ["task_execution_id", "payload"],
        eq("event_type", "reward") & ~eq("worker_binding_key", ENVIRONMENT_WORKER),
    )
    paths: dict[str, list[dict]] = defaultdict(list)
    depth: dict[str, int] = defaultdict(int)
    backtracks: dict[str, int] = defaultdict(int)
    for row in actions:
        run = runs.run_of(row["task_execution_id"])
        payload = row["payload"]
        paths[run].append({"prefix": payload.get("path"), "step": row["sequence"]})
        depth[run] = max(depth[run], payload.get("depth", 0))
        backtracks[run] += 1 if payload.get("backtrack") is True else 0
    snapshots: dict[str, list] = defaultdict(list)
    for row in rewards:
        snapshots[runs.run_of(row["task_execution_id"])].append(row["payload"].get("value"))
    return [
        {
            "run_id": run,
            "action_paths": paths.get(run, []),
            "depth": depth.get(run, 0),
            "backtracks": backtracks.get(run, 0),
            "reward_snapshots": snapshots.get(run, []),
        }
        for run in runs.runs
    ]


_BUILDERS: dict[str, Callable[[TrackedReader], list[dict]]] = {
    "final_score": _final_score,
    "token_step_rl": _token_step_rl,
    "per_worker": _per_worker,
    "tool_call_safety": _tool_call_safety,
    "proof_search_summary": _proof_search_summary,
    "search_tree": _search_tree,
}


# ---------------------------------------------------------------------------
# custom views


def _reduce(values: list, how: str):
    if how == "latest":
        return values[-1] if values else None
    if how == "first":
        return values[0] if values else None
    if how == "list":
        return values
    if how == "count":
        return len(values)
    return sum(v for v in values if isinstance(v, (int, float)) and not isinstance(v, bool))


def _custom(reader: TrackedReader, spec: ViewSpec) -> list[dict]:
    runs = run_index(reader)
    columns: dict[str, dict[str, Any]] = {}
    event_run: dict[str, str] | None = None
    for src in spec.column_plan:
        if src.stream not in ("nodes", "events", "annotations", "mutations") or not reader.has_column(
            src.stream, src.column
        ):
            if spec.strict:
                raise MissingSourceField(f"{src.stream}.{src.column}")
            reader.omit(f"{src.stream}.{src.column}")
            columns[src.output] = {}
            continue
        values: dict[str, list] = defaultdict(list)
        if src.stream == "nodes":
            for row in reader.read_rows("nodes", ["node_id", src.column], is_in("node_id", runs.runs)):
                values[row["node_id"]].append(row[src.column])
        elif src.stream == "events":
            flt = eq("event_type", src.event_type) if src.event_type else None
            cols = ["task_execution_id", src.column]
            rows = reader.read_rows("events", cols, flt) if flt else reader.read_rows("events", cols)
            for row in rows:
                values[runs.run_of(row["task_execution_id"])].append(row[src.column])
        else:
            flt = eq("namespace", src.namespace) if src.stream == "annotations" and src.namespace else None
            cols = ["target_type", "target_id", src.column]
            rows = reader.read_rows(src.stream, cols, flt) if flt else reader.read_rows(src.stream, cols)
            for row in rows:
                if row["target_type"] == "node":
                    run = runs.root_of.get(row["target_id"])
                elif row["target_type"] == "event":
                    if event_run is None:
                        event_run = {
                            r["event_id"]: runs.run_of(r["task_execution_id"])
                            for r in reader.read_rows("events", ["event_id", "task_execution_id"])
                        }
                    run = event_run.get(row["target_id"])
                else:
                    run = None
                if run is not None:
                    values[run].append(row[src.column])
        if src.key is not None:
            values = defaultdict(
                list, {r: [v.get(src.key) if isinstance(v, dict) else None for v in vs] for r, vs in values.items()}
            )
        columns[src.output] = {run: _reduce(values.get(run, []), src.reduce) for run in runs.runs}
    out = []
    for run in runs.runs:
        row = {"run_id": run, "terminal_status": runs.status[run]}
        for src in spec.column_plan:
            row[src.output] = columns[src.output].get(run)
        out.append(row)
    return out


def project(card: CardBundle, spec: "ViewSpec | str") -> ViewTable:
    """Project ``card`` onto a view; the table carries its drops manifest."""
    spec = as_spec(spec)
    reader = open_tracked(card, f"view:{spec.name}")
    if spec.is_builtin:
        rows = _BUILDERS[spec.name](reader)
        columns = tuple(c.output for c in spec.column_plan)
    else:
        rows = _custom(reader, spec)
        columns = ("run_id", "terminal_status") + tuple(c.output for c in spec.column_plan)
    for descriptor in spec.collapses:
        reader.collapse(descriptor)
    for loss in spec.losses:
        reader.declare_loss(loss)
    return ViewTable(spec.name, columns, rows, reader.finish())


# ---------------------------------------------------------------------------
# derived readouts


def tool_channel_divergence(table: ViewTable) -> tuple[int, int, float]:
    """(text-safe runs with a forbidden call, text-safe runs, rate)."""
    safe = [r for r in table.rows if r["text_safe"] is True]
    diverged = sum(1 for r in safe if r["forbidden_call_count"] > 0)
    return diverged, len(safe), (diverged / len(safe) if safe else float("nan"))


def unique_actions(table: ViewTable) -> dict[str, int]:
    """Distinct action-path prefixes per run in a search_tree table."""
    return {r["run_id"]: len({tuple(p["prefix"]) for p in r["action_paths"]}) for r in table.rows}


# ---------------------------------------------------------------------------
# downstream quantities: oracles over full cards, and readouts from tables


def _card_runs(card: CardBundle) -> tuple[list[str], dict[str, str], dict[str, str]]:
    roots: list[str] = []
    root_of: dict[str, str] = {}
    for node in card.rows("nodes"):
        if node.parent_id is None:
            roots.append(node.node_id)
            root_of[node.node_id] = node.node_id
        else:
            root_of[node.node_id] = root_of.get(node.parent_id, node.parent_id)
    event_run = {e.event_id: root_of.get(e.task_execution_id, e.task_execution_id) for e in card.rows("events")}
    return roots, root_of, event_run


def _latest(card: CardBundle, namespace: str, target_type: str) -> dict[str, dict]:
    best: dict[str, tuple[int, dict]] = {}
    for a in card.rows("annotations"):
        if a.namespace == namespace and a.target_type == target_type:
            if a.target_id not in best or a.sequence > best[a.target_id][0]:
                best[a.target_id] = (a.sequence, a.payload)
    return {k: v[1] for k, v in best.items()}


def _oracle_return(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    out = {r: 0 for r in roots}
    for e in card.rows("events"):
        if e.event_type == "reward":
            out[event_run[e.event_id]] = out.get(event_run[e.event_id], 0) + e.payload["value"]
    return out


def _oracle_timing(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    out: dict[str, list] = {r: [] for r in roots}
    for e in card.rows("events"):
        out.setdefault(event_run[e.event_id], []).append((e.event_id, e.started_at, e.completed_at))
    return {r: sorted(v) for r, v in out.items()}


def _oracle_worker_flow(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    out: dict[str, dict] = {r: {} for r in roots}
    for e in card.rows("events"):
        if e.event_type in FLOW_TYPES and e.worker_binding_key != ENVIRONMENT_WORKER:
            flow = out.setdefault(event_run[e.event_id], {})
            flow.setdefault(e.worker_binding_key, []).append((e.sequence, e.event_type, e.event_id))
    return out


def _oracle_tool_safety(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    flags = _latest(card, SAFETY_CALL_NAMESPACE, "event")
    responses = _latest(card, SAFETY_RESPONSE_NAMESPACE, "node")
    forbidden: dict[str, list] = {r: [] for r in roots}
    for e in card.rows("events"):
        if e.event_type == "tool_call" and flags.get(e.event_id, {}).get("forbidden") is True:
            forbidden[event_run[e.event_id]].append(e.event_id)
    return {r: (tuple(sorted(forbidden[r])), responses.get(r, {}).get("refused")) for r in roots}


def _oracle_proof_cost(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    steps = {r: 0 for r in roots}
    starts: dict[str, list] = {r: [] for r in roots}
    ends: dict[str, list] = {r: [] for r in roots}
    for e in card.rows("events"):
        run = event_run[e.event_id]
        if e.event_type in STEP_TYPES:
            steps[run] += 1
        if e.started_at is not None:
            starts[run].append(e.started_at)
        if e.completed_at is not None:
            ends[run].append(e.completed_at)
    return {r: (steps[r], _elapsed_seconds(starts[r], ends[r])) for r in roots}


def _oracle_search_shape(card: CardBundle) -> dict:
    roots, _, event_run = _card_runs(card)
    prefixes: dict[str, set] = {r: set() for r in roots}
    depth = {r: 0 for r in roots}
    backtracks = {r: 0 for r in roots}
    for e in card.rows("events"):
        if e.event_type == "search_action":
            run = event_run[e.event_id]
            prefixes[run].add(tuple(e.payload["path"]))
            depth[run] = max(depth[run], e.payload["depth"])
            backtracks[run] += e.payload["backtrack"] is True
    return {r: (len(prefixes[r]), depth[r], backtracks[r]) for r in roots}


def _has(table: ViewTable, *columns: str) -> bool:
    return all(c in table.columns for c in columns)


def _per_run_rows(table: ViewTable, fn) -> dict:
    return {run: fn(rows) for run, rows in table.by_run().items()}


def _table_return(table: ViewTable):
    if _has(table, "final_score"):
        return {r["run_id"]: r["final_score"] for r in table.rows}
    if _has(table, "outcome"):
        return {r["run_id"]: r["outcome"] for r in table.rows}
    if _has(table, "reward", "step_index"):
        return _per_run_rows(table, lambda rows: sum(r["reward"] for r in rows))
    if _has(table, "records"):
        return _per_run_rows(
            table,
            lambda rows: sum(rec["payload"]["value"] for r in rows for rec in r["records"] if rec["event_type"] == "reward"),
        )
    if _has(table, "reward_snapshots"):
        return {r["run_id"]: sum(r["reward_snapshots"]) for r in table.rows}
    return None


def _table_timing(table: ViewTable):
    if _has(table, "records"):
        return _per_run_rows(
            table,
            lambda rows: sorted(
                (rec["event_id"], rec["started_at"], rec["completed_at"]) for r in rows for rec in r["records"]
            ),
        )
    if _has(table, "duration_proxy"):
        return _per_run_rows(table, lambda rows: [r["duration_proxy"] for r in rows])
    if _has(table, "elapsed_time"):
        return {r["run_id"]: r["elapsed_time"] for r in table.rows}
    if _has(table, "action_paths"):
        return {r["run_id"]: [p["step"] for p in r["action_paths"]] for r in table.rows}
    return None


def _table_worker_flow(table: ViewTable):
    if _has(table, "records", "worker_binding_key"):
        out: dict[str, dict] = {}
        for r in table.rows:
            flow = [(rec["sequence"], rec["event_type"], rec["event_id"]) for rec in r["records"] if rec["event_type"] in FLOW_TYPES]
            out.setdefault(r["run_id"], {})
            if flow:
                out[r["run_id"]][r["worker_binding_key"]] = flow
        return out
    if _has(table, "tool_calls"):
        out = {}
        for r in table.rows:
            flow: dict[str, list] = {}
            for c in r["tool_calls"]:
                flow.setdefault(c["worker_binding_key"], []).append((c["sequence"], "tool_call", c["event_id"]))
            out[r["run_id"]] = flow
        return out
    return None


def _table_tool_safety(table: ViewTable):
    if _has(table, "tool_calls", "refused"):
        return {
            r["run_id"]: (tuple(sorted(c["event_id"] for c in r["tool_calls"] if c["forbidden"] is True)), r["refused"])
            for r in table.rows
        }
    if _has(table, "step_status"):
        return _per_run_rows(table, lambda rows: [r["step_status"] for r in rows])
    if _has(table, "records"):
        return _per_run_rows(
            table,
            lambda rows: sorted(rec["event_id"] for r in rows for rec in r["records"] if rec["event_type"] == "tool_call"),
        )
    return None


def _table_proof_cost(table: ViewTable):
    if _has(table, "realised_steps", "elapsed_time"):
        return {r["run_id"]: (r["realised_steps"], r["elapsed_time"]) for r in table.rows}
    return None


def _table_search_shape(table: ViewTable):
    if _has(table, "action_paths", "depth", "backtracks"):
        return {
            r["run_id"]: (len({tuple(p["prefix"]) for p in r["action_paths"]}), r["depth"], r["backtracks"])
            for r in table.rows
        }
    if _has(table, "realised_steps"):
        return {r["run_id"]: r["realised_steps"] for r in table.rows}
    return None


@dataclass(frozen=True)
class Quantity:
    name: str
    oracle: Callable[[CardBundle], Any]
    from_table: Callable[[ViewTable], Any]
    note: str


QUANTITY_REGISTRY: dict[str, Quantity] = {
    "return": Quantity("return", _oracle_return, _table_return, "sum of reward values per run"),
    "timing": Quantity("timing", _oracle_timing, _table_timing, "start and completion time of every event"),
    "worker_flow": Quantity(
        "worker_flow", _oracle_worker_flow, _table_worker_flow, "ordered message and action records per worker"
    ),
    "tool_safety": Quantity(
        "tool_safety", _oracle_tool_safety, _table_tool_safety, "forbidden tool calls and refusal per run"
    ),
    "proof_cost": Quantity("proof_cost", _oracle_proof_cost, _table_proof_cost, "realised steps and elapsed time"),
    "search_shape": Quantity(
        "search_shape", _oracle_search_shape, _table_search_shape, "unique prefixes, depth and backtracks"
    ),
}


@dataclass(frozen=True)
class PreservationStatus:
    quantity: str
    status: str  # preserved | partial | erased
    note: str = ""

    def to_json(self) -> dict:
        return {"quantity": self.quantity, "status": self.status, "note": self.note}


def preservation_status(card: CardBundle, spec: "ViewSpec | str", quantity: str) -> PreservationStatus:
    """Decide preservation by recomputing ``quantity`` from the view table alone."""
    q = QUANTITY_REGISTRY.get(quantity)
    if q is None:
        raise UnknownQuantity(quantity)
    table = project(card, spec)
    try:
        from_view = q.from_table(table)
    except (KeyError, TypeError, RolloutCardError):
        from_view = _Unusable
    if from_view is None:
        return PreservationStatus(quantity, "erased", f"view carries no field for {q.note}")
    if from_view is not _Unusable and from_view == q.oracle(card):
        return PreservationStatus(quantity, "preserved", q.note)
    return PreservationStatus(quantity, "partial", f"view keeps only a proxy or subset of {q.note}")


class _UnusableType:
    pass


_Unusable = _UnusableType()


def preservation_matrix(card: CardBundle, views=BUILTIN_VIEWS, quantities=QUANTITIES) -> dict[str, dict[str, str]]:
    return {v: {q: preservation_status(card, v, q).status for q in quantities} for v in views}


# reference matrix the operational test is checked against
EXPECTED_MATRIX: dict[str, dict[str, str]] = {
    "final_score": dict(zip(QUANTITIES, ("preserved", "erased", "erased", "erased", "erased", "erased"))),
    "token_step_rl": dict(zip(QUANTITIES, ("preserved", "partial", "erased", "partial", "erased", "erased"))),
    "per_worker": dict(zip(QUANTITIES, ("partial", "partial", "preserved", "partial", "erased", "erased"))),
    "tool_call_safety": dict(zip(QUANTITIES, ("erased", "erased", "partial", "preserved", "erased", "erased"))),
    "proof_search_summary": dict(zip(QUANTITIES, ("preserved", "partial", "erased", "erased", "preserved", "partial"))),
    "search_tree": dict(zip(QUANTITIES, ("partial", "partial", "erased", "erased", "erased", "preserved"))),
}

"""Deterministic synthetic cards, named arithmetic fixtures and defect injection.

All randomness comes from one ``random.Random`` seeded explicitly, so a
profile or fixture name fully determines the bytes written.
"""

from __future__ import annotations

import random
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import jsontext
from .blobs import sha256_hex
from .bundle import BLOB_DIR, MANIFEST_NAME, Carrier, split_lines, stream_file, write_bundle
from .errors import InvalidProfile, UnknownDefectClass, UnknownFixture
from .jsontext import JsonFloat
from .model import (
    STREAM_NAMES,
    AnnotationRow,
    CardBuilder,
    CardBundle,
    EdgeRow,
    EventRow,
    Manifest,
    MutationRow,
    parse_row,
    serialize_row,
    tombstone,
)

BUCKETS = ("ok", "failed", "errored", "missing", "unparseable")
TOOLS = ("search", "open_file", "run_tests", "edit_file", "submit")

DEFECT_CLASSES = (
    "LAYOUT",
    "HASH_MISMATCH",
    "SCHEMA_VIOLATION",
    "SEQUENCE_NOT_MONOTONIC",
    "MUTATION_SEQUENCE_NOT_MONOTONIC",
    "ANNOTATION_SEQUENCE_NOT_MONOTONIC",
    "PARENT_LEVEL_INCONSISTENT",
    "DANGLING_BLOB_REF",
    "EDGE_CYCLE",
    "APPEND_ONLY_VIOLATED",
)


def exact_counts(mix: dict[str, float], total: int) -> dict[str, int]:
    """Integer counts proportional to ``mix`` that sum to ``total`` (largest remainder)."""
    raw = {k: mix[k] * total for k in mix}
    counts = {k: int(v) for k, v in raw.items()}
    short = total - sum(counts.values())
    order = sorted(mix, key=lambda k: (-(raw[k] - counts[k]), BUCKETS.index(k) if k in BUCKETS else 99))
    for k in order[:short]:
        counts[k] += 1
    return counts


def _as_range(value, what: str) -> tuple[int, int]:
    lo, hi = (value, value) if isinstance(value, int) else tuple(value)
    if not (isinstance(lo, int) and isinstance(hi, int)) or lo < 1 or hi < lo:
        raise InvalidProfile(f"{what} must be a positive int or (min, max) range, got {value!r}")
    return lo, hi


@dataclass(frozen=True)
class FixtureProfile:
    seed: int = 0
    runs: int = 1
    steps_per_run: Any = (1, 3)
    worker_count: Any = (1, 2)
    failure_mix: dict = field(default_factory=lambda: {"ok": 1.0})
    annotation_namespaces: tuple[str, ...] = ("lab.notes",)
    edge_density: float = 0.5

    def normalized_mix(self) -> dict[str, float]:
        mix = dict(self.failure_mix)
        unknown = set(mix) - set(BUCKETS)
        if unknown:
            raise InvalidProfile(f"unknown failure buckets {sorted(unknown)}; use {BUCKETS}")
        if any(v < 0 for v in mix.values()):
            raise InvalidProfile("failure_mix proportions must be non-negative")
        if "ok" not in mix:
            mix["ok"] = 1.0 - sum(mix.values())
        if mix["ok"] < -1e-9 or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise InvalidProfile(f"failure_mix must sum to 1, got {sum(mix.values())}")
        mix["ok"] = max(mix["ok"], 0.0)
        return {k: mix[k] for k in BUCKETS if k in mix}

    def validate(self) -> None:
        if not isinstance(self.runs, int) or self.runs < 0:
            raise InvalidProfile(f"runs must be a non-negative int, got {self.runs!r}")
        _as_range(self.steps_per_run, "steps_per_run")
        _as_range(self.worker_count, "worker_count")
        if not 0.0 <= self.edge_density <= 1.0:
            raise InvalidProfile("edge_density must lie in [0, 1]")
        self.normalized_mix()


def _episode(b: CardBuilder, rng: random.Random, idx: int, bucket: str, steps: int, workers: int, profile) -> None:
    root = f"run{idx:05d}"
    b.add_node(root, status="running", task_key=f"task-{idx}")
    names = [f"agent-{k}" for k in range(workers)]
    children = []
    for k, worker in enumerate(names):
        child = f"{root}.w{k}"
        b.add_node(child, parent_id=root, status="pending", task_key=f"task-{idx}", worker=worker)
        children.append(child)
    for i in range(len(children)):
        for j in range(i + 1, len(children)):
            if rng.random() < profile.edge_density:
                b.add_edge(children[i], children[j], status="satisfied")

    path: list[str] = []
    total = 0.0
    first_message = None
    for s in range(steps):
        k = rng.randrange(workers)
        node, worker, turn = children[k], names[k], f"t{s}"
        msg = b.add_event(node, "message", {"text": f"plan for step {s}"}, worker=worker, turn_id=turn,
                          duration_ms=rng.randint(1, 40))
        first_message = first_message or msg
        b.add_event(node, "model_output", {"text": f"calling a tool at step {s}"}, worker=worker, turn_id=turn,
                    duration_ms=rng.randint(1, 400))
        call = b.add_event(
            node,
            "tool_call",
            {"tool": rng.choice(TOOLS), "arguments": {"arg": rng.randint(0, 9)}, "call_id": f"c{s}"},
            worker=worker,
            turn_id=turn,
            duration_ms=rng.randint(1, 40),
        )
        forbidden = rng.random() < 0.2
        b.annotate("event", call.event_id, "safety.tool_call", {"forbidden": forbidden})
        b.add_event(node, "tool_result", {"content": f"result {s}"}, worker=worker, turn_id=turn,
                    duration_ms=rng.randint(1, 900))
        backtrack = len(path) >= 2 and rng.random() < 0.3
        path = path[:-1] if backtrack else path + [f"a{rng.randrange(4)}"]
        b.add_event(node, "search_action", {"path": list(path), "depth": len(path), "backtrack": backtrack},
                    worker=worker, turn_id=turn, duration_ms=rng.randint(1, 20))
        reward = rng.choice((0.0, 0.25, 0.5))
        total += reward
        b.add_event(node, "reward", {"value": reward, "step_status": "flagged" if forbidden else "ok"},
                    worker=worker, turn_id=turn)
    for child in children:
        b.set_status(child, "succeeded", old="pending")
    proof = b.put_blob(f"proof sketch for task {idx}\n".encode(), "text/plain; charset=utf-8")
    b.add_event(root, "proof", {"text": proof}, worker=names[0], duration_ms=rng.randint(1, 60))
    b.add_event(root, "env_state", {"state": {"solved": bucket == "ok", "steps": steps}})
    terminal = rng.choice((0.25, 0.5, 0.75, 1.0))
    total += terminal
    b.add_event(root, "reward", {"value": terminal})
    b.annotate("node", root, "safety.response", {"text_safe": rng.random() < 0.8, "refused": rng.random() < 0.3})
    for ns in profile.annotation_namespaces:
        b.annotate("node", root, ns, {"note": f"episode {idx}", "v": JsonFloat(f"{rng.randint(0, 99) / 10:.2f}")})
    if first_message is not None and rng.random() < 0.1:
        b.mutate("tombstone", "event", first_message.event_id, tombstone(), actor="curator", reason="redacted")

    if bucket == "errored":
        b.set_status(root, "errored", old="running", reason="worker crashed")
        return
    b.set_status(root, "failed" if bucket == "failed" else "succeeded", old="running")
    if bucket in ("ok", "failed"):
        b.annotate("node", root, "score", {"value": total})
    elif bucket == "unparseable":
        b.annotate("node", root, "score", {"value": "N/A"})


def gen_card(profile: FixtureProfile) -> CardBundle:
    """A conformant card with ``profile.runs`` fully populated episodes."""
    profile.validate()
    rng = random.Random(profile.seed)
    counts = exact_counts(profile.normalized_mix(), profile.runs)
    buckets = [name for name in BUCKETS for _ in range(counts.get(name, 0))]
    rng.shuffle(buckets)
    s_lo, s_hi = _as_range(profile.steps_per_run, "steps_per_run")
    w_lo, w_hi = _as_range(profile.worker_count, "worker_count")
    b = CardBuilder(f"synth-{profile.seed}", extra={"generator": "rollout_cards.synth", "seed": profile.seed})
    for idx, bucket in enumerate(buckets):
        _episode(b, rng, idx, bucket, rng.randint(s_lo, s_hi), rng.randint(w_lo, w_hi), profile)
    return b.build()


# ---------------------------------------------------------------------------
# named fixtures


@dataclass
class NamedFixture:
    name: str
    batches: dict[str, list[CardBundle]]
    gold: dict
    rules: list[str]

    def only_card(self, system: str | None = None) -> CardBundle:
        system = system or next(iter(self.batches))
        (card,) = self.batches[system]
        return card


def _swebench_gap(rng: random.Random) -> NamedFixture:
    shape = {"agentless": (196, 496), "swe-agent": (118, 450)}
    batches = {}
    for system, (resolved, submitted) in shape.items():
        labels = [1.0] * resolved + [0.0] * (submitted - resolved) + [None] * (500 - submitted)
        rng.shuffle(labels)
        b = CardBuilder(f"swebench-{system}")
        for i, label in enumerate(labels):
            run = f"{system}-{i:03d}"
            b.add_node(run, status="running", task_key=f"instance-{i:03d}")
            if label is None:
                b.set_status(run, "failed", old="running", reason="no patch submitted")
                continue
            b.add_event(run, "model_output", {"text": f"diff --git a/f{i}.py b/f{i}.py"}, worker="agent")
            b.set_status(run, "succeeded", old="running")
            b.annotate("node", run, "score", {"value": label})
        batches[system] = [b.build()]
    gold = {
        "runs": 500,
        "resolved": {s: v[0] for s, v in shape.items()},
        "submitted": {s: v[1] for s, v in shape.items()},
        "missing": {s: 500 - v[1] for s, v in shape.items()},
        "gap_inclusive_pp": 15.6,
        "gap_exclusive_pp": 13.3,
        "convention_share_pp": 2.3,
    }
    return NamedFixture("swebench_gap", batches, gold, ["mean@1:missing=fail", "mean@1:missing=exclude"])


MEDAL_COUNTS = {"gold": 133, "silver": 41, "bronze": 58, "above_median": 110, "below": 658}


def _mlebench_medal(rng: random.Random) -> NamedFixture:
    tiers = [t for t, n in MEDAL_COUNTS.items() for _ in range(n)]
    rng.shuffle(tiers)
    b = CardBuilder("mlebench")
    for i, tier in enumerate(tiers):
        run = f"comp-{i:04d}"
        b.add_node(run, status="running", task_key=f"competition-{i % 75}")
        b.set_status(run, "succeeded", old="running")
        b.annotate("node", run, "medal", {"tier": tier})
    gold = {
        "submissions": 1000,
        "tiers": MEDAL_COUNTS,
        "above_median_rate": 0.342,
        "gold_only_rate": 0.133,
        "delta_pp": 20.9,
    }
    return NamedFixture(
        "mlebench_medal",
        {"mle-agent": [b.build()]},
        gold,
        ["threshold@1:passing=gold+silver+bronze+above_median", "threshold@1:passing=gold"],
    )


# exact / reordered / wrong trajectories per 1000
TAU_SHAPE = {"gpt-4o": (431, 169, 400), "claude-3.5-sonnet": (480, 80, 440)}


def _tau_calls(i: int) -> list[dict]:
    return [
        {"tool": "find_user", "arguments": {"user": f"u{i}"}},
        {"tool": "update_order", "arguments": {"order": f"o{i}", "status": "exchanged"}},
        {"tool": "notify", "arguments": {"user": f"u{i}"}},
    ]


def _taubench_graders(rng: random.Random) -> NamedFixture:
    batches = {}
    for system, (exact, reordered, wrong) in TAU_SHAPE.items():
        kinds = ["exact"] * exact + ["reordered"] * reordered + ["wrong"] * wrong
        rng.shuffle(kinds)
        b = CardBuilder(f"taubench-{system}")
        for i, kind in enumerate(kinds):
            run = f"traj-{i:04d}"
            gold_calls = _tau_calls(i)
            initial = {"orders": {f"o{i}": "pending"}, "notified": []}
            gold_state = {"orders": {f"o{i}": "exchanged"}, "notified": [f"u{i}"]}
            b.add_node(run, status="running", task_key=f"retail-{i % 115}")
            b.annotate("node", run, "gold", {"actions": gold_calls, "state": gold_state})
            b.annotate("node", run, "env", {"initial_state": initial})
            if kind == "exact":
                calls, final = gold_calls, gold_state
            elif kind == "reordered":
                calls, final = [gold_calls[2], gold_calls[0], gold_calls[1]], gold_state
            else:
                calls = [gold_calls[0], {"tool": "cancel_order", "arguments": {"order": f"o{i}"}}]
                final = {"orders": {f"o{i}": "cancelled"}, "notified": []}
            for call in calls:
                b.add_event(run, "tool_call", dict(call), worker="agent")
                b.add_event(run, "tool_result", {"content": "ok"}, worker="agent")
            b.add_event(run, "env_state", {"state": final})
            b.set_status(run, "succeeded", old="running")
        batches[system] = [b.build()]
    gold = {
        "trajectories": 1000,
        "shape": {s: dict(zip(("exact", "reordered", "wrong"), v)) for s, v in TAU_SHAPE.items()},
        "db_state_rate": {s: (v[0] + v[1]) / 1000 for s, v in TAU_SHAPE.items()},
        "action_sequence_rate": {s: v[0] / 1000 for s, v in TAU_SHAPE.items()},
        "rule_gap_pp": {"gpt-4o": 16.9, "claude-3.5-sonnet": 8.0},
        "inversions": 1,
    }
    return NamedFixture(
        "taubench_graders",
        batches,
        gold,
        ["trajectory@1:success=db_state", "trajectory@1:success=action_sequence"],
    )


# (rule-based label, judge label) -> count; agreements fill the rest of 5,064
BROWSECOMP_PLANT = {
    ("correct", "incorrect"): 223,
    ("incorrect", "correct"): 25,
    ("correct", "INVALID"): 13,
    ("incorrect", "INVALID"): 13,
}
BROWSECOMP_TOTAL = 5064
BROWSECOMP_AGREE_CORRECT = 1200


def _browsecomp_judges(rng: random.Random) -> NamedFixture:
    cells = dict(BROWSECOMP_PLANT)
    cells[("correct", "correct")] = BROWSECOMP_AGREE_CORRECT
    cells[("incorrect", "incorrect")] = BROWSECOMP_TOTAL - sum(cells.values())
    pairs = [pair for pair, n in cells.items() for _ in range(n)]
    rng.shuffle(pairs)
    b = CardBuilder("browsecomp")
    for i, (rule_label, judge_label) in enumerate(pairs):
        run = f"q-{i:04d}"
        answer = f"Answer {i}"
        b.add_node(run, status="running", task_key=f"question-{i}")
        b.annotate("node", run, "task", {"gold_answer": answer})
        # a correct prediction differs only in case and spacing, which normalization removes
        predicted = f"  answer   {i} " if rule_label == "correct" else f"answer {i + 7}"
        b.add_event(run, "final_answer", {"text": predicted}, worker="agent")
        b.set_status(run, "succeeded", old="running")
        b.annotate("node", run, "judge", {"verdict": judge_label, "grader_model": "recorded"})
    rule_correct = sum(n for (r, _), n in cells.items() if r == "correct")
    judge_correct = sum(n for (_, j), n in cells.items() if j == "correct")
    gold = {
        "answers": BROWSECOMP_TOTAL,
        "disagreements": sum(BROWSECOMP_PLANT.values()),
        "invalid_verdicts": sum(n for (_, j), n in cells.items() if j == "INVALID"),
        "rule_based_correct": rule_correct,
        "judge_correct": judge_correct,
        "gap_pp": (rule_correct - judge_correct) / BROWSECOMP_TOTAL * 100,
    }
    return NamedFixture(
        "browsecomp_judges",
        {"browsecomp-agent": [b.build()]},
        gold,
        ["judged@1:grader=rule_based", "judged@1:grader=judge,unparseable=coerce(incorrect)"],
    )


TOOLSAFETY_RUNS = 4855
TOOLSAFETY_FORBIDDEN = 1002
TOOLSAFETY_REFUSED = 997


def _gap_toolsafety(rng: random.Random) -> NamedFixture:
    kinds = (
        ["diverged_refused"] * TOOLSAFETY_REFUSED
        + ["diverged"] * (TOOLSAFETY_FORBIDDEN - TOOLSAFETY_REFUSED)
        + ["clean"] * (TOOLSAFETY_RUNS - TOOLSAFETY_FORBIDDEN)
    )
    rng.shuffle(kinds)
    b = CardBuilder("gap-toolsafety")
    for i, kind in enumerate(kinds):
        run = f"prompt-{i:04d}"
        b.add_node(run, status="running", task_key=f"prompt-{i}", worker="agent")
        b.add_event(run, "message", {"text": "I will not help with that." if kind != "clean" else "Sure."},
                    worker="agent")
        calls = rng.randint(1, 2)
        forbidden_at = rng.randrange(calls) if kind != "clean" else -1
        for c in range(calls):
            ev = b.add_event(run, "tool_call", {"tool": rng.choice(TOOLS), "arguments": {"n": c}}, worker="agent")
            b.annotate("event", ev.event_id, "safety.tool_call", {"forbidden": c == forbidden_at})
        b.set_status(run, "succeeded", old="running")
        b.annotate("node", run, "safety.response", {"text_safe": True, "refused": kind == "diverged_refused"})
    gold = {
        "text_safe_runs": TOOLSAFETY_RUNS,
        "forbidden_runs": TOOLSAFETY_FORBIDDEN,
        "refused_among_forbidden": TOOLSAFETY_REFUSED,
        "divergence_rate": TOOLSAFETY_FORBIDDEN / TOOLSAFETY_RUNS,
    }
    # read through the tool_call_safety view; there is no score to compare rules on
    return NamedFixture("gap_toolsafety", {"gap-agent": [b.build()]}, gold, [])


# final word-level reward in tenths; the first five pairs tie
TOT_TIED = (3, 3, 3, 4, 4)
TOT_REWARDS = {
    "no_prune": TOT_TIED + (4, 4) + (3,) * 13,
    "prune": TOT_TIED + (5,) * 11 + (4,) * 4,
}
TOT_UNIQUE_TOTAL = {"no_prune": 973, "prune": 573}


def _dfs_actions(b: CardBuilder, rng: random.Random, run: str, unique: int) -> None:
    path: list[str] = []
    made = 0
    while made < unique:
        if len(path) >= 2 and rng.random() < 0.35:
            path = path[:-1]
            backtrack = True
        else:
            path = path + [f"w{made}"]
            made += 1
            backtrack = False
        b.add_event(run, "search_action", {"path": list(path), "depth": len(path), "backtrack": backtrack},
                    worker="dfs")


def _tot_prune_pairs(rng: random.Random) -> NamedFixture:
    batches = {}
    uniques: dict[str, list[int]] = {}
    for system in ("no_prune", "prune"):
        base, extra = divmod(TOT_UNIQUE_TOTAL[system], 20)
        counts = [base + 1] * extra + [base] * (20 - extra)
        rng.shuffle(counts)
        uniques[system] = counts
        b = CardBuilder(f"tot-{system}")
        for i in range(20):
            run = f"puzzle-{i:02d}"
            b.add_node(run, status="running", task_key=f"crossword-{i:02d}")
            _dfs_actions(b, rng, run, counts[i])
            reward = TOT_REWARDS[system][i] / 10
            b.add_event(run, "reward", {"value": reward})
            b.set_status(run, "succeeded", old="running")
            b.annotate("node", run, "score", {"value": reward})
        batches[system] = [b.build()]
    gold = {
        "pairs": 20,
        "tied_pairs": sum(1 for a, c in zip(TOT_REWARDS["no_prune"], TOT_REWARDS["prune"]) if a == c),
        "mean_reward": {s: sum(v) / 200 for s, v in TOT_REWARDS.items()},
        "unique_actions": uniques,
        "mean_unique_actions": {s: TOT_UNIQUE_TOTAL[s] / 20 for s in TOT_UNIQUE_TOTAL},
    }
    return NamedFixture("tot_prune_pairs", batches, gold, ["mean@1:missing=fail", "mean@1:missing=exclude"])


NAMED_FIXTURES = {
    "swebench_gap": _swebench_gap,
    "mlebench_medal": _mlebench_medal,
    "taubench_graders": _taubench_graders,
    "browsecomp_judges": _browsecomp_judges,
    "gap_toolsafety": _gap_toolsafety,
    "tot_prune_pairs": _tot_prune_pairs,
}


def gen_named(name: str, seed: int = 0) -> NamedFixture:
    try:
        builder = NAMED_FIXTURES[name]
    except KeyError:
        raise UnknownFixture(name) from None
    return builder(random.Random(f"{name}:{seed}"))


def write_fixture(fixture: NamedFixture, out_dir: str | Path) -> Path:
    """Write one bundle per card under ``out_dir/<name>/<system>`` plus gold.json."""
    root = Path(out_dir) / fixture.name
    for system, cards in fixture.batches.items():
        for i, card in enumerate(cards):
            target = root / system if len(cards) == 1 else root / system / f"card-{i:03d}"
            write_bundle(card, Carrier("directory", target))
    doc = {"name": fixture.name, "systems": sorted(fixture.batches), "rules": fixture.rules, "gold": fixture.gold}
    (root / "gold.json").write_text(jsontext.dumps_document(doc), encoding="utf-8")
    return root


# ---------------------------------------------------------------------------
# single-defect injection


@dataclass
class InjectedDefect:
    defect_class: str
    carrier: Carrier
    previous: Carrier | None = None


def _lines(root: Path, stream: str) -> list[str]:
    path = root / stream_file(stream)
    return [line.decode("utf-8") for line in split_lines(path.read_bytes())] if path.exists() else []


def _write_lines(root: Path, stream: str, lines: list[str]) -> None:
    (root / stream_file(stream)).write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))


def _rehash(root: Path) -> None:
    manifest = Manifest.from_text((root / MANIFEST_NAME).read_text(encoding="utf-8"))
    hashes = {
        s: sha256_hex((root / stream_file(s)).read_bytes())
        for s in STREAM_NAMES
        if (root / stream_file(s)).exists()
    }
    manifest = replace(manifest, stream_hashes=hashes)
    (root / MANIFEST_NAME).write_text(manifest.to_text(), encoding="utf-8")


def _append(root: Path, stream: str, *rows) -> None:
    _write_lines(root, stream, _lines(root, stream) + [serialize_row(r) for r in rows])


def _latest_ts(rows) -> str:
    stamps = [r.created_at for r in rows]
    return max(stamps) if stamps else "2025-01-01T00:00:00.000Z"


def inject_defect(card: CardBundle, defect_class: str, seed: int = 0, out_dir: str | Path | None = None) -> InjectedDefect:
    """Write ``card`` as a directory bundle carrying exactly one defect of ``defect_class``.

    ``"none"`` writes the card unchanged. For APPEND_ONLY_VIOLATED the
    clean card is written as ``previous`` and the defect lives in the
    later snapshot.
    """
    if defect_class not in DEFECT_CLASSES and defect_class != "none":
        raise UnknownDefectClass(defect_class)
    rng = random.Random(f"{defect_class}:{seed}")
    base = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="rcard-defect-"))
    root = base / "bundle"
    if root.exists():
        shutil.rmtree(root)
    write_bundle(card, Carrier("directory", root))
    rows = {s: [parse_row(s, line) for line in _lines(root, s)] for s in STREAM_NAMES}
    nodes, events, edges = rows["nodes"], rows["events"], rows["edges"]
    previous = None

    if defect_class == "none":
        return InjectedDefect(defect_class, Carrier("directory", root))

    if defect_class == "HASH_MISMATCH":
        stream = next((s for s in STREAM_NAMES if rows[s]), "events")
        lines = _lines(root, stream)
        if lines:
            lines[0] = "{ " + lines[0][1:]
        else:
            lines = []
            (root / stream_file(stream)).write_bytes(b"\n")
        if lines:
            _write_lines(root, stream, lines)
        return InjectedDefect(defect_class, Carrier("directory", root))

    if defect_class == "LAYOUT":
        # the manifest still lists the stream, so its absence is a layout break
        (root / stream_file("mutations")).unlink()
        return InjectedDefect(defect_class, Carrier("directory", root))

    if defect_class == "SCHEMA_VIOLATION":
        a = nodes[0].node_id if nodes else "n0"
        z = nodes[-1].node_id if nodes else "n1"
        bad = serialize_row(EdgeRow(a, z, "pending", _latest_ts(edges), _latest_ts(edges)))
        bad = bad.replace('"status":"pending"', '"status":"blocked"')
        _write_lines(root, "edges", _lines(root, "edges") + [bad])
    elif defect_class == "SEQUENCE_NOT_MONOTONIC":
        if events:
            e = rng.choice(events)
            dup = EventRow(f"{e.event_id}-dup", e.task_execution_id, e.worker_binding_key, e.sequence, "message",
                           {"text": "duplicate"}, started_at=e.started_at, completed_at=e.completed_at)
            _append(root, "events", dup)
        else:
            first = EventRow("dup-0", "t", "environment", 0, "message", {"text": "a"})
            _append(root, "events", first, replace(first, event_id="dup-1"))
    elif defect_class == "MUTATION_SEQUENCE_NOT_MONOTONIC":
        muts = rows["mutations"]
        target = ("node", nodes[0].node_id) if nodes else ("run", card.manifest.run_id)
        ts = _latest_ts(muts)
        seq = muts[-1].sequence if muts else 0
        extra = MutationRow(seq, "annotation_note", target[0], target[1], "curator", {"note": "late"}, "", ts)
        _append(root, "mutations", *(([] if muts else [extra]) + [extra]))
    elif defect_class == "ANNOTATION_SEQUENCE_NOT_MONOTONIC":
        anns = rows["annotations"]
        if anns:
            a = rng.choice(anns)
            _append(root, "annotations", replace(a, payload={"note": "late duplicate"}))
        else:
            a = AnnotationRow("run", card.manifest.run_id, "lab.notes", 0, {}, "2025-01-01T00:00:00.000Z")
            _append(root, "annotations", a, a)
    elif defect_class == "PARENT_LEVEL_INCONSISTENT":
        parents = {n.parent_id for n in nodes}
        leaves = [i for i, n in enumerate(nodes) if n.parent_id is not None and n.node_id not in parents]
        if not leaves:
            raise UnknownDefectClass(f"{defect_class}: card has no child node to corrupt")
        i = rng.choice(leaves)
        lines = _lines(root, "nodes")
        lines[i] = serialize_row(replace(nodes[i], level=nodes[i].level + 1))
        _write_lines(root, "nodes", lines)
    elif defect_class == "DANGLING_BLOB_REF":
        absent = b"this blob was never stored"
        ref = {"$blob": {"digest": sha256_hex(absent), "byte_length": len(absent)}}
        _append(root, "annotations",
                AnnotationRow("run", card.manifest.run_id, "defect.blob", 0, {"attachment": ref}, _latest_ts(rows["annotations"])))
    elif defect_class == "EDGE_CYCLE":
        ts = _latest_ts(edges)
        if edges:
            e = rng.choice(edges)
            _append(root, "edges", EdgeRow(e.target_node_id, e.source_node_id, "pending", ts, ts))
        else:
            if len(nodes) < 2:
                raise UnknownDefectClass(f"{defect_class}: card needs at least two nodes")
            a, z = nodes[0].node_id, nodes[1].node_id
            _append(root, "edges", EdgeRow(a, z, "pending", ts, ts), EdgeRow(z, a, "pending", ts, ts))
    elif defect_class == "APPEND_ONLY_VIOLATED":
        prev_root = base / "previous"
        if prev_root.exists():
            shutil.rmtree(prev_root)
        shutil.copytree(root, prev_root)
        previous = Carrier("directory", prev_root)
        stream = next((s for s in ("mutations", "annotations", "events", "nodes", "edges") if rows[s]), None)
        if stream is None:
            raise UnknownDefectClass(f"{defect_class}: card has no rows to rewrite")
        lines = _lines(root, stream)
        first = rows[stream][0]
        if stream == "mutations":
            lines[0] = serialize_row(replace(first, reason=(first.reason + " (edited)").strip()))
        else:
            lines[0] = serialize_row(replace(first, extras={**first.extras, "x_edited": True}))
        _write_lines(root, stream, lines)
    _rehash(root)
    return InjectedDefect(defect_class, Carrier("directory", root), previous)

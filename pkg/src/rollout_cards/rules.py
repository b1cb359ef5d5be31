"""Reporting rules with explicit failure handling and mandatory accounting.

A rule turns a batch of cards into one headline number. How missing
artefacts, error statuses and unparseable outputs are treated is never
implicit: every rule carries a ``FailurePolicy`` naming all four choices,
and every report carries the counts of runs that went each way.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

from . import jsontext
from .access import DropsManifest, TrackedReader, eq, merge_manifests, open_tracked
from .errors import (
    DuplicateRule,
    EmptyDenominator,
    MissingStateRecord,
    MissingVerdictColumn,
    UnknownTier,
)
from .model import CardBundle, Manifest
from .views import _final_score, latest_annotations, run_index

COUNT_AS_FAILURE = "count_as_failure"
EXCLUDE = "exclude_from_denominator"
PROPAGATE = "propagate"
MARK_SKIPPED = "mark_skipped"
GROUP_OFF = "off"
DROP_ZERO_VARIANCE = "drop_zero_variance_groups"

ON_MISSING = (COUNT_AS_FAILURE, EXCLUDE)
ON_ERROR = (COUNT_AS_FAILURE, EXCLUDE, "coerce_to_fixed", PROPAGATE)
ON_UNPARSEABLE = (COUNT_AS_FAILURE, "coerce_to_fixed", MARK_SKIPPED)
GROUP_FILTERS = (GROUP_OFF, DROP_ZERO_VARIANCE)

ERROR_STATUSES = frozenset({"errored"})
LABEL_VALUES = {"correct": 1.0, "incorrect": 0.0}

# raw outcome labels
SCORED = "scored"
MISSING = "missing"
ERROR = "error"
UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class CoerceToFixed:
    value: Any

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool) or not (isinstance(v, (int, float)) or v in LABEL_VALUES):
            raise ValueError(f"coerce_to_fixed needs a number or one of {sorted(LABEL_VALUES)}, got {v!r}")

    @property
    def number(self) -> float:
        return LABEL_VALUES[self.value] if isinstance(self.value, str) else float(self.value)

    def to_json(self) -> dict:
        return {"coerce_to_fixed": self.value}

    def __str__(self) -> str:
        return f"coerce_to_fixed({self.value})"


def _choice_to_json(choice):
    return choice.to_json() if isinstance(choice, CoerceToFixed) else choice


def _choice_from_json(obj):
    if isinstance(obj, dict) and set(obj) == {"coerce_to_fixed"}:
        return CoerceToFixed(obj["coerce_to_fixed"])
    return obj


@dataclass(frozen=True)
class FailurePolicy:
    """All four failure-handling choices; none has a default."""

    on_missing_artifact: str
    on_error_status: Any
    on_unparseable_output: Any
    group_variance_filter: str

    def __post_init__(self):
        def check(value, allowed, what):
            if isinstance(value, CoerceToFixed):
                ok = "coerce_to_fixed" in allowed
            else:
                ok = value in allowed and value != "coerce_to_fixed"
            if not ok:
                raise ValueError(f"{what} must be one of {allowed}, got {value!r}")

        check(self.on_missing_artifact, ON_MISSING, "on_missing_artifact")
        check(self.on_error_status, ON_ERROR, "on_error_status")
        check(self.on_unparseable_output, ON_UNPARSEABLE, "on_unparseable_output")
        check(self.group_variance_filter, GROUP_FILTERS, "group_variance_filter")

    def to_json(self) -> dict:
        return {
            "on_missing_artifact": self.on_missing_artifact,
            "on_error_status": _choice_to_json(self.on_error_status),
            "on_unparseable_output": _choice_to_json(self.on_unparseable_output),
            "group_variance_filter": self.group_variance_filter,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FailurePolicy":
        return cls(
            obj["on_missing_artifact"],
            _choice_from_json(obj["on_error_status"]),
            _choice_from_json(obj["on_unparseable_output"]),
            obj["group_variance_filter"],
        )


@dataclass(frozen=True)
class ReportingRuleEntry:
    name: str
    version: str
    config: dict
    input_view: str
    output_target: str
    policy: FailurePolicy
    drops: DropsManifest | None = field(default=None, compare=False)

    def __post_init__(self):
        # config must survive a trip through the manifest
        json.dumps(self.config, allow_nan=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.name, self.version)

    @property
    def label(self) -> str:
        return f"{self.name}@{self.version}"

    @property
    def scorer(self) -> str:
        return self.config.get("scorer", self.name)

    def with_drops(self, drops: DropsManifest) -> "ReportingRuleEntry":
        return replace(self, drops=drops)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "config": self.config,
            "input_view": self.input_view,
            "output_target": self.output_target,
            "policy": self.policy.to_json(),
            "drops": None if self.drops is None else self.drops.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReportingRuleEntry":
        return cls(
            obj["name"],
            obj["version"],
            dict(obj.get("config") or {}),
            obj["input_view"],
            obj["output_target"],
            FailurePolicy.from_json(obj["policy"]),
        )


class Registry:
    """Named, versioned rules; serializes into a manifest's rule_registry."""

    def __init__(self, entries: Iterable[ReportingRuleEntry] = ()):
        self._entries: dict[tuple[str, str], ReportingRuleEntry] = {}
        for entry in entries:
            self.register(entry)

    def register(self, entry: ReportingRuleEntry) -> "Registry":
        if entry.key in self._entries:
            raise DuplicateRule(entry.label)
        self._entries[entry.key] = entry
        return self

    def lookup(self, name: str, version: str) -> ReportingRuleEntry:
        return self._entries[(name, version)]

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self._entries.values()]

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> "Registry":
        return cls(ReportingRuleEntry.from_json(obj) for obj in manifest.rule_registry)

    def into_manifest(self, manifest: Manifest) -> Manifest:
        return replace(manifest, rule_registry=tuple(self.to_json()))


def register(registry: Registry, entry: ReportingRuleEntry) -> Registry:
    return registry.register(entry)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class FailureAccounting:
    attempted: int = 0
    scored: int = 0
    failed: int = 0
    errored: int = 0
    skipped: int = 0
    excluded: int = 0
    coerced: int = 0

    def __post_init__(self):
        total = self.scored + self.failed + self.errored + self.skipped + self.excluded
        if total != self.attempted:
            raise ValueError(f"accounting does not balance: {total} != attempted {self.attempted}")

    @property
    def denominator(self) -> int:
        return self.scored + self.failed + self.errored

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def summary(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.__dict__.items())


@dataclass(frozen=True)
class RunOutcome:
    run_id: str
    label: str  # scored | missing | error | unparseable
    raw: Any  # the underlying value or verdict text
    bucket: str  # scored | failed | errored | skipped | excluded
    contribution: float | None
    coerced: bool = False
    group: Any = None

    def to_json(self) -> dict:
        c = self.contribution
        return {
            "run_id": self.run_id,
            "label": self.label,
            "raw": self.raw,
            "bucket": self.bucket,
            "contribution": None if c is None or (isinstance(c, float) and math.isnan(c)) else c,
            "propagated": isinstance(c, float) and math.isnan(c),
            "coerced": self.coerced,
        }


@dataclass
class ScoreReport:
    rule: tuple[str, str]
    metric: str
    headline: float
    accounting: FailureAccounting
    per_run: list[RunOutcome]
    drops: DropsManifest
    policy: FailurePolicy

    def to_json(self) -> dict:
        return {
            "rule": {"name": self.rule[0], "version": self.rule[1]},
            "metric": self.metric,
            "headline": None if math.isnan(self.headline) else self.headline,
            "accounting": self.accounting.to_json(),
            "policy": self.policy.to_json(),
            "per_run": [r.to_json() for r in self.per_run],
            "drops": self.drops.to_json(),
        }

    def to_document(self) -> str:
        return jsontext.dumps_document(self.to_json())

    def summary_line(self) -> str:
        head = "nan" if math.isnan(self.headline) else f"{self.headline:.4f}"
        return f"{self.rule[0]}@{self.rule[1]} {self.metric}={head} {self.accounting.summary()}"


def recompute_headline(per_run: Iterable[RunOutcome]) -> float:
    """Headline from per-run contributions alone; excluded and skipped runs carry none."""
    values = [r.contribution for r in per_run if r.contribution is not None]
    if not values:
        raise EmptyDenominator("no run contributes to the denominator")
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# applying a policy


@dataclass(frozen=True)
class RawOutcome:
    label: str
    value: Any = None  # numeric score for scored outcomes
    raw: Any = None


def _apply(policy: FailurePolicy, run_id: str, outcome: RawOutcome, group: Any) -> RunOutcome:
    label = outcome.label
    raw = outcome.raw if outcome.raw is not None else outcome.value
    if label == SCORED:
        return RunOutcome(run_id, label, raw, "scored", float(outcome.value), group=group)
    if label == MISSING:
        if policy.on_missing_artifact == EXCLUDE:
            return RunOutcome(run_id, label, raw, "excluded", None, group=group)
        return RunOutcome(run_id, label, raw, "failed", 0.0, group=group)
    if label == ERROR:
        choice = policy.on_error_status
        if choice == EXCLUDE:
            return RunOutcome(run_id, label, raw, "excluded", None, group=group)
        if isinstance(choice, CoerceToFixed):
            return RunOutcome(run_id, label, raw, "errored", choice.number, coerced=True, group=group)
        if choice == PROPAGATE:
            return RunOutcome(run_id, label, raw, "errored", math.nan, group=group)
        return RunOutcome(run_id, label, raw, "errored", 0.0, group=group)
    if label == UNPARSEABLE:
        choice = policy.on_unparseable_output
        if isinstance(choice, CoerceToFixed):
            return RunOutcome(run_id, label, raw, "scored", choice.number, coerced=True, group=group)
        if choice == MARK_SKIPPED:
            return RunOutcome(run_id, label, raw, "skipped", None, group=group)
        return RunOutcome(run_id, label, raw, "failed", 0.0, group=group)
    raise ValueError(f"unknown outcome label {label!r}")


def _drop_zero_variance(per_run: list[RunOutcome]) -> list[RunOutcome]:
    groups: dict[Any, list[RunOutcome]] = {}
    for r in per_run:
        if r.group is not None and r.contribution is not None:
            groups.setdefault(r.group, []).append(r)
    flat = {
        g
        for g, members in groups.items()
        if not any(isinstance(m.contribution, float) and math.isnan(m.contribution) for m in members)
        and len({m.contribution for m in members}) == 1
    }
    return [
        replace(r, bucket="excluded", contribution=None) if r.group in flat and r.contribution is not None else r
        for r in per_run
    ]


def _report(
    entry: ReportingRuleEntry,
    per_run: list[RunOutcome],
    drops: DropsManifest,
) -> ScoreReport:
    if entry.policy.group_variance_filter == DROP_ZERO_VARIANCE:
        per_run = _drop_zero_variance(per_run)
    per_run = sorted(per_run, key=lambda r: r.run_id)
    counts = {"scored": 0, "failed": 0, "errored": 0, "skipped": 0, "excluded": 0}
    for r in per_run:
        counts[r.bucket] += 1
    accounting = FailureAccounting(
        attempted=len(per_run), coerced=sum(1 for r in per_run if r.coerced), **counts
    )
    if accounting.denominator == 0:
        raise EmptyDenominator(f"{entry.label}: policy leaves no run in the denominator ({accounting.summary()})")
    headline = recompute_headline(per_run)
    return ScoreReport(entry.key, entry.output_target, headline, accounting, per_run, drops, entry.policy)


def _run_key(card: CardBundle, run: str) -> str:
    return run if run == card.manifest.run_id else f"{card.manifest.run_id}/{run}"


def _groups(reader: TrackedReader, entry: ReportingRuleEntry) -> dict[str, Any]:
    if entry.policy.group_variance_filter != DROP_ZERO_VARIANCE:
        return {}
    namespace = entry.config.get("group_namespace", "group")
    key = entry.config.get("group_key", "id")
    return {run: payload.get(key) for run, payload in latest_annotations(reader, namespace).items()}


OutcomeFn = Callable[[TrackedReader, CardBundle, ReportingRuleEntry], dict[str, RawOutcome]]


def _score_batch(batch: list[CardBundle], entry: ReportingRuleEntry, outcomes_of: OutcomeFn) -> ScoreReport:
    per_run: list[RunOutcome] = []
    manifests = []
    for card in batch:
        reader = open_tracked(card, f"rule:{entry.label}")
        outcomes = outcomes_of(reader, card, entry)
        groups = _groups(reader, entry)
        manifests.append(reader.finish())
        for run, outcome in outcomes.items():
            per_run.append(_apply(entry.policy, _run_key(card, run), outcome, groups.get(run)))
    drops = merge_manifests(f"rule:{entry.label}", manifests)
    return _report(entry, per_run, drops)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


# ---------------------------------------------------------------------------
# the scorers


def _mean_outcomes(reader: TrackedReader, card: CardBundle, entry: ReportingRuleEntry) -> dict[str, RawOutcome]:
    out = {}
    for row in _final_score(reader):
        value = row["final_score"]
        if row["terminal_status"] in ERROR_STATUSES:
            out[row["run_id"]] = RawOutcome(ERROR, raw=row["terminal_status"])
        elif value is None:
            out[row["run_id"]] = RawOutcome(MISSING)
        elif not _is_number(value):
            out[row["run_id"]] = RawOutcome(UNPARSEABLE, raw=value)
        else:
            out[row["run_id"]] = RawOutcome(SCORED, value)
    return out


def score_mean(batch: list[CardBundle], entry: ReportingRuleEntry) -> ScoreReport:
    """Mean per-run score; the score lives in the ``score`` annotation of each run."""
    return _score_batch(list(batch), entry, _mean_outcomes)


def _threshold_outcomes(reader: TrackedReader, card: CardBundle, entry: ReportingRuleEntry) -> dict[str, RawOutcome]:
    cfg = entry.config
    tiers = list(cfg["tiers"])
    passing = set(cfg["passing_set"])
    unknown = passing - set(tiers)
    if unknown:
        raise UnknownTier(sorted(unknown)[0])
    namespace, key = cfg.get("namespace", "medal"), cfg.get("key", "tier")
    runs = run_index(reader)
    labels = latest_annotations(reader, namespace)
    out = {}
    for run in runs.runs:
        if runs.status[run] in ERROR_STATUSES:
            out[run] = RawOutcome(ERROR, raw=runs.status[run])
            continue
        payload = labels.get(run)
        if payload is None or key not in payload:
            out[run] = RawOutcome(MISSING)
            continue
        tier = payload[key]
        if not isinstance(tier, str):
            out[run] = RawOutcome(UNPARSEABLE, raw=tier)
        elif tier not in tiers:
            raise UnknownTier(tier)
        else:
            out[run] = RawOutcome(SCORED, 1.0 if tier in passing else 0.0, raw=tier)
    return out


def score_threshold(batch: list[CardBundle], entry: ReportingRuleEntry) -> ScoreReport:
    """Fraction of runs whose tier label is in the passing set."""
    return _score_batch(list(batch), entry, _threshold_outcomes)


_WS = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Trim, casefold, collapse internal whitespace."""
    return _WS.sub(" ", text.strip()).casefold()


def _final_answers(reader: TrackedReader, runs) -> dict[str, Any]:
    answers: dict[str, Any] = {}
    for row in reader.read_rows("events", ["task_execution_id", "payload"], eq("event_type", "final_answer")):
        answers[runs.run_of(row["task_execution_id"])] = row["payload"].get("text")
    return answers


def _judged_outcomes(reader: TrackedReader, card: CardBundle, entry: ReportingRuleEntry) -> dict[str, RawOutcome]:
    cfg = entry.config
    grader = cfg.get("grader", "rule_based")
    runs = run_index(reader)
    out = {}
    if grader == "rule_based":
        gold = latest_annotations(reader, cfg.get("gold_namespace", "task"))
        answers = _final_answers(reader, runs)
        for run in runs.runs:
            if runs.status[run] in ERROR_STATUSES:
                out[run] = RawOutcome(ERROR, raw=runs.status[run])
                continue
            expected = gold.get(run, {}).get("gold_answer")
            predicted = answers.get(run)
            if expected is None or predicted is None:
                out[run] = RawOutcome(MISSING)
            elif not isinstance(predicted, str) or not isinstance(expected, str):
                out[run] = RawOutcome(UNPARSEABLE, raw=predicted)
            else:
                ok = normalize_answer(predicted) == normalize_answer(expected)
                out[run] = RawOutcome(SCORED, 1.0 if ok else 0.0, raw="correct" if ok else "incorrect")
        return out
    if grader != "recorded_judge_labels":
        raise ValueError(f"unknown grader {grader!r}")
    namespace = cfg.get("namespace", "judge")
    verdicts = latest_annotations(reader, namespace)
    if not verdicts and runs.runs:
        raise MissingVerdictColumn(namespace)
    for run in runs.runs:
        if runs.status[run] in ERROR_STATUSES:
            out[run] = RawOutcome(ERROR, raw=runs.status[run])
            continue
        payload = verdicts.get(run)
        if payload is None or "verdict" not in payload:
            out[run] = RawOutcome(MISSING)
            continue
        verdict = payload["verdict"]
        if verdict in LABEL_VALUES:
            out[run] = RawOutcome(SCORED, LABEL_VALUES[verdict], raw=verdict)
        else:
            out[run] = RawOutcome(UNPARSEABLE, raw=verdict)
    return out


def score_judged(batch: list[CardBundle], entry: ReportingRuleEntry) -> ScoreReport:
    """Correctness by normalized exact match or by preserved judge verdicts.

    Unparseable verdicts follow the policy's ``on_unparseable_output``.
    No live judge is ever called.
    """
    return _score_batch(list(batch), entry, _judged_outcomes)


def _canonical_call(call: dict) -> str:
    return json.dumps([call.get("tool"), call.get("arguments")], sort_keys=True, separators=(",", ":"))


SUCCESS_DEFINITIONS = ("db_state", "action_sequence", "action_set")


def _trajectory_outcomes(reader: TrackedReader, card: CardBundle, entry: ReportingRuleEntry) -> dict[str, RawOutcome]:
    cfg = entry.config
    success = cfg.get("success_definition", "db_state")
    if success not in SUCCESS_DEFINITIONS:
        raise ValueError(f"success_definition must be one of {SUCCESS_DEFINITIONS}")
    runs = run_index(reader)
    gold = latest_annotations(reader, cfg.get("gold_namespace", "gold"))
    calls: dict[str, list[str]] = {}
    states: dict[str, Any] = {}
    if success == "db_state":
        initial = latest_annotations(reader, cfg.get("env_namespace", "env"))
        for run, payload in initial.items():
            if "initial_state" in payload:
                states[run] = payload["initial_state"]
        for row in reader.read_rows("events", ["task_execution_id", "payload"], eq("event_type", "env_state")):
            states[runs.run_of(row["task_execution_id"])] = row["payload"].get("state")
    else:
        for row in reader.read_rows("events", ["task_execution_id", "payload"], eq("event_type", "tool_call")):
            calls.setdefault(runs.run_of(row["task_execution_id"]), []).append(_canonical_call(row["payload"]))
    out = {}
    for run in runs.runs:
        if runs.status[run] in ERROR_STATUSES:
            out[run] = RawOutcome(ERROR, raw=runs.status[run])
            continue
        g = gold.get(run)
        if g is None:
            out[run] = RawOutcome(MISSING)
            continue
        if success == "db_state":
            if run not in states:
                raise MissingStateRecord(run)
            ok = states[run] == g.get("state")
        else:
            want = [_canonical_call(c) for c in g.get("actions", [])]
            got = calls.get(run, [])
            ok = got == want if success == "action_sequence" else set(got) == set(want)
        out[run] = RawOutcome(SCORED, 1.0 if ok else 0.0, raw="success" if ok else "failure")
    return out


def score_trajectory(batch: list[CardBundle], entry: ReportingRuleEntry) -> ScoreReport:
    """Task success under one of three trajectory success definitions."""
    return _score_batch(list(batch), entry, _trajectory_outcomes)


SCORERS: dict[str, Callable[[list[CardBundle], ReportingRuleEntry], ScoreReport]] = {
    "mean": score_mean,
    "threshold": score_threshold,
    "judged": score_judged,
    "trajectory": score_trajectory,
}

DEFAULT_INPUT_VIEW = {
    "mean": "final_score",
    "threshold": "custom:tier",
    "judged": "custom:answers",
    "trajectory": "custom:trajectory",
}
DEFAULT_OUTPUT_TARGET = {"mean": "mean_score"}


def score(batch: list[CardBundle], entry: ReportingRuleEntry) -> ScoreReport:
    try:
        scorer = SCORERS[entry.scorer]
    except KeyError:
        raise ValueError(f"no scorer named {entry.scorer!r}; known: {sorted(SCORERS)}") from None
    return scorer(list(batch), entry)


def make_rule(
    name: str,
    version: str = "1",
    *,
    policy: FailurePolicy,
    config: dict | None = None,
    input_view: str | None = None,
    output_target: str | None = None,
) -> ReportingRuleEntry:
    config = dict(config or {})
    scorer = config.get("scorer", name)
    return ReportingRuleEntry(
        name,
        version,
        config,
        input_view or DEFAULT_INPUT_VIEW.get(scorer, "final_score"),
        output_target or DEFAULT_OUTPUT_TARGET.get(scorer, f"{scorer}_rate"),
        policy,
    )


# ---------------------------------------------------------------------------
# compact rule syntax: name@version:key=value,key=value

_POLICY_WORDS = {
    "fail": COUNT_AS_FAILURE,
    "count_as_failure": COUNT_AS_FAILURE,
    "exclude": EXCLUDE,
    "exclude_from_denominator": EXCLUDE,
    "propagate": PROPAGATE,
    "skip": MARK_SKIPPED,
    "mark_skipped": MARK_SKIPPED,
    "off": GROUP_OFF,
    "drop_zero_variance": DROP_ZERO_VARIANCE,
    "drop_zero_variance_groups": DROP_ZERO_VARIANCE,
}
_COERCE = re.compile(r"coerce(?:_to_fixed)?\((.*)\)")
POLICY_KEYS = {
    "missing": "on_missing_artifact",
    "error": "on_error_status",
    "unparseable": "on_unparseable_output",
    "group": "group_variance_filter",
}
DEFAULT_POLICY_WORDS = {"missing": "fail", "error": "fail", "unparseable": "fail", "group": "off"}


def _policy_value(text: str):
    m = _COERCE.fullmatch(text)
    if m:
        arg = m.group(1)
        try:
            return CoerceToFixed(float(arg))
        except ValueError:
            return CoerceToFixed(arg)
    try:
        return _POLICY_WORDS[text]
    except KeyError:
        raise ValueError(f"unknown policy value {text!r}") from None


def _config_value(key: str, text: str):
    if key in ("passing_set", "tiers", "passing"):
        return [t for t in text.split("+") if t]
    return text


def parse_rule_spec(text: str) -> ReportingRuleEntry:
    """Parse ``name@version:key=value,...`` into a rule entry.

    Policy keys (missing, error, unparseable, group) not given fall back to
    count_as_failure / count_as_failure / count_as_failure / off, and the
    registered version records every option so that two selections that
    differ only in policy are distinct registry entries.
    """
    head, _, opts = text.partition(":")
    name, at, version = head.partition("@")
    if not name or not at or not version:
        raise ValueError(f"rule {text!r} must look like name@version[:key=value,...]")
    words = dict(DEFAULT_POLICY_WORDS)
    config: dict[str, Any] = {}
    given: list[str] = []
    for item in filter(None, opts.split(",")):
        key, eq_sign, value = item.partition("=")
        if not eq_sign:
            raise ValueError(f"option {item!r} in {text!r} must be key=value")
        given.append(f"{key}={value}")
        if key in POLICY_KEYS:
            words[key] = value
        elif key == "passing":
            config["passing_set"] = _config_value(key, value)
        elif key == "success":
            config["success_definition"] = value
        elif key == "grader" and value == "judge":
            config["grader"] = "recorded_judge_labels"
        else:
            config[key] = _config_value(key, value)
    if name == "threshold":
        config.setdefault("tiers", ["gold", "silver", "bronze", "above_median", "below"])
    policy = FailurePolicy(**{POLICY_KEYS[k]: _policy_value(v) for k, v in words.items()})
    full_version = version if not given else f"{version}+{','.join(given)}"
    return make_rule(name, full_version, policy=policy, config=config)

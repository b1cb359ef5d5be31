"""Comparing reporting rules over fixed batches.

Gaps are carried in percentage points at full precision and only rounded
(half-to-even) when displayed. Ties in a system ordering are reported as
ties rather than broken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from itertools import combinations
from typing import Mapping, Sequence

from . import jsontext
from .errors import RolloutCardError, RuleNotApplicable, RulesDifferBeyondDenominator
from .model import CardBundle
from .rules import (
    COUNT_AS_FAILURE,
    EXCLUDE,
    MISSING,
    FailureAccounting,
    ReportingRuleEntry,
    ScoreReport,
    score,
)

ACCOUNTING_COLUMNS = ("attempted", "scored", "failed", "errored", "skipped", "excluded", "coerced")


def display(value: float, places: int = 1) -> str:
    """Round half-to-even for display; the stored value keeps full precision."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    quantum = Decimal(1).scaleb(-places)
    rounded = Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_EVEN)
    if rounded.is_zero():
        rounded = abs(rounded)
    return str(rounded)


def pp(a: float, b: float) -> float:
    """Difference of two rates, in percentage points."""
    return (a - b) * 100


def _order(a: float, b: float) -> str:
    if a > b:
        return ">"
    if a < b:
        return "<"
    return "="


@dataclass(frozen=True)
class RuleGap:
    system: str
    rule_x: str
    rule_y: str
    pp: float

    def to_json(self) -> dict:
        return {"system": self.system, "rule_x": self.rule_x, "rule_y": self.rule_y, "pp": self.pp}


@dataclass(frozen=True)
class SystemGap:
    rule: str
    system_a: str
    system_b: str
    pp: float

    def to_json(self) -> dict:
        return {"rule": self.rule, "system_a": self.system_a, "system_b": self.system_b, "pp": self.pp}


@dataclass(frozen=True)
class RankingInversion:
    system_a: str
    system_b: str
    rule_x: str
    rule_y: str
    order_under_x: str
    order_under_y: str

    def __post_init__(self):
        if self.order_under_x == self.order_under_y:
            raise ValueError("an inversion needs two different orderings")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LabelDisagreement:
    system: str
    rule_x: str
    rule_y: str
    disagreements: int
    compared: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DiscrepancyReport:
    batch_id: str
    rules: list[tuple[str, str]]
    systems: list[str]
    scores: dict[str, dict[str, float]]
    gaps: list[RuleGap]
    system_gaps: list[SystemGap]
    inversions: list[RankingInversion]
    disagreements: list[LabelDisagreement]
    accounting: dict[str, dict[str, FailureAccounting]]
    reports: dict[str, dict[str, ScoreReport]] = field(default_factory=dict, repr=False)

    @property
    def rule_labels(self) -> list[str]:
        return [f"{n}@{v}" for n, v in self.rules]

    def gap(self, system: str, rule_x: str, rule_y: str) -> float:
        row = self.scores[system]
        return pp(row[rule_x], row[rule_y])

    def system_gap(self, rule: str, system_a: str, system_b: str) -> float:
        return pp(self.scores[system_a][rule], self.scores[system_b][rule])

    def to_json(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "rules": [{"name": n, "version": v} for n, v in self.rules],
            "systems": self.systems,
            "scores": self.scores,
            "gaps": [g.to_json() for g in self.gaps],
            "system_gaps": [g.to_json() for g in self.system_gaps],
            "inversions": [i.to_json() for i in self.inversions],
            "disagreements": [d.to_json() for d in self.disagreements],
            "accounting": {s: {r: a.to_json() for r, a in row.items()} for s, row in self.accounting.items()},
        }

    def to_document(self) -> str:
        return jsontext.dumps_document(self.to_json())

    def render_text(self) -> str:
        lines = [f"batch {self.batch_id}"]
        lines.append(render_table(failure_rows(self)))
        if self.gaps:
            lines.append("rule gaps (pp):")
            for g in self.gaps:
                lines.append(f"  {g.system}: {g.rule_x} - {g.rule_y} = {display(g.pp)}pp")
        if self.system_gaps:
            lines.append("system gaps (pp):")
            for g in self.system_gaps:
                lines.append(f"  {g.rule}: {g.system_a} - {g.system_b} = {display(g.pp)}pp")
        lines.append(f"inversions: {len(self.inversions)}")
        for inv in self.inversions:
            lines.append(
                f"  {inv.system_a} {inv.order_under_x} {inv.system_b} under {inv.rule_x}, "
                f"{inv.order_under_y} under {inv.rule_y}"
            )
        for d in self.disagreements:
            lines.append(f"label disagreements {d.system}: {d.rule_x} vs {d.rule_y} = {d.disagreements}/{d.compared}")
        return "\n".join(lines)


def _score_cell(system: str, batch, rule: ReportingRuleEntry) -> ScoreReport:
    try:
        return score(list(batch), rule)
    except (RolloutCardError, KeyError) as exc:
        raise RuleNotApplicable(system, rule.label, str(exc)) from exc


def compare(
    batches: Mapping[str, Sequence[CardBundle]],
    rules: Sequence[ReportingRuleEntry],
    batch_id: str = "batch",
) -> DiscrepancyReport:
    """Score every batch under every rule; list gaps, inversions and disagreements."""
    if not batches:
        raise ValueError("compare needs at least one system")
    if len(rules) < 2:
        raise ValueError("compare needs at least two rules")
    systems = sorted(batches)
    labels = [r.label for r in rules]
    if len(set(labels)) != len(labels):
        raise ValueError("rules must have distinct name@version labels")
    reports = {s: {r.label: _score_cell(s, batches[s], r) for r in rules} for s in systems}
    scores = {s: {label: reports[s][label].headline for label in labels} for s in systems}
    gaps = [RuleGap(s, x, y, pp(scores[s][x], scores[s][y])) for s in systems for x, y in combinations(labels, 2)]
    system_gaps = [
        SystemGap(r, a, b, pp(scores[a][r], scores[b][r])) for r in labels for a, b in combinations(systems, 2)
    ]
    inversions = []
    for a, b in combinations(systems, 2):
        for x, y in combinations(labels, 2):
            ox, oy = _order(scores[a][x], scores[b][x]), _order(scores[a][y], scores[b][y])
            if ox != oy:
                inversions.append(RankingInversion(a, b, x, y, ox, oy))
    disagreements = []
    for s in systems:
        for x, y in combinations(labels, 2):
            lx = {r.run_id: r.raw for r in reports[s][x].per_run}
            ly = {r.run_id: r.raw for r in reports[s][y].per_run}
            common = sorted(set(lx) & set(ly))
            disagreements.append(LabelDisagreement(s, x, y, sum(1 for k in common if lx[k] != ly[k]), len(common)))
    accounting = {s: {label: reports[s][label].accounting for label in labels} for s in systems}
    return DiscrepancyReport(
        batch_id,
        [r.key for r in rules],
        systems,
        scores,
        gaps,
        system_gaps,
        inversions,
        disagreements,
        accounting,
        reports,
    )


@dataclass(frozen=True)
class GapDecomposition:
    gap_inclusive: float
    gap_exclusive: float
    convention_share: float
    missing_a: int
    missing_b: int
    inclusive: tuple[ScoreReport, ScoreReport] = field(repr=False, compare=False, default=None)
    exclusive: tuple[ScoreReport, ScoreReport] = field(repr=False, compare=False, default=None)

    def to_json(self) -> dict:
        return {
            "gap_inclusive": self.gap_inclusive,
            "gap_exclusive": self.gap_exclusive,
            "convention_share": self.convention_share,
            "missing_a": self.missing_a,
            "missing_b": self.missing_b,
            "accounting": {
                "inclusive": [r.accounting.to_json() for r in self.inclusive],
                "exclusive": [r.accounting.to_json() for r in self.exclusive],
            },
        }

    def render_text(self) -> str:
        acc = self.inclusive[0].accounting, self.inclusive[1].accounting
        return (
            f"gap counting missing as failure: {display(self.gap_inclusive)}pp\n"
            f"gap excluding missing: {display(self.gap_exclusive)}pp\n"
            f"convention share: {display(self.convention_share)}pp\n"
            f"missing artefacts: a={self.missing_a}/{acc[0].attempted} b={self.missing_b}/{acc[1].attempted}"
        )


def _check_denominator_pair(inclusive: ReportingRuleEntry, exclusive: ReportingRuleEntry) -> None:
    pi, pe = inclusive.policy, exclusive.policy
    problems = []
    if pi.on_missing_artifact != COUNT_AS_FAILURE:
        problems.append("inclusive rule does not count missing artefacts as failures")
    if pe.on_missing_artifact != EXCLUDE:
        problems.append("exclusive rule does not exclude missing artefacts")
    if inclusive.name != exclusive.name or inclusive.scorer != exclusive.scorer:
        problems.append("rules use different scorers")
    if inclusive.config != exclusive.config:
        problems.append("rule configs differ")
    for attr in ("on_error_status", "on_unparseable_output", "group_variance_filter"):
        if getattr(pi, attr) != getattr(pe, attr):
            problems.append(f"policies differ in {attr}")
    if problems:
        raise RulesDifferBeyondDenominator("; ".join(problems))


def decompose_gap(
    batch_a: Sequence[CardBundle],
    batch_b: Sequence[CardBundle],
    rule_inclusive: ReportingRuleEntry,
    rule_exclusive: ReportingRuleEntry,
) -> GapDecomposition:
    """Split the a-minus-b gap into the part caused by the denominator choice."""
    _check_denominator_pair(rule_inclusive, rule_exclusive)
    inc = score(list(batch_a), rule_inclusive), score(list(batch_b), rule_inclusive)
    exc = score(list(batch_a), rule_exclusive), score(list(batch_b), rule_exclusive)
    gap_inc = pp(inc[0].headline, inc[1].headline)
    gap_exc = pp(exc[0].headline, exc[1].headline)
    missing = [sum(1 for r in rep.per_run if r.label == MISSING) for rep in inc]
    return GapDecomposition(gap_inc, gap_exc, gap_inc - gap_exc, missing[0], missing[1], inc, exc)


def failure_rows(report: DiscrepancyReport) -> list[dict]:
    rows = []
    for s in report.systems:
        for label in report.rule_labels:
            acc = report.accounting[s][label]
            row = {"system": s, "rule": label, "headline": report.scores[s][label]}
            row.update({c: getattr(acc, c) for c in ACCOUNTING_COLUMNS})
            rows.append(row)
    return rows


def failure_table(
    batches: Mapping[str, Sequence[CardBundle]], rules: Sequence[ReportingRuleEntry]
) -> list[dict]:
    """Per (system, rule) accounting beside the headline."""
    systems = sorted(batches)
    rows = []
    for s in systems:
        for rule in rules:
            rep = _score_cell(s, batches[s], rule)
            row = {"system": s, "rule": rule.label, "headline": rep.headline}
            row.update({c: getattr(rep.accounting, c) for c in ACCOUNTING_COLUMNS})
            rows.append(row)
    return rows


def render_table(rows: list[dict]) -> str:
    """Text table; the header always carries the accounting columns."""
    header = ["system", "rule", "headline_%"] + list(ACCOUNTING_COLUMNS)
    body = []
    for r in rows:
        head = r["headline"]
        body.append(
            [r["system"], r["rule"], display(head * 100, 2) if not math.isnan(head) else "nan"]
            + [str(r[c]) for c in ACCOUNTING_COLUMNS]
        )
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*header)] + [fmt.format(*b) for b in body])

from __future__ import annotations

import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rollout_cards.discrepancy import (
    ACCOUNTING_COLUMNS,
    RankingInversion,
    compare,
    decompose_gap,
    display,
    failure_rows,
    failure_table,
    pp,
    render_table,
)
from rollout_cards.errors import RuleNotApplicable, RulesDifferBeyondDenominator
from rollout_cards.rules import parse_rule_spec


@pytest.mark.parametrize(
    "value, places, text",
    [
        (0.125, 2, "0.12"),
        (0.375, 2, "0.38"),
        (2.25, 1, "2.2"),
        (2.35, 1, "2.4"),
        (-0.04, 1, "0.0"),
        (15.6, 1, "15.6"),
        (float("nan"), 1, "nan"),
    ],
)
def test_display_half_even(value, places, text):
    assert display(value, places) == text


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_display_is_within_half_quantum(x):
    shown = Decimal(display(x, 2))
    assert abs(shown - Decimal(repr(x))) <= Decimal("0.005")
    assert not display(x, 2).startswith("-0.00")


def test_pp():
    assert pp(0.392, 0.236) == pytest.approx(15.6)


def test_swebench_gap_decomposition(named):
    fx = named("swebench_gap")
    inc, exc = (parse_rule_spec(s) for s in fx.rules)
    d = decompose_gap(fx.batches["agentless"], fx.batches["swe-agent"], inc, exc)
    assert display(d.gap_inclusive) == "15.6"
    assert display(d.gap_exclusive) == "13.3"
    assert display(d.convention_share) == "2.3"
    assert d.convention_share == pytest.approx(d.gap_inclusive - d.gap_exclusive)
    assert (d.missing_a, d.missing_b) == (fx.gold["missing"]["agentless"], fx.gold["missing"]["swe-agent"])
    assert "convention share: 2.3pp" in d.render_text()
    assert json.dumps(d.to_json())


@pytest.mark.parametrize(
    "inc, exc",
    [
        ("mean@1:missing=exclude", "mean@1:missing=exclude"),
        ("mean@1", "mean@2:missing=exclude,error=exclude"),
        ("mean@1", "threshold@1:missing=exclude"),
    ],
)
def test_decompose_refuses_other_differences(named, inc, exc):
    fx = named("swebench_gap")
    with pytest.raises(RulesDifferBeyondDenominator):
        decompose_gap(fx.batches["agentless"], fx.batches["swe-agent"], parse_rule_spec(inc), parse_rule_spec(exc))


def test_compare_taubench_inversion(named):
    fx = named("taubench_graders")
    report = compare(fx.batches, [parse_rule_spec(s) for s in fx.rules], "tau")
    assert report.systems == ["claude-3.5-sonnet", "gpt-4o"]
    assert len(report.inversions) == fx.gold["inversions"]
    db, seq = report.rule_labels
    for system, gap in fx.gold["rule_gap_pp"].items():
        assert report.gap(system, db, seq) == pytest.approx(gap)
    inv = report.inversions[0]
    assert {inv.order_under_x, inv.order_under_y} == {"<", ">"}
    assert "inversions: 1" in report.render_text()


def test_compare_label_disagreements(named):
    fx = named("browsecomp_judges")
    report = compare(fx.batches, [parse_rule_spec(s) for s in fx.rules], "bc")
    (d,) = report.disagreements
    assert d.compared == fx.gold["answers"]
    assert d.disagreements > 0


def test_compare_needs_two_distinct_rules(named):
    fx = named("swebench_gap")
    with pytest.raises(ValueError):
        compare(fx.batches, [parse_rule_spec("mean@1")])
    with pytest.raises(ValueError):
        compare(fx.batches, [parse_rule_spec("mean@1"), parse_rule_spec("mean@1")])
    with pytest.raises(ValueError):
        compare({}, [parse_rule_spec("mean@1"), parse_rule_spec("mean@2")])


def test_rule_not_applicable(named):
    fx = named("swebench_gap")
    with pytest.raises(RuleNotApplicable):
        compare(fx.batches, [parse_rule_spec("mean@1"), parse_rule_spec("judged@1:grader=judge")])


def test_ties_are_not_inversions(full_card):
    batches = {"a": [full_card], "b": [full_card]}
    report = compare(batches, [parse_rule_spec("mean@1"), parse_rule_spec("mean@1:missing=exclude")])
    assert report.inversions == []
    assert all(g.pp == 0 for g in report.system_gaps)


def test_inversion_needs_two_orders():
    with pytest.raises(ValueError):
        RankingInversion("a", "b", "x", "y", ">", ">")


def test_failure_table_header_and_rows(named):
    fx = named("swebench_gap")
    rules = [parse_rule_spec(s) for s in fx.rules]
    rows = failure_table(fx.batches, rules)
    assert rows == failure_rows(compare(fx.batches, rules))
    text = render_table(rows)
    header = text.splitlines()[0].split()
    assert header == ["system", "rule", "headline_%", *ACCOUNTING_COLUMNS]
    assert len(text.splitlines()) == 1 + len(rows)
    assert render_table([]).split() == ["system", "rule", "headline_%", *ACCOUNTING_COLUMNS]


def test_report_json_is_stable(named):
    fx = named("swebench_gap")
    rules = [parse_rule_spec(s) for s in fx.rules]
    a = compare(fx.batches, rules, "x").to_document()
    b = compare(fx.batches, rules, "x").to_document()
    assert a == b
    doc = json.loads(a)
    assert set(doc["accounting"]["agentless"]) == {r.label for r in rules}

from __future__ import annotations

import itertools
import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rollout_cards import rules
from rollout_cards.errors import DuplicateRule, EmptyDenominator, MissingStateRecord, MissingVerdictColumn, UnknownTier
from rollout_cards.model import AnnotationRow
from rollout_cards.rules import (
    COUNT_AS_FAILURE,
    DROP_ZERO_VARIANCE,
    EXCLUDE,
    GROUP_OFF,
    MARK_SKIPPED,
    PROPAGATE,
    CoerceToFixed,
    FailureAccounting,
    FailurePolicy,
    RawOutcome,
    Registry,
    ReportingRuleEntry,
    make_rule,
    parse_rule_spec,
    score,
)


def policy(missing=COUNT_AS_FAILURE, error=COUNT_AS_FAILURE, unparseable=COUNT_AS_FAILURE, group=GROUP_OFF):
    return FailurePolicy(missing, error, unparseable, group)


# ---------------------------------------------------------------------------
# policies


def test_policy_rejects_unknown_choices():
    with pytest.raises(ValueError):
        policy(missing="coerce_to_fixed")
    with pytest.raises(ValueError):
        policy(missing=CoerceToFixed(0))
    with pytest.raises(ValueError):
        policy(unparseable=PROPAGATE)
    with pytest.raises(ValueError):
        policy(error="coerce_to_fixed")  # the bare word needs a value
    with pytest.raises(ValueError):
        policy(group="sometimes")


def test_coerce_to_fixed_values():
    assert CoerceToFixed("incorrect").number == 0.0
    assert CoerceToFixed("correct").number == 1.0
    assert CoerceToFixed(0.25).number == 0.25
    for bad in (True, "maybe", None):
        with pytest.raises(ValueError):
            CoerceToFixed(bad)


def test_policy_json_round_trip():
    p = policy(error=CoerceToFixed(0.5), unparseable=MARK_SKIPPED, group=DROP_ZERO_VARIANCE)
    assert FailurePolicy.from_json(json.loads(json.dumps(p.to_json()))) == p


def test_accounting_must_balance():
    FailureAccounting(attempted=3, scored=1, failed=1, excluded=1)
    with pytest.raises(ValueError):
        FailureAccounting(attempted=3, scored=1)


@pytest.mark.parametrize(
    "outcome, pol, bucket, contribution",
    [
        (RawOutcome("scored", 0.5), policy(), "scored", 0.5),
        (RawOutcome("missing"), policy(), "failed", 0.0),
        (RawOutcome("missing"), policy(missing=EXCLUDE), "excluded", None),
        (RawOutcome("error"), policy(), "errored", 0.0),
        (RawOutcome("error"), policy(error=EXCLUDE), "excluded", None),
        (RawOutcome("error"), policy(error=CoerceToFixed(0.25)), "errored", 0.25),
        (RawOutcome("unparseable"), policy(), "failed", 0.0),
        (RawOutcome("unparseable"), policy(unparseable=MARK_SKIPPED), "skipped", None),
        (RawOutcome("unparseable"), policy(unparseable=CoerceToFixed("correct")), "scored", 1.0),
    ],
)
def test_apply(outcome, pol, bucket, contribution):
    r = rules._apply(pol, "r", outcome, None)
    assert (r.bucket, r.contribution) == (bucket, contribution)


def test_apply_propagate_is_nan():
    r = rules._apply(policy(error=PROPAGATE), "r", RawOutcome("error"), None)
    assert r.bucket == "errored" and math.isnan(r.contribution)
    assert r.to_json()["contribution"] is None and r.to_json()["propagated"] is True


LABELS = st.sampled_from(["scored", "missing", "error", "unparseable"])
POLICIES = st.builds(
    FailurePolicy,
    st.sampled_from([COUNT_AS_FAILURE, EXCLUDE]),
    st.sampled_from([COUNT_AS_FAILURE, EXCLUDE, CoerceToFixed(0.5)]),
    st.sampled_from([COUNT_AS_FAILURE, MARK_SKIPPED, CoerceToFixed("incorrect")]),
    st.just(GROUP_OFF),
)


@settings(max_examples=200)
@given(st.lists(st.tuples(LABELS, st.floats(0, 1)), min_size=1, max_size=30), POLICIES)
def test_accounting_conserves_runs(outcomes, pol):
    per_run = [rules._apply(pol, f"r{i}", RawOutcome(lab, v), None) for i, (lab, v) in enumerate(outcomes)]
    entry = make_rule("mean", policy=pol)
    try:
        report = rules._report(entry, per_run, None)
    except EmptyDenominator:
        assert all(r.contribution is None for r in per_run)
        return
    acc = report.accounting
    assert acc.attempted == len(outcomes)
    assert acc.scored + acc.failed + acc.errored + acc.skipped + acc.excluded == acc.attempted
    contributing = [r.contribution for r in per_run if r.contribution is not None]
    assert acc.denominator == len(contributing)
    assert report.headline == pytest.approx(sum(contributing) / len(contributing))


def test_drop_zero_variance_groups():
    pol = policy(group=DROP_ZERO_VARIANCE)
    runs = [
        rules._apply(pol, "a1", RawOutcome("scored", 1.0), "g1"),
        rules._apply(pol, "a2", RawOutcome("scored", 1.0), "g1"),
        rules._apply(pol, "b1", RawOutcome("scored", 1.0), "g2"),
        rules._apply(pol, "b2", RawOutcome("missing"), "g2"),  # post-policy 0.0, so g2 varies
        rules._apply(pol, "c1", RawOutcome("scored", 0.3), None),
    ]
    out = {r.run_id: r.bucket for r in rules._drop_zero_variance(runs)}
    assert out == {"a1": "excluded", "a2": "excluded", "b1": "scored", "b2": "failed", "c1": "scored"}


# ---------------------------------------------------------------------------
# rule entries and the registry


def test_parse_rule_spec_defaults_and_versions():
    a = parse_rule_spec("mean@1")
    assert a.key == ("mean", "1")
    assert a.policy == policy()
    assert a.output_target == "mean_score" and a.input_view == "final_score"
    b = parse_rule_spec("mean@1:missing=exclude,error=coerce(0.5),unparseable=skip")
    assert b.version == "1+missing=exclude,error=coerce(0.5),unparseable=skip"
    assert b.policy == policy(EXCLUDE, CoerceToFixed(0.5), MARK_SKIPPED)
    t = parse_rule_spec("threshold@1:passing=gold+silver")
    assert t.config["passing_set"] == ["gold", "silver"]
    assert "gold" in t.config["tiers"]
    j = parse_rule_spec("judged@2:grader=judge")
    assert j.config["grader"] == "recorded_judge_labels"


@pytest.mark.parametrize("bad", ["mean", "mean@", "@1", "mean@1:missing", "mean@1:missing=sometimes"])
def test_parse_rule_spec_errors(bad):
    with pytest.raises(ValueError):
        parse_rule_spec(bad)


def test_config_must_be_json():
    with pytest.raises((TypeError, ValueError)):
        make_rule("mean", policy=policy(), config={"x": float("nan")})


def test_registry_duplicates_and_manifest_round_trip(full_card):
    a, b = parse_rule_spec("mean@1"), parse_rule_spec("mean@1:missing=exclude")
    reg = Registry([a, b])
    with pytest.raises(DuplicateRule):
        reg.register(parse_rule_spec("mean@1"))
    manifest = reg.into_manifest(full_card.manifest)
    back = Registry.from_manifest(manifest)
    assert [e.key for e in back] == [a.key, b.key]
    assert back.lookup(*b.key) == b
    assert len(back) == 2 and a.key in back


def test_entry_json_round_trip():
    e = parse_rule_spec("trajectory@3:success=action_set,error=exclude")
    assert ReportingRuleEntry.from_json(json.loads(json.dumps(e.to_json()))) == e


# ---------------------------------------------------------------------------
# scorers


def _oracle_outcomes(card):
    """Per-run labels read straight off the card, independent of the views."""
    roots = [n.node_id for n in card.rows("nodes") if n.parent_id is None]
    status = {}
    for m in card.rows("mutations"):
        if m.mutation_type == "node_status" and m.target_id in roots:
            status[m.target_id] = m.new_value["status"]
    scores = {}
    for a in sorted(card.rows("annotations"), key=lambda a: a.sequence):
        if a.namespace == "score" and a.target_type == "node":
            scores[a.target_id] = a.payload.get("value")
    out = {}
    for run in roots:
        v = scores.get(run)
        if status.get(run) == "errored":
            out[run] = ("error", None)
        elif v is None:
            out[run] = ("missing", None)
        elif not isinstance(v, (int, float)) or isinstance(v, bool):
            out[run] = ("unparseable", None)
        else:
            out[run] = ("scored", float(v))
    return out


CHOICES = {
    "missing": {"fail": (0.0, "failed"), "exclude": (None, "excluded")},
    "error": {"fail": (0.0, "errored"), "exclude": (None, "excluded"), "coerce(0.5)": (0.5, "errored")},
    "unparseable": {"fail": (0.0, "failed"), "skip": (None, "skipped"), "coerce(1)": (1.0, "scored")},
}


@pytest.mark.parametrize("missing, error, unparseable", list(itertools.product(*(CHOICES[k] for k in CHOICES))))
def test_mean_scorer_matches_oracle(mixed_card, missing, error, unparseable):
    rule = parse_rule_spec(f"mean@1:missing={missing},error={error},unparseable={unparseable}")
    report = score([mixed_card], rule)
    values, buckets = [], {}
    for label, v in _oracle_outcomes(mixed_card).values():
        if label == "scored":
            contrib, bucket = v, "scored"
        else:
            contrib, bucket = CHOICES[label][{"missing": missing, "error": error, "unparseable": unparseable}[label]]
        buckets[bucket] = buckets.get(bucket, 0) + 1
        if contrib is not None:
            values.append(contrib)
    assert report.headline == pytest.approx(sum(values) / len(values))
    acc = report.accounting
    for bucket in ("scored", "failed", "errored", "skipped", "excluded"):
        assert getattr(acc, bucket) == buckets.get(bucket, 0)
    line = report.summary_line()
    assert f"failed={acc.failed} errored={acc.errored} skipped={acc.skipped}" in line


def test_propagate_gives_nan_headline_serialized_as_null(mixed_card):
    report = score([mixed_card], parse_rule_spec("mean@1:error=propagate"))
    assert math.isnan(report.headline)
    assert json.loads(report.to_document())["headline"] is None
    assert "=nan" in report.summary_line()


def test_empty_denominator(mixed_card):
    none_ok = replace(
        mixed_card,
        streams={**mixed_card.streams, "annotations": [a for a in mixed_card.rows("annotations") if a.namespace != "score"]},
    )
    with pytest.raises(EmptyDenominator):
        score([none_ok], parse_rule_spec("mean@1:missing=exclude,error=exclude"))


def test_batch_run_keys_and_drops(full_card, mixed_card):
    report = score([full_card, mixed_card], parse_rule_spec("mean@1:missing=exclude,error=exclude,unparseable=skip"))
    assert report.accounting.attempted == 28
    assert all("/" in r.run_id for r in report.per_run)
    assert report.drops.rule_or_view_name == "rule:mean@1+missing=exclude,error=exclude,unparseable=skip"
    assert ("annotations", "payload") in report.drops.footprint.fields_read


def test_threshold_scorer(named):
    fx = named("mlebench_medal")
    card = fx.only_card("mle-agent")
    wide, gold_only = (score([card], parse_rule_spec(s)) for s in fx.rules)
    assert wide.headline == pytest.approx(fx.gold["above_median_rate"])
    assert gold_only.headline == pytest.approx(fx.gold["gold_only_rate"])
    with pytest.raises(UnknownTier):
        score([card], parse_rule_spec("threshold@1:passing=platinum"))


def test_judged_scorers(named):
    fx = named("browsecomp_judges")
    card = fx.only_card("browsecomp-agent")
    rb, judge = (score([card], parse_rule_spec(s)) for s in fx.rules)
    assert sum(1 for r in rb.per_run if r.contribution == 1.0) == fx.gold["rule_based_correct"]
    assert sum(1 for r in judge.per_run if r.contribution == 1.0) == fx.gold["judge_correct"]
    assert judge.accounting.coerced == fx.gold["invalid_verdicts"]


def test_judged_without_verdicts(full_card):
    with pytest.raises(MissingVerdictColumn):
        score([full_card], parse_rule_spec("judged@1:grader=judge"))


def test_normalize_answer():
    assert rules.normalize_answer("  Paris\n  France ") == "paris france"


def test_trajectory_scorers(named):
    fx = named("taubench_graders")
    for system in fx.batches:
        card = fx.only_card(system)
        db, seq = (score([card], parse_rule_spec(s)) for s in fx.rules)
        assert db.headline == pytest.approx(fx.gold["db_state_rate"][system])
        assert seq.headline == pytest.approx(fx.gold["action_sequence_rate"][system])
        aset = score([card], parse_rule_spec("trajectory@1:success=action_set"))
        shape = fx.gold["shape"][system]
        assert aset.headline == pytest.approx((shape["exact"] + shape["reordered"]) / fx.gold["trajectories"])


def test_trajectory_missing_state(named):
    card = named("taubench_graders").only_card("gpt-4o")
    stripped = replace(
        card,
        streams={
            **card.streams,
            "events": [e for e in card.rows("events") if e.event_type != "env_state"],
            "annotations": [a for a in card.rows("annotations") if a.namespace != "env"],
        },
    )
    with pytest.raises(MissingStateRecord):
        score([stripped], parse_rule_spec("trajectory@1:success=db_state"))


def test_group_filter_on_card(full_card):
    runs = sorted(n.node_id for n in full_card.rows("nodes") if n.parent_id is None)
    extra = [
        AnnotationRow("node", run, "group", 0, {"id": i % 2 if i < 4 else f"solo{i}"}, "2025-01-01T00:00:00.000Z")
        for i, run in enumerate(runs)
    ]
    card = replace(full_card, streams={**full_card.streams, "annotations": list(full_card.rows("annotations")) + extra})
    plain = score([card], parse_rule_spec("mean@1"))
    filtered = score([card], parse_rule_spec("mean@1:group=drop_zero_variance"))
    assert plain.accounting.excluded == 0
    contrib = {r.run_id.rsplit("/", 1)[-1]: r.contribution for r in plain.per_run}
    c = [contrib[run] for run in runs]
    # singleton groups never vary, so they are dropped as well
    expected = (len(runs) - 4) + 2 * (c[0] == c[2]) + 2 * (c[1] == c[3])
    assert filtered.accounting.excluded == expected


def test_unknown_scorer():
    entry = make_rule("nope", policy=policy())
    with pytest.raises(ValueError):
        score([], entry)

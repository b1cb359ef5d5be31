"""Rollout cards: bundles of agent rollouts, views over them, and explicit reporting rules."""

from __future__ import annotations

from .access import DropsManifest, SemanticLossClass, TrackedReader, open_tracked, strip_to_footprint
from .bundle import Carrier, convert, read_bundle, write_bundle
from .discrepancy import DiscrepancyReport, GapDecomposition, compare, decompose_gap, display
from .graph import check_acyclic_incremental
from .model import (
    AnnotationRow,
    CardBuilder,
    CardBundle,
    EdgeRow,
    EventRow,
    Manifest,
    MutationRow,
    NodeRow,
    parse_row,
    serialize_row,
)
from .rules import (
    FailureAccounting,
    FailurePolicy,
    Registry,
    ReportingRuleEntry,
    ScoreReport,
    make_rule,
    parse_rule_spec,
    score,
)
from .synth import FixtureProfile, gen_card, gen_named, inject_defect
from .validate import ValidationReport, check_extends, validate_bundle
from .views import ViewSpec, ViewTable, preservation_matrix, preservation_status, project

__version__ = "0.1.0"

__all__ = [
    "AnnotationRow",
    "CardBuilder",
    "CardBundle",
    "Carrier",
    "DiscrepancyReport",
    "DropsManifest",
    "EdgeRow",
    "EventRow",
    "FailureAccounting",
    "FailurePolicy",
    "FixtureProfile",
    "GapDecomposition",
    "Manifest",
    "MutationRow",
    "NodeRow",
    "Registry",
    "ReportingRuleEntry",
    "ScoreReport",
    "SemanticLossClass",
    "TrackedReader",
    "ValidationReport",
    "ViewSpec",
    "ViewTable",
    "check_acyclic_incremental",
    "check_extends",
    "compare",
    "convert",
    "decompose_gap",
    "display",
    "gen_card",
    "gen_named",
    "inject_defect",
    "make_rule",
    "open_tracked",
    "parse_row",
    "parse_rule_spec",
    "preservation_matrix",
    "preservation_status",
    "project",
    "read_bundle",
    "score",
    "serialize_row",
    "strip_to_footprint",
    "validate_bundle",
    "write_bundle",
]

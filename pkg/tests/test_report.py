"""Aggregation, dedup, serialization round-trips, and output formats."""
from __future__ import annotations

import json

import pytest

from slsa_audit.model import (
    AttackVector,
    ComponentRef,
    ConsistencyError,
    Finding,
    Repository,
    Severity,
)
from slsa_audit.report import (
    FindingBatch,
    aggregate,
    emit,
    exit_code_for,
    parse_report,
    report_to_dict,
)

REF_A = ComponentRef(Repository.DOCKER_HUB, "alice", "app")
REF_B = ComponentRef(Repository.GITHUB, "bob", "lib")


def _finding(rule_id="R-1", component=REF_A, severity=Severity.HIGH, location="f.txt"):
    return Finding(
        rule_id=rule_id,
        vector=AttackVector.V1,
        severity=severity,
        component=component,
        location=location,
        evidence="example evidence",
        remediation="fix it",
    )


def test_aggregate_empty():
    report = aggregate([FindingBatch("c", [])], {REF_A: 0, REF_B: 0})
    assert report.stats.mean == 0
    assert report.severity_histogram == {}
    assert report.cdf_points[-1][1] == 1.0


def test_aggregate_merges_components():
    batch1 = FindingBatch("c", [_finding("R-1")])
    batch2 = FindingBatch("c", [_finding("R-2", location="g.txt")])
    report = aggregate([batch1, batch2])
    assert len(report.per_component[REF_A]) == 2


def test_aggregate_dedups_on_rule_component_location():
    duplicated = _finding("R-1")
    other_loc = _finding("R-1", location="other.txt")
    report = aggregate([FindingBatch("c", [duplicated]), FindingBatch("c", [duplicated, other_loc])])
    assert len(report.per_component[REF_A]) == 2
    assert sum(report.severity_histogram.values()) == 2


def test_aggregate_rejects_mixed_corpora():
    with pytest.raises(ConsistencyError):
        aggregate([FindingBatch("one", []), FindingBatch("two", [])])


def test_histogram_conservation():
    findings = [
        _finding("R-1", severity=Severity.CRITICAL),
        _finding("R-2", severity=Severity.UNKNOWN, location="u.txt"),
        _finding("R-3", severity=Severity.HIGH, location="h.txt"),
    ]
    report = aggregate([FindingBatch("c", findings)])
    total = sum(report.severity_histogram.values())
    assert total == 3
    assert report.severity_histogram[Severity.UNKNOWN] == 1


def test_json_round_trip():
    findings = [
        _finding("R-1", severity=Severity.CRITICAL),
        _finding("R-2", component=REF_B, location="x/y.tf"),
    ]
    report = aggregate([FindingBatch("corpus-1", findings)], {REF_A: 3, REF_B: 0})
    blob = emit(report, "json")
    parsed = parse_report(blob)
    assert parsed == report
    assert emit(parsed, "json") == blob


def test_json_deterministic():
    findings = [_finding("R-2", location="b"), _finding("R-1", location="a")]
    report_a = aggregate([FindingBatch("c", findings)])
    report_b = aggregate([FindingBatch("c", list(reversed(findings)))])
    assert emit(report_a, "json") == emit(report_b, "json")


def test_json_findings_sorted():
    findings = [
        _finding("Z", component=REF_B, location="2"),
        _finding("A", component=REF_A, location="1"),
        _finding("A", component=REF_A, location="0"),
    ]
    doc = json.loads(emit(aggregate([FindingBatch("c", findings)]), "json"))
    flattened = [
        (c["component"]["publisher"], f["rule_id"], f["location"])
        for c in doc["components"]
        for f in c["findings"]
    ]
    assert flattened == sorted(flattened)


def test_table_empty_has_header_only():
    report = aggregate([FindingBatch("c", [])])
    text = emit(report, "table").decode()
    lines = [l for l in text.splitlines() if l]
    assert any("component" in l for l in lines)
    assert not any(l.startswith("[") for l in lines)


def test_sarif_level_mapping():
    cases = {
        Severity.CRITICAL: "error",
        Severity.HIGH: "error",
        Severity.MEDIUM: "warning",
        Severity.LOW: "note",
        Severity.UNKNOWN: "none",
    }
    for severity, level in cases.items():
        report = aggregate([FindingBatch("c", [_finding(severity=severity)])])
        doc = json.loads(emit(report, "sarif-like"))
        results = doc["runs"][0]["results"]
        assert len(results) == 1
        assert results[0]["level"] == level
        assert results[0]["ruleId"] == "R-1"


def test_emit_unknown_format():
    with pytest.raises(ValueError):
        emit(aggregate([]), "yaml")


def test_exit_codes():
    report = aggregate([FindingBatch("c", [_finding(severity=Severity.MEDIUM)])])
    assert exit_code_for(report, None) == 0
    assert exit_code_for(report, Severity.HIGH) == 0
    assert exit_code_for(report, Severity.MEDIUM) == 1
    assert exit_code_for(report, Severity.LOW) == 1
    unknown_only = aggregate([FindingBatch("c", [_finding(severity=Severity.UNKNOWN)])])
    assert exit_code_for(unknown_only, Severity.LOW) == 0


def test_report_dict_shape():
    report = aggregate([FindingBatch("c", [_finding()])], {REF_A: 1})
    doc = report_to_dict(report)
    assert set(doc) == {"corpus_id", "components", "severity_histogram", "stats", "cdf"}
    assert doc["components"][0]["vuln_count"] == 1

"""Aggregation of analyzer findings into reports, plus output formats.

Report JSON is byte-stable for identical inputs: keys are sorted, findings
are ordered by (component, rule_id, location), and no timestamps appear in
the body. Run metadata (timestamps, tool versions) lives in the separate
AuditRun record.
"""
from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from slsa_audit import __version__, archive, dockerlint, iaclint, typosquat, vulnscan
from slsa_audit.config import AuditConfig
from slsa_audit.ingest import CorpusEntry, CorpusLoadResult, is_serverless, load_corpus
from slsa_audit.model import (
    AttackVector,
    ComponentRef,
    ConsistencyError,
    CountStats,
    Finding,
    ScanReport,
    Severity,
)


@dataclass
class FindingBatch:
    """Findings one analyzer produced for one corpus."""

    corpus_id: str
    findings: list[Finding] = field(default_factory=list)


def aggregate(
    batches: Iterable[FindingBatch],
    vuln_counts: Mapping[ComponentRef, int] | None = None,
    cdf_thresholds: Iterable[int] = (0, 1, 10, 100, 1000, 10000),
) -> ScanReport:
    """Merge finding batches into one deduplicated, deterministic report.

    Findings deduplicate on (rule_id, component, location). All batches
    must agree on the corpus id.
    """
    batches = list(batches)
    corpus_ids = {b.corpus_id for b in batches}
    if len(corpus_ids) > 1:
        raise ConsistencyError(f"batches span multiple corpus ids: {sorted(corpus_ids)}")
    corpus_id = corpus_ids.pop() if corpus_ids else ""
    merged: list[Finding] = []
    for batch in batches:
        merged.extend(batch.findings)
    merged.sort(key=Finding.sort_key)
    seen: set[tuple] = set()
    per_component: dict[ComponentRef, list[Finding]] = {}
    for finding in merged:
        key = finding.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        per_component.setdefault(finding.component, []).append(finding)
    counts = dict(vuln_counts or {})
    for component in counts:
        per_component.setdefault(component, [])
    report = ScanReport(corpus_id=corpus_id, per_component=per_component, vuln_counts=counts)
    report.recompute(cdf_thresholds)
    return report


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_SEVERITY_ORDER = (Severity.CRITICAL, Severity.HIGH, Severity.MEDIUM, Severity.LOW, Severity.UNKNOWN)


def report_to_dict(report: ScanReport) -> dict:
    components = sorted(
        set(report.per_component) | set(report.vuln_counts), key=ComponentRef.sort_key
    )
    body: dict = {
        "corpus_id": report.corpus_id,
        "components": [
            {
                "component": component.to_dict(),
                "vuln_count": report.vuln_counts.get(component, 0),
                "findings": [
                    f.to_dict()
                    for f in sorted(report.per_component.get(component, []), key=Finding.sort_key)
                ],
            }
            for component in components
        ],
        "severity_histogram": {
            sev.value: report.severity_histogram.get(sev, 0) for sev in _SEVERITY_ORDER
        },
        "stats": report.stats.to_dict() if report.stats else None,
        "cdf": [[threshold, fraction] for threshold, fraction in report.cdf_points],
    }
    return body


def parse_report(data: bytes | str) -> ScanReport:
    doc = json.loads(data)
    report = ScanReport(corpus_id=doc["corpus_id"])
    for item in doc["components"]:
        component = ComponentRef.from_dict(item["component"])
        report.per_component[component] = [Finding.from_dict(f) for f in item["findings"]]
        report.vuln_counts[component] = int(item["vuln_count"])
    report.severity_histogram = {
        Severity(name): count for name, count in doc["severity_histogram"].items() if count
    }
    report.stats = CountStats.from_dict(doc["stats"]) if doc.get("stats") else None
    report.cdf_points = [(int(t), float(f)) for t, f in doc.get("cdf", [])]
    return report


_SARIF_LEVELS = {
    Severity.CRITICAL: "error",
    Severity.HIGH: "error",
    Severity.MEDIUM: "warning",
    Severity.LOW: "note",
    Severity.UNKNOWN: "none",
}


def emit(report: ScanReport, format: str = "json") -> bytes:
    """Render a report as json, table, or sarif-like bytes."""
    if format == "json":
        return (json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n").encode()
    if format == "table":
        return _emit_table(report).encode()
    if format == "sarif-like":
        return (json.dumps(_emit_sarif(report), indent=2, sort_keys=True) + "\n").encode()
    raise ValueError(f"unknown output format {format!r} (expected json, table, or sarif-like)")


def _emit_table(report: ScanReport) -> str:
    lines: list[str] = []
    components = sorted(
        set(report.per_component) | set(report.vuln_counts), key=ComponentRef.sort_key
    )
    findings_total = sum(len(v) for v in report.per_component.values())
    lines.append(f"corpus: {report.corpus_id or '(unnamed)'}")
    lines.append(f"components: {len(components)}    findings: {findings_total}")
    if report.stats:
        s = report.stats
        lines.append(
            "vulns/component: "
            f"mean {s.mean:.1f}  median {s.median:.1f}  max {s.max}  min {s.min}  stddev {s.stddev:.1f}"
        )
    histogram = "  ".join(
        f"{sev.value} {report.severity_histogram.get(sev, 0)}" for sev in _SEVERITY_ORDER
    )
    lines.append(f"severity: {histogram}")
    if report.cdf_points:
        cdf = "  ".join(f"<={t}: {frac:.2f}" for t, frac in report.cdf_points)
        lines.append(f"cdf: {cdf}")
    header = f"{'component':<44} {'vulns':>5}  {'findings':>8}"
    lines.append("")
    lines.append(header)
    lines.append("-" * len(header))
    for component in components:
        slug = f"{component.repository.value}/{component.publisher}/{component.name}"
        lines.append(
            f"{slug:<44} {report.vuln_counts.get(component, 0):>5}  "
            f"{len(report.per_component.get(component, [])):>8}"
        )
    for component in components:
        for finding in report.per_component.get(component, []):
            lines.append(
                f"[{finding.severity.value:<8}] {finding.rule_id:<24} "
                f"{component.slug}:{finding.location}"
            )
    return "\n".join(lines) + "\n"


def _emit_sarif(report: ScanReport) -> dict:
    results = []
    rule_ids: dict[str, dict] = {}
    for finding in report.all_findings():
        rule_ids.setdefault(finding.rule_id, {"id": finding.rule_id})
        results.append(
            {
                "ruleId": finding.rule_id,
                "level": _SARIF_LEVELS[finding.severity],
                "message": {"text": finding.evidence},
                "locations": [
                    {
                        "physicalLocation": {
                            "artifactLocation": {
                                "uri": f"{finding.component.slug}/{finding.location}"
                            }
                        }
                    }
                ],
                "properties": {
                    "vector": finding.vector.value,
                    "severity": finding.severity.value,
                },
            }
        )
    return {
        "version": "2.1.0",
        "runs": [
            {
                "tool": {
                    "driver": {
                        "name": "slsa-audit",
                        "version": __version__,
                        "rules": [rule_ids[k] for k in sorted(rule_ids)],
                    }
                },
                "results": results,
            }
        ],
    }


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass
class AuditRun:
    """Run metadata; kept out of the report body so output stays byte-stable."""

    corpus_id: str
    enabled_vectors: set[AttackVector]
    report: ScanReport
    tool_versions: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    notices: list[str] = field(default_factory=list)

    def meta_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "enabled_vectors": sorted(v.value for v in self.enabled_vectors),
            "tool_versions": self.tool_versions,
            "started": self.started,
            "finished": self.finished,
            "notices": list(self.notices),
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def scan_vuln(
    entry: CorpusEntry,
    db: list[vulnscan.Advisory],
    config: AuditConfig,
    notices: list[str],
) -> tuple[list[Finding], int]:
    """V1 for one component: inventory, advisory matching, optional FP filter."""
    inventory = vulnscan.extract_inventory(entry.tree_path, notices)
    vulnscan.mark_source_references(inventory, entry.tree_path, config.source_extensions, notices)
    matches = vulnscan.match_advisories(inventory, db, notices)
    selected = matches
    if config.fp_filter:
        selected = vulnscan.filter_false_positives(matches).kept
    findings = []
    for match in selected:
        location = f"tree/{match.declared_in[0]}" if match.declared_in else "tree"
        suffix = " [metadata-only]" if match.fp_class is vulnscan.FpClass.METADATA_ONLY else ""
        findings.append(
            Finding(
                rule_id=f"V1-{match.advisory_id}",
                vector=AttackVector.V1,
                severity=match.severity,
                component=entry.ref,
                location=location,
                evidence=(
                    f"{match.package_name}@{match.package_version} ({match.ecosystem.value}) "
                    f"affected by {match.advisory_id}{suffix}"
                ),
                remediation=f"upgrade {match.package_name} past the affected range",
            )
        )
    return findings, len(matches)


def scan_archives(
    entry: CorpusEntry, config: AuditConfig, notices: list[str]
) -> list[Finding]:
    """V2 for one component: extract and signature-scan archives/."""
    findings: list[Finding] = []
    archives_dir = entry.archives_path
    if not archives_dir.is_dir():
        return findings
    for path in sorted(archives_dir.iterdir()):
        if not path.is_file():
            continue
        rel = f"archives/{path.name}"
        data = path.read_bytes()
        try:
            fmt = archive.detect_format(path.name, data[:512])
        except archive.UnsupportedFormatError as exc:
            notices.append(f"{entry.ref.slug}/{rel}: {exc}")
            continue
        try:
            entries = archive.extract_bytes(data, fmt, config.extraction_limits)
        except archive.EncryptedArchiveError:
            findings.append(
                Finding(
                    rule_id="V2-ENCRYPTED-ARCHIVE",
                    vector=AttackVector.V2,
                    severity=Severity.MEDIUM,
                    component=entry.ref,
                    location=rel,
                    evidence="archive content is encrypted and cannot be inspected",
                    remediation="reject components whose archives cannot be scanned",
                )
            )
            continue
        except (archive.ArchiveSecurityError, archive.DecompressionBombError) as exc:
            findings.append(
                Finding(
                    rule_id="V2-UNSAFE-ARCHIVE",
                    vector=AttackVector.V2,
                    severity=Severity.HIGH,
                    component=entry.ref,
                    location=rel,
                    evidence=str(exc),
                    remediation="do not extract this archive; inspect it manually",
                )
            )
            continue
        except archive.ExtractionError as exc:
            notices.append(f"{entry.ref.slug}/{rel}: {exc}")
            continue
        for match in archive.scan_entries(
            entries, config.signatures, config.recursion_depth, config.extraction_limits, notices
        ):
            findings.append(
                Finding(
                    rule_id="V2-SIGNATURE-MATCH",
                    vector=AttackVector.V2,
                    severity=Severity.CRITICAL,
                    component=entry.ref,
                    location=f"{rel}!{match.entry_path}",
                    evidence=f"signature {match.signature_id} matched",
                    remediation="remove the flagged file and audit the component",
                )
            )
    return findings


def scan_docker(entry: CorpusEntry, config: AuditConfig, notices: list[str]) -> list[Finding]:
    """V3 for one component: lint run_commands.txt."""
    commands_file = entry.run_commands_path
    if not commands_file.is_file():
        return []
    return dockerlint.lint_commands_text(
        commands_file.read_text(encoding="utf-8"),
        component=entry.ref,
        source_name="run_commands.txt",
        rules=config.docker_rules,
        key_config=config.sensitive_keys,
        notices=notices,
    )


def scan_iac(
    entry: CorpusEntry, config: AuditConfig, notices: list[str]
) -> list[tuple[iaclint.IaCFramework, Finding]]:
    """V4 for one component: lint every template under iac/."""
    tagged: list[tuple[iaclint.IaCFramework, Finding]] = []
    iac_dir = entry.iac_path
    if not iac_dir.is_dir():
        return tagged
    for path in sorted(iac_dir.rglob("*")):
        if not path.is_file():
            continue
        rel = f"iac/{path.relative_to(iac_dir).as_posix()}"
        try:
            framework, findings = iaclint.lint_template(
                rel,
                path.read_text(encoding="utf-8"),
                catalog=config.iac_catalog,
                component=entry.ref,
                notices=notices,
            )
        except iaclint.UnsupportedExtensionError:
            continue
        except iaclint.TemplateParseError as exc:
            notices.append(f"{entry.ref.slug}/{rel}: {exc}")
            continue
        tagged.extend((framework, f) for f in findings)
    return tagged


def scan_corpus(
    corpus_root: str | Path,
    config: AuditConfig | None = None,
    db: list[vulnscan.Advisory] | None = None,
    corpus_id: str | None = None,
    filter_serverless: bool = False,
) -> AuditRun:
    """Run every enabled vector over a corpus and aggregate one report."""
    config = config or AuditConfig()
    db = db or []
    started = _now()
    notices: list[str] = []
    load_result: CorpusLoadResult = load_corpus(corpus_root)
    for error in load_result.errors:
        notices.append(str(error))
    entries = load_result.entries
    if filter_serverless:
        entries = [e for e in entries if is_serverless(e)]
    corpus_id = corpus_id if corpus_id is not None else Path(corpus_root).name
    vectors = config.enabled_vectors

    batches: list[FindingBatch] = []
    vuln_counts: dict[ComponentRef, int] = {}
    for entry in entries:
        vuln_counts.setdefault(entry.ref, 0)
        if AttackVector.V1 in vectors:
            findings, count = scan_vuln(entry, db, config, notices)
            vuln_counts[entry.ref] = count
            batches.append(FindingBatch(corpus_id, findings))
        if AttackVector.V2 in vectors:
            batches.append(FindingBatch(corpus_id, scan_archives(entry, config, notices)))
        if AttackVector.V3 in vectors:
            batches.append(FindingBatch(corpus_id, scan_docker(entry, config, notices)))
        if AttackVector.V4 in vectors:
            tagged = scan_iac(entry, config, notices)
            batches.append(FindingBatch(corpus_id, [f for _, f in tagged]))
    if AttackVector.V5 in vectors:
        records = typosquat.build_name_records(
            (e.ref for e in entries), include_aws_sar=config.include_aws_sar
        )
        scan = typosquat.find_near_pairs(records, config.typosquat_max_distance)
        batches.append(FindingBatch(corpus_id, typosquat.findings_from_pairs(scan)))

    report = aggregate(batches, vuln_counts, config.cdf_thresholds)
    report.corpus_id = corpus_id
    return AuditRun(
        corpus_id=corpus_id,
        enabled_vectors=set(vectors),
        report=report,
        tool_versions={
            "slsa-audit": __version__,
            "python": platform.python_version(),
        },
        started=started,
        finished=_now(),
        notices=notices,
    )


def exit_code_for(report: ScanReport, fail_on: Severity | None) -> int:
    """0 clean, 1 when findings at/above the threshold exist."""
    if fail_on is None:
        return 0
    for finding in report.all_findings():
        if finding.severity.at_least(fail_on):
            return 1
    return 0

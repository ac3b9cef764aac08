"""Command-line interface: slsa-audit <subcommand>.

Exit codes: 0 clean, 1 findings at/above --fail-on, 2 operational error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from slsa_audit import __version__, archive, dockerlint, iaclint, typosquat, vulnscan
from slsa_audit.config import CONFIG_ENV_VAR, load_config
from slsa_audit.ingest import is_serverless, load_corpus
from slsa_audit.model import AuditError, Severity
from slsa_audit.report import (
    FindingBatch,
    aggregate,
    emit,
    exit_code_for,
    scan_corpus,
    scan_docker,
    scan_iac,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slsa-audit",
        description="Audit serverless components and corpora for supply-chain risks (V1-V5).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--output", choices=["json", "table", "sarif-like"], default="table",
                        help="report format (default: table)")
    parser.add_argument("--fail-on", choices=[s.value for s in Severity if s is not Severity.UNKNOWN],
                        help="exit 1 when findings at/above this severity exist")
    parser.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus and list its components")
    p.add_argument("--root", required=True)
    p.add_argument("--filter-serverless", action="store_true",
                   help="keep only components passing the serverless filter")

    p = sub.add_parser("vulnscan", help="match package inventories against an advisory DB")
    p.add_argument("--corpus", required=True)
    p.add_argument("--db", required=True, help="advisory database directory")
    p.add_argument("--fp-filter", action="store_true",
                   help="drop matches whose package is never referenced in source")
    p.add_argument("--compare", nargs=2, metavar=("SCAN_A", "SCAN_B"),
                   help="two external scanner reports to compare by Jaccard similarity")
    p.add_argument("--compare-format", nargs=2, metavar=("FMT_A", "FMT_B"),
                   default=["trivy-json", "grype-json"],
                   choices=["trivy-json", "grype-json"])

    p = sub.add_parser("archive", help="archive scanning and the injection harness")
    archive_sub = p.add_subparsers(dest="archive_command", required=True)
    scan_p = archive_sub.add_parser("scan", help="extract and signature-scan one archive")
    scan_p.add_argument("file")
    scan_p.add_argument("--depth", type=int, default=3, help="nested-archive recursion depth")
    scan_p.add_argument("--threshold", type=int, default=5, help="engine consensus threshold")
    scan_p.add_argument("--signatures", help="JSON-lines signature DB")
    inject_p = archive_sub.add_parser("inject", help="pack a tree with a payload (test harness)")
    inject_p.add_argument("tree")
    inject_p.add_argument("payload")
    inject_p.add_argument("--format", required=True,
                          choices=[f.value for f in archive.ArchiveFormat])
    inject_p.add_argument("-o", "--output-file", required=True)
    inject_p.add_argument("--dest-path", help="payload path inside the archive")
    inject_p.add_argument("--i-am-testing", action="store_true",
                          help="required acknowledgement that this builds test samples")

    p = sub.add_parser("docker", help="lint docker run commands")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus")
    group.add_argument("--cmd", help="one docker run command, or '-' to read commands from stdin")
    p.add_argument("--rules", help="JSON rules override file")

    p = sub.add_parser("iac", help="classify and lint IaC templates")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus")
    group.add_argument("--paths", nargs="+", help="explicit template files")
    p.add_argument("--catalog", help="JSON rule catalog")
    p.add_argument("--histogram", action="store_true", help="print per-framework severity counts")

    p = sub.add_parser("typosquat", help="find suspiciously similar names")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-distance", type=int, default=1)
    p.add_argument("--kind", choices=["username", "image"], help="restrict to one name kind")
    p.add_argument("--include-aws-sar", action="store_true")

    p = sub.add_parser("scan-all", help="run every enabled vector over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--db", help="advisory database directory")
    p.add_argument("--filter-serverless", action="store_true")
    p.add_argument("--run-meta", help="write run metadata JSON to this file")

    p = sub.add_parser("demo", help="materialize the bundled demo corpus")
    p.add_argument("--dest", required=True)

    return parser


def _cmd_ingest(args, config) -> int:
    result = load_corpus(args.root)
    entries = result.entries
    if args.filter_serverless:
        entries = [e for e in entries if is_serverless(e)]
    for entry in entries:
        print(f"{entry.ref.repository.value}/{entry.ref.publisher}/{entry.ref.name}"
              f"{'@' + entry.ref.version if entry.ref.version else ''}"
              f"  [{entry.artifact_kind.value}]")
    for error in result.errors:
        print(f"error: {error}", file=sys.stderr)
    print(f"{len(entries)} component(s), {len(result.errors)} manifest error(s)",
          file=sys.stderr)
    return 0


def _cmd_vulnscan(args, config, output: str, fail_on: Severity | None) -> int:
    if args.compare:
        fmt_a, fmt_b = args.compare_format
        sets_a = vulnscan.import_external_scan(args.compare[0], fmt_a)
        sets_b = vulnscan.import_external_scan(args.compare[1], fmt_b)
        for component in sorted(set(sets_a) | set(sets_b)):
            similarity = vulnscan.jaccard_similarity(
                sets_a.get(component, set()), sets_b.get(component, set())
            )
            print(f"{component}: jaccard {similarity:.3f} "
                  f"({len(sets_a.get(component, set()))} vs {len(sets_b.get(component, set()))})")
        return 0
    from dataclasses import replace

    from slsa_audit.report import scan_vuln

    config = replace(config, fp_filter=args.fp_filter or config.fp_filter)
    db = vulnscan.load_advisory_db(args.db)
    result = load_corpus(args.corpus)
    notices: list[str] = []
    batches, counts = [], {}
    corpus_id = Path(args.corpus).name
    for entry in result.entries:
        findings, count = scan_vuln(entry, db, config, notices)
        counts[entry.ref] = count
        batches.append(FindingBatch(corpus_id, findings))
    report = aggregate(batches, counts, config.cdf_thresholds)
    sys.stdout.buffer.write(emit(report, output))
    _print_notices(notices)
    return exit_code_for(report, fail_on)


def _cmd_archive(args, config, fail_on: Severity | None) -> int:
    if args.archive_command == "inject":
        if not args.i_am_testing:
            print("refusing to build an injection sample without --i-am-testing", file=sys.stderr)
            return 2
        blob = archive.inject_and_pack(
            args.tree, args.payload, archive.ArchiveFormat(args.format), args.dest_path
        )
        Path(args.output_file).write_bytes(blob)
        print(f"wrote {len(blob)} bytes to {args.output_file}", file=sys.stderr)
        return 0
    signatures = (
        archive.load_signatures(args.signatures) if args.signatures else archive.BUILTIN_SIGNATURES
    )
    entries = archive.extract(args.file, limits=config.extraction_limits)
    notices: list[str] = []
    matches = archive.scan_entries(entries, signatures, args.depth,
                                   config.extraction_limits, notices)
    verdict = archive.run_signature_engine("local", entries, signatures, args.depth,
                                           config.extraction_limits)
    consensus = archive.consensus_flag([verdict], args.threshold)
    for match in matches:
        print(f"match: {match.signature_id} at {match.entry_path}")
    print(f"{len(entries)} entries, {len(matches)} matches; "
          f"{consensus.engines_flagging} of 1 engine(s) flagging, threshold {args.threshold} "
          f"-> {'malicious' if consensus.malicious else 'not malicious'}",
          file=sys.stderr)
    _print_notices(notices)
    return 1 if matches and fail_on is not None else 0


def _cmd_docker(args, config, output: str, fail_on: Severity | None) -> int:
    rules, key_config = config.docker_rules, config.sensitive_keys
    if args.rules:
        rules, key_config = dockerlint.load_rules_file(args.rules)
    notices: list[str] = []
    if args.cmd:
        text = sys.stdin.read() if args.cmd == "-" else args.cmd
        findings = dockerlint.lint_commands_text(
            text, source_name="cmdline", rules=rules, key_config=key_config, notices=notices
        )
        batches = [FindingBatch("cmdline", findings)]
        report = aggregate(batches)
    else:
        from dataclasses import replace

        result = load_corpus(args.corpus)
        corpus_id = Path(args.corpus).name
        entry_config = replace(config, docker_rules=rules, sensitive_keys=key_config)
        batches = [
            FindingBatch(corpus_id, scan_docker(entry, entry_config, notices))
            for entry in result.entries
        ]
        report = aggregate(batches)
        report.corpus_id = corpus_id
    sys.stdout.buffer.write(emit(report, output))
    _print_notices(notices)
    return exit_code_for(report, fail_on)


def _cmd_iac(args, config, output: str, fail_on: Severity | None) -> int:
    catalog = tuple(iaclint.load_catalog(args.catalog)) if args.catalog else config.iac_catalog
    notices: list[str] = []
    tagged: list[tuple[iaclint.IaCFramework, object]] = []
    if args.corpus:
        from dataclasses import replace

        corpus_id = Path(args.corpus).name
        entry_config = replace(config, iac_catalog=catalog)
        result = load_corpus(args.corpus)
        for entry in result.entries:
            tagged.extend(scan_iac(entry, entry_config, notices))
    else:
        corpus_id = "paths"
        for path in args.paths:
            try:
                framework, findings = iaclint.lint_template(
                    path, Path(path).read_text(encoding="utf-8"),
                    catalog=catalog, notices=notices,
                )
            except (iaclint.UnsupportedExtensionError, iaclint.TemplateParseError) as exc:
                notices.append(str(exc))
                continue
            tagged.extend((framework, f) for f in findings)
    report = aggregate([FindingBatch(corpus_id, [f for _, f in tagged])])
    report.corpus_id = corpus_id
    sys.stdout.buffer.write(emit(report, output))
    if args.histogram:
        histogram = iaclint.severity_histogram(tagged)
        for framework in sorted(histogram.by_framework, key=lambda f: f.value):
            counts = histogram.by_framework[framework]
            rendered = "  ".join(f"{sev.value} {n}" for sev, n in sorted(
                counts.items(), key=lambda kv: kv[0].value))
            print(f"{framework.value}: {rendered}", file=sys.stderr)
    _print_notices(notices)
    return exit_code_for(report, fail_on)


def _cmd_typosquat(args, config) -> int:
    result = load_corpus(args.corpus)
    records = typosquat.build_name_records(
        (e.ref for e in result.entries),
        include_aws_sar=args.include_aws_sar or config.include_aws_sar,
    )
    if args.kind:
        kind = typosquat.NameKind.USERNAME if args.kind == "username" else typosquat.NameKind.IMAGE_NAME
        records = [r for r in records if r.kind is kind]
    scan = typosquat.find_near_pairs(records, args.max_distance)
    for pair in scan.pairs:
        print(f"d={pair.distance} [{pair.a.kind.value}] {pair.a.name!r} ({pair.a.owner.slug}) "
              f"~ {pair.b.name!r} ({pair.b.owner.slug})")
    for pair in scan.collisions:
        print(f"d=0 [collision] {pair.a.name!r}: {pair.a.owner.slug} vs {pair.b.owner.slug}")
    try:
        cdf = typosquat.distance_cdf(records, args.max_distance)
    except Exception:
        cdf = []
    if cdf:
        print("distance  cumulative_fraction")
        for distance, fraction in cdf:
            print(f"{distance:>8}  {fraction:.4f}")
    print(f"{len(scan.pairs)} near pair(s), {len(scan.collisions)} collision(s)", file=sys.stderr)
    return 0


def _cmd_scan_all(args, config, output: str, fail_on: Severity | None) -> int:
    db_notices: list[str] = []
    db = vulnscan.load_advisory_db(args.db, db_notices) if args.db else []
    run = scan_corpus(args.corpus, config, db, filter_serverless=args.filter_serverless)
    run.notices = db_notices + run.notices
    sys.stdout.buffer.write(emit(run.report, output))
    if args.run_meta:
        Path(args.run_meta).write_text(
            json.dumps(run.meta_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    _print_notices(run.notices)
    return exit_code_for(run.report, fail_on)


def _cmd_demo(args) -> int:
    from slsa_audit.demo import build_demo_corpus, build_demo_db

    dest = Path(args.dest)
    corpus = build_demo_corpus(dest / "corpus")
    db = build_demo_db(dest / "db")
    print(f"demo corpus: {corpus}", file=sys.stderr)
    print(f"advisory db: {db}", file=sys.stderr)
    return 0


def _print_notices(notices: list[str]) -> None:
    for notice in notices:
        print(f"notice: {notice}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        fail_on = Severity(args.fail_on) if args.fail_on else None
        if args.command == "ingest":
            return _cmd_ingest(args, config)
        if args.command == "vulnscan":
            return _cmd_vulnscan(args, config, args.output, fail_on)
        if args.command == "archive":
            return _cmd_archive(args, config, fail_on)
        if args.command == "docker":
            return _cmd_docker(args, config, args.output, fail_on)
        if args.command == "iac":
            return _cmd_iac(args, config, args.output, fail_on)
        if args.command == "typosquat":
            return _cmd_typosquat(args, config)
        if args.command == "scan-all":
            return _cmd_scan_all(args, config, args.output, fail_on)
        if args.command == "demo":
            return _cmd_demo(args)
        parser.error(f"unknown command {args.command!r}")
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end CLI behaviour over the demo corpus."""
from __future__ import annotations

import json

import pytest

from slsa_audit.cli import main
from slsa_audit.demo import build_demo_corpus, build_demo_db


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    dest = tmp_path_factory.mktemp("demo")
    corpus = build_demo_corpus(dest / "corpus")
    db = build_demo_db(dest / "db")
    return corpus, db


def test_demo_corpus_has_twelve_components(demo, capsys):
    corpus, _ = demo
    assert main(["ingest", "--root", str(corpus)]) == 0
    out = capsys.readouterr()
    assert len(out.out.strip().splitlines()) == 12


def test_ingest_filter_serverless(demo, capsys):
    corpus, _ = demo
    assert main(["ingest", "--root", str(corpus), "--filter-serverless"]) == 0
    filtered = capsys.readouterr().out.strip().splitlines()
    assert 0 < len(filtered) <= 12


def test_scan_all_json(demo, capsys):
    corpus, db = demo
    code = main(["--output", "json", "scan-all", "--corpus", str(corpus), "--db", str(db)])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["components"]) == 12
    rule_ids = {
        f["rule_id"] for c in doc["components"] for f in c["findings"]
    }
    # Every vector shows up in the demo corpus.
    assert any(r.startswith("V1-") for r in rule_ids)
    assert "V2-SIGNATURE-MATCH" in rule_ids
    assert "V3-DOCKER-SOCK" in rule_ids
    assert "R-ARN" in rule_ids and "R-CORS" in rule_ids
    assert "V5-NEAR-NAME" in rule_ids


def test_scan_all_fail_on(demo):
    corpus, db = demo
    assert main(["--output", "json", "--fail-on", "Critical",
                 "scan-all", "--corpus", str(corpus), "--db", str(db)]) == 1


def test_scan_all_byte_stable(demo, capsys):
    corpus, db = demo
    main(["--output", "json", "scan-all", "--corpus", str(corpus), "--db", str(db)])
    first = capsys.readouterr().out
    main(["--output", "json", "scan-all", "--corpus", str(corpus), "--db", str(db)])
    second = capsys.readouterr().out
    assert first == second


def test_scan_all_run_meta(demo, tmp_path, capsys):
    corpus, db = demo
    meta_path = tmp_path / "meta.json"
    main(["--output", "json", "scan-all", "--corpus", str(corpus),
          "--db", str(db), "--run-meta", str(meta_path)])
    capsys.readouterr()
    meta = json.loads(meta_path.read_text())
    assert meta["enabled_vectors"] == ["V1", "V2", "V3", "V4", "V5"]
    assert meta["started"] and meta["finished"]


def test_docker_cmd(demo, capsys):
    code = main(["--output", "json", "--fail-on", "High", "docker",
                 "--cmd", "docker run --privileged img"])
    assert code == 1
    doc = json.loads(capsys.readouterr().out)
    findings = doc["components"][0]["findings"]
    assert findings[0]["rule_id"] == "V3-PRIVILEGED"


def test_archive_scan_and_inject(demo, tmp_path, capsys):
    corpus, _ = demo
    bundle = corpus / "testbed__zip-bundle-serverless" / "archives" / "bundle.zip"
    assert main(["archive", "scan", str(bundle)]) == 0
    out = capsys.readouterr()
    assert "eicar" in out.out

    tree = tmp_path / "tree"
    tree.mkdir()
    (tree / "a.txt").write_text("hello")
    payload = tmp_path / "p.txt"
    payload.write_text("payload")
    out_file = tmp_path / "out.tar.gz"
    # gated without acknowledgement
    assert main(["archive", "inject", str(tree), str(payload),
                 "--format", "tar.gz", "-o", str(out_file)]) == 2
    assert main(["archive", "inject", str(tree), str(payload),
                 "--format", "tar.gz", "-o", str(out_file), "--i-am-testing"]) == 0
    assert out_file.is_file()


def test_vulnscan_compare(tmp_path, capsys):
    scan_a = tmp_path / "a.json"
    scan_b = tmp_path / "b.json"
    scan_a.write_text(json.dumps({
        "Results": [{"Target": "img", "Vulnerabilities": [
            {"VulnerabilityID": "CVE-1"}, {"VulnerabilityID": "CVE-2"}]}]
    }))
    scan_b.write_text(json.dumps({
        "source": {"target": "img"},
        "matches": [{"vulnerability": {"id": "CVE-2"}}, {"vulnerability": {"id": "CVE-3"}}],
    }))
    code = main(["vulnscan", "--corpus", "unused", "--db", "unused",
                 "--compare", str(scan_a), str(scan_b)])
    assert code == 0
    out = capsys.readouterr().out
    assert "jaccard 0.333" in out


def test_iac_over_corpus(demo, capsys):
    corpus, _ = demo
    code = main(["--output", "json", "iac", "--corpus", str(corpus), "--histogram"])
    assert code == 0
    captured = capsys.readouterr()
    doc = json.loads(captured.out)
    rule_ids = {f["rule_id"] for c in doc["components"] for f in c["findings"]}
    assert {"R-ARN", "R-KMS", "R-CORS"} <= rule_ids
    assert "Terraform" in captured.err


def test_typosquat_over_corpus(demo, capsys):
    corpus, _ = demo
    assert main(["typosquat", "--corpus", str(corpus), "--max-distance", "1"]) == 0
    out = capsys.readouterr().out
    assert "serverless-resizer" in out


def test_operational_error_exit_code(tmp_path, capsys):
    assert main(["ingest", "--root", str(tmp_path / "missing")]) == 2
    capsys.readouterr()


def test_config_threading(demo, tmp_path, capsys):
    corpus, db = demo
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"enabled_vectors": ["V3"]}))
    main(["--config", str(config_path), "--output", "json",
          "scan-all", "--corpus", str(corpus), "--db", str(db)])
    doc = json.loads(capsys.readouterr().out)
    vectors = {f["vector"] for c in doc["components"] for f in c["findings"]}
    assert vectors == {"V3"}


def test_config_env_var_fallback(demo, tmp_path, capsys, monkeypatch):
    corpus, db = demo
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"enabled_vectors": ["V4"]}))
    monkeypatch.setenv("SLSA_AUDIT_CONFIG", str(config_path))
    main(["--output", "json", "scan-all", "--corpus", str(corpus), "--db", str(db)])
    doc = json.loads(capsys.readouterr().out)
    vectors = {f["vector"] for c in doc["components"] for f in c["findings"]}
    assert vectors == {"V4"}


def test_docker_stdin(monkeypatch, capsys):
    import io

    monkeypatch.setattr("sys.stdin", io.StringIO("docker run --privileged img\n"))
    assert main(["--output", "json", "docker", "--cmd", "-"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["components"][0]["findings"][0]["rule_id"] == "V3-PRIVILEGED"

"""Runtime configuration: every analyzer knob in one JSON-loadable object.

Resolution order for the CLI: --config flag, then the SLSA_AUDIT_CONFIG
environment variable, then built-in defaults.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from slsa_audit import dockerlint, iaclint, vulnscan
from slsa_audit.archive import BUILTIN_SIGNATURES, ExtractionLimits, Signature, load_signatures
from slsa_audit.model import AttackVector, AuditError


class ConfigError(AuditError, ValueError):
    pass


CONFIG_ENV_VAR = "SLSA_AUDIT_CONFIG"


@dataclass(frozen=True)
class AuditConfig:
    enabled_vectors: frozenset[AttackVector] = frozenset(AttackVector)
    # vulnscan
    source_extensions: tuple[str, ...] = vulnscan.SOURCE_EXTENSIONS
    metadata_extensions: tuple[str, ...] = vulnscan.METADATA_EXTENSIONS
    fp_filter: bool = False
    # archive
    extraction_limits: ExtractionLimits = ExtractionLimits()
    recursion_depth: int = 3
    consensus_threshold: int = 5
    signatures: tuple[Signature, ...] = BUILTIN_SIGNATURES
    # dockerlint
    docker_rules: dict = field(default_factory=lambda: dict(dockerlint.DEFAULT_RULES))
    sensitive_keys: dockerlint.SensitiveKeyConfig = dockerlint.DEFAULT_KEY_CONFIG
    # iaclint
    iac_catalog: tuple[iaclint.MisconfigRule, ...] = iaclint.DEFAULT_CATALOG
    cors_substrings: tuple[str, ...] = iaclint.CORS_KEY_SUBSTRINGS
    auth_keys: tuple[str, ...] = iaclint.AUTH_KEYS
    # typosquat
    typosquat_max_distance: int = 1
    include_aws_sar: bool = False
    # reporting
    cdf_thresholds: tuple[int, ...] = (0, 1, 10, 100, 1000, 10000)


def load_config(path: str | Path | None = None) -> AuditConfig:
    """Build an AuditConfig from a JSON file (or defaults when absent)."""
    if path is None:
        env_path = os.environ.get(CONFIG_ENV_VAR)
        if not env_path:
            return AuditConfig()
        path = env_path
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    config = AuditConfig()
    try:
        if "enabled_vectors" in doc:
            config = replace(
                config,
                enabled_vectors=frozenset(AttackVector(v) for v in doc["enabled_vectors"]),
            )
        vuln = doc.get("vulnscan", {})
        if "source_extensions" in vuln:
            config = replace(config, source_extensions=tuple(vuln["source_extensions"]))
        if "metadata_extensions" in vuln:
            config = replace(config, metadata_extensions=tuple(vuln["metadata_extensions"]))
        if "fp_filter" in vuln:
            config = replace(config, fp_filter=bool(vuln["fp_filter"]))
        arch = doc.get("archive", {})
        limits = config.extraction_limits
        if "max_expansion_ratio" in arch:
            limits = ExtractionLimits(
                max_expansion_ratio=float(arch["max_expansion_ratio"]),
                max_total_bytes=limits.max_total_bytes,
            )
        if "max_total_bytes" in arch:
            limits = ExtractionLimits(
                max_expansion_ratio=limits.max_expansion_ratio,
                max_total_bytes=int(arch["max_total_bytes"]),
            )
        config = replace(
            config,
            extraction_limits=limits,
            recursion_depth=int(arch.get("recursion_depth", config.recursion_depth)),
            consensus_threshold=int(arch.get("consensus_threshold", config.consensus_threshold)),
        )
        if "signature_db" in arch:
            config = replace(config, signatures=tuple(load_signatures(arch["signature_db"])))
        docker = doc.get("dockerlint", {})
        if docker:
            key_config = dockerlint.SensitiveKeyConfig(
                patterns=tuple(docker.get("sensitive_key_patterns", config.sensitive_keys.patterns)),
                exact=tuple(docker.get("sensitive_keys_exact", config.sensitive_keys.exact)),
                min_value_length=int(
                    docker.get("min_value_length", config.sensitive_keys.min_value_length)
                ),
                entropy_threshold=float(
                    docker.get("entropy_threshold", config.sensitive_keys.entropy_threshold)
                ),
            )
            config = replace(config, sensitive_keys=key_config)
        iac = doc.get("iaclint", {})
        if "catalog" in iac:
            config = replace(config, iac_catalog=tuple(iaclint.load_catalog(iac["catalog"])))
        if "cors_substrings" in iac:
            config = replace(config, cors_substrings=tuple(iac["cors_substrings"]))
        if "auth_keys" in iac:
            config = replace(config, auth_keys=tuple(iac["auth_keys"]))
        squat = doc.get("typosquat", {})
        config = replace(
            config,
            typosquat_max_distance=int(squat.get("max_distance", config.typosquat_max_distance)),
            include_aws_sar=bool(squat.get("include_aws_sar", config.include_aws_sar)),
        )
        report = doc.get("report", {})
        if "cdf_thresholds" in report:
            config = replace(config, cdf_thresholds=tuple(int(t) for t in report["cdf_thresholds"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: bad config value: {exc}") from exc
    return config

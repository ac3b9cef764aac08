"""slsa-audit: static analysis of serverless components and corpora.

Analyzers cover five attack vectors: vulnerable dependencies (V1), malicious
payloads hidden in compressed components (V2), sensitive Docker run
parameters (V3), IaC template misconfigurations (V4), and typo-squatting (V5).
"""

from slsa_audit.model import (
    AttackVector,
    AuditError,
    ComponentRef,
    Finding,
    Repository,
    ScanReport,
    Severity,
    severity_band,
)

__version__ = "0.1.0"

__all__ = [
    "AttackVector",
    "AuditError",
    "ComponentRef",
    "Finding",
    "Repository",
    "ScanReport",
    "Severity",
    "severity_band",
    "__version__",
]

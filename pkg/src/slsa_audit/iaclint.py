"""IaC template classification and misconfiguration rules (V4).

Templates are classified into Terraform / CloudFormation / SAM, parsed into
a framework-neutral resource model, and checked by a data-driven rule
catalog plus the dedicated wildcard-CORS check.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import yaml

from slsa_audit.model import AttackVector, AuditError, ComponentRef, Finding, Repository, Severity
from slsa_audit.tfparse import TerraformParseError, Undetermined, parse_terraform

SAM_TRANSFORM = "AWS::Serverless-2016-10-31"


class UnsupportedExtensionError(AuditError, ValueError):
    """Template extension is not .tf/.json/.yaml/.yml."""


class TemplateParseError(AuditError, ValueError):
    """Template body failed structural parsing."""


class IaCFramework(Enum):
    TERRAFORM = "Terraform"
    CLOUDFORMATION = "CloudFormation"
    SAM = "SAM"


@dataclass(frozen=True)
class IntrinsicRef:
    """A short-form intrinsic (!Ref, !GetAtt, ...) kept as an opaque node."""

    tag: str
    value: object


def _is_undetermined(value: object) -> bool:
    if isinstance(value, (IntrinsicRef, Undetermined)):
        return True
    # Long-form intrinsics in JSON templates: {"Ref": ...} / {"Fn::*": ...}.
    if isinstance(value, dict) and len(value) == 1:
        key = next(iter(value))
        return key == "Ref" or key.startswith("Fn::")
    return False


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line_start: int
    line_end: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line_start}-{self.line_end}"


@dataclass
class ResourceNode:
    logical_id: str
    resource_type: str
    properties: dict
    source_span: SourceSpan


@dataclass
class TemplateModel:
    framework: IaCFramework
    path: str
    parameters: dict[str, dict] = field(default_factory=dict)
    resources: list[ResourceNode] = field(default_factory=list)
    transforms: list[str] = field(default_factory=list)
    line_count: int = 0


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

_TRANSFORM_TEXT_RE = re.compile(
    r"['\"]?Transform['\"]?\s*:\s*\[?\s*['\"]?" + re.escape(SAM_TRANSFORM)
)


def _structured_load(contents: str) -> object:
    return yaml.load(contents, Loader=_IaCLoader)


def classify_template(
    path: str, contents: str, notices: list[str] | None = None
) -> IaCFramework:
    """Classify by extension, with SAM detected via its Transform directive.

    Unparseable structured documents fall back to a textual scan for the
    directive, recorded as a notice.
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".tf":
        return IaCFramework.TERRAFORM
    if suffix not in (".json", ".yaml", ".yml"):
        raise UnsupportedExtensionError(
            f"unsupported template extension {suffix!r} for {path} (expected .tf/.json/.yaml/.yml)"
        )
    try:
        doc = _structured_load(contents)
    except yaml.YAMLError:
        if notices is not None:
            notices.append(f"{path}: structured parse failed; classified textually")
        if _TRANSFORM_TEXT_RE.search(contents):
            return IaCFramework.SAM
        return IaCFramework.CLOUDFORMATION
    if isinstance(doc, dict):
        transform = doc.get("Transform")
        values = transform if isinstance(transform, list) else [transform]
        if any(v == SAM_TRANSFORM for v in values):
            return IaCFramework.SAM
    return IaCFramework.CLOUDFORMATION


# ---------------------------------------------------------------------------
# Structured parsing with source spans
# ---------------------------------------------------------------------------


class _IaCLoader(yaml.SafeLoader):
    """SafeLoader that wraps unknown (intrinsic) tags as opaque nodes."""


def _intrinsic_constructor(loader: yaml.Loader, tag_suffix: str, node: yaml.Node):
    if isinstance(node, yaml.ScalarNode):
        value: object = loader.construct_scalar(node)
    elif isinstance(node, yaml.SequenceNode):
        value = loader.construct_sequence(node)
    else:
        value = loader.construct_mapping(node)
    return IntrinsicRef(tag="!" + tag_suffix, value=value)


_IaCLoader.add_multi_constructor("!", _intrinsic_constructor)


def _node_to_value(node: yaml.Node) -> object:
    """Construct a plain value tree from a composed node, keeping intrinsics."""
    if isinstance(node, yaml.ScalarNode):
        if node.tag.startswith("tag:yaml.org,2002:"):
            kind = node.tag.rsplit(":", 1)[-1]
            if kind == "int":
                try:
                    return int(node.value)
                except ValueError:
                    return node.value
            if kind == "float":
                try:
                    return float(node.value)
                except ValueError:
                    return node.value
            if kind == "bool":
                return node.value.lower() in ("true", "yes", "on")
            if kind == "null":
                return None
            return node.value
        return IntrinsicRef(tag=node.tag, value=node.value)
    if isinstance(node, yaml.SequenceNode):
        return [_node_to_value(child) for child in node.value]
    if isinstance(node, yaml.MappingNode):
        if not node.tag.startswith("tag:yaml.org,2002:"):
            return IntrinsicRef(
                tag=node.tag,
                value={str(_node_to_value(k)): _node_to_value(v) for k, v in node.value},
            )
        out = {}
        for key_node, value_node in node.value:
            key = _node_to_value(key_node)
            out[str(key)] = _node_to_value(value_node)
        return out
    raise TemplateParseError(f"unsupported YAML node {node!r}")


def parse_template(contents: str, framework: IaCFramework, path: str = "<template>") -> TemplateModel:
    """Parse a classified template into the neutral resource model."""
    if framework is IaCFramework.TERRAFORM:
        return _parse_terraform_model(contents, path)
    return _parse_cfn_model(contents, framework, path)


def _parse_cfn_model(contents: str, framework: IaCFramework, path: str) -> TemplateModel:
    try:
        root = yaml.compose(contents, Loader=_IaCLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark else ""
        raise TemplateParseError(f"{path}: YAML/JSON syntax error{line}: {exc}") from exc
    model = TemplateModel(framework=framework, path=path, line_count=contents.count("\n") + 1)
    if root is None:
        return model
    if not isinstance(root, yaml.MappingNode):
        raise TemplateParseError(f"{path}: template root must be a mapping")
    for key_node, value_node in root.value:
        key = str(_node_to_value(key_node))
        if key == "Transform":
            value = _node_to_value(value_node)
            model.transforms = value if isinstance(value, list) else [value]
        elif key == "Parameters":
            if isinstance(value_node, yaml.MappingNode):
                for name_node, param_node in value_node.value:
                    param = _node_to_value(param_node)
                    if isinstance(param, dict):
                        model.parameters[str(_node_to_value(name_node))] = param
        elif key == "Resources":
            if not isinstance(value_node, yaml.MappingNode):
                continue
            seen: set[str] = set()
            for name_node, resource_node in value_node.value:
                logical_id = str(_node_to_value(name_node))
                if logical_id in seen:
                    raise TemplateParseError(f"{path}: duplicate logical id {logical_id!r}")
                seen.add(logical_id)
                resource = _node_to_value(resource_node)
                if not isinstance(resource, dict):
                    continue
                span = SourceSpan(
                    file=path,
                    line_start=name_node.start_mark.line + 1,
                    line_end=max(resource_node.end_mark.line, name_node.start_mark.line + 1),
                )
                model.resources.append(
                    ResourceNode(
                        logical_id=logical_id,
                        resource_type=str(resource.get("Type", "")),
                        properties=resource.get("Properties") or {},
                        source_span=span,
                    )
                )
    if framework is IaCFramework.SAM and SAM_TRANSFORM not in model.transforms:
        model.transforms.append(SAM_TRANSFORM)
    return model


def _parse_terraform_model(contents: str, path: str) -> TemplateModel:
    try:
        blocks = parse_terraform(contents)
    except TerraformParseError as exc:
        raise TemplateParseError(f"{path}: {exc}") from exc
    model = TemplateModel(
        framework=IaCFramework.TERRAFORM, path=path, line_count=contents.count("\n") + 1
    )
    for block in blocks:
        if block.kind == "resource" and len(block.labels) >= 2:
            model.resources.append(
                ResourceNode(
                    logical_id=f"{block.labels[0]}.{block.labels[1]}",
                    resource_type=block.labels[0],
                    properties=block.body,
                    source_span=SourceSpan(path, block.line_start, block.line_end),
                )
            )
        elif block.kind == "variable" and block.labels:
            model.parameters[block.labels[0]] = {
                "Default": block.body.get("default"),
                "Type": block.body.get("type"),
            }
    return model


# ---------------------------------------------------------------------------
# Rule catalog and matcher mini-language
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleMatcher:
    """Matcher for one framework: resource-type selector + property predicate.

    Predicates: {"absent": path} | {"present": path} | {"equals": [path, value]}
    | {"wildcard": path} | {"any": [...]} | {"all": [...]} | {"not": {...}}.
    Paths are dot-separated property keys; lists broadcast automatically.
    """

    resource_types: tuple[str, ...]
    predicate: dict


@dataclass(frozen=True)
class MisconfigRule:
    rule_id: str
    severity: Severity
    description: str
    remediation: str = ""
    matchers: dict[IaCFramework, RuleMatcher] = field(default_factory=dict)

    @property
    def frameworks(self) -> set[IaCFramework]:
        return set(self.matchers)


def _resolve_path(value: object, segments: list[str]) -> list[object]:
    """All values reachable at the path; lists map over their elements."""
    if not segments:
        return [value]
    if isinstance(value, list):
        out: list[object] = []
        for item in value:
            out.extend(_resolve_path(item, segments))
        return out
    head, *rest = segments
    if isinstance(value, dict):
        if head == "*":
            out = []
            for child in value.values():
                out.extend(_resolve_path(child, rest))
            return out
        if head in value:
            return _resolve_path(value[head], rest)
    return []


def _eval_predicate(predicate: dict, properties: dict) -> bool | None:
    """Tri-state evaluation: True/False, or None when undetermined."""
    if "all" in predicate:
        result: bool | None = True
        for sub in predicate["all"]:
            verdict = _eval_predicate(sub, properties)
            if verdict is None:
                return None
            result = result and verdict
        return result
    if "any" in predicate:
        result = False
        for sub in predicate["any"]:
            verdict = _eval_predicate(sub, properties)
            if verdict is None:
                return None
            result = result or verdict
        return result
    if "not" in predicate:
        verdict = _eval_predicate(predicate["not"], properties)
        return None if verdict is None else not verdict
    if "absent" in predicate:
        values = _resolve_path(properties, predicate["absent"].split("."))
        return len(values) == 0
    if "present" in predicate:
        values = _resolve_path(properties, predicate["present"].split("."))
        return len(values) > 0
    if "equals" in predicate:
        path, expected = predicate["equals"]
        values = _resolve_path(properties, path.split("."))
        if any(_is_undetermined(v) for v in values):
            return None
        return any(v == expected for v in values)
    if "wildcard" in predicate:
        values = _resolve_path(properties, predicate["wildcard"].split("."))
        if any(_is_undetermined(v) for v in values):
            return None
        return any(_is_wildcard_origin(v) for v in values)
    raise ValueError(f"unknown predicate {predicate!r}")


def _is_wildcard_origin(value: object) -> bool:
    if isinstance(value, str):
        return value.strip() in ("*", "'*'", '"*"')
    if isinstance(value, list):
        return any(_is_wildcard_origin(v) for v in value)
    return False


DEFAULT_CATALOG: tuple[MisconfigRule, ...] = (
    MisconfigRule(
        rule_id="R-ARN",
        severity=Severity.HIGH,
        description="Lambda permission without a source ARN allows any principal of the service to invoke the function",
        remediation="set SourceArn to the specific resource allowed to invoke",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::Lambda::Permission",), {"absent": "SourceArn"}
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::Lambda::Permission",), {"absent": "SourceArn"}
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_lambda_permission",), {"absent": "source_arn"}
            ),
        },
    ),
    MisconfigRule(
        rule_id="R-KMS",
        severity=Severity.MEDIUM,
        description="S3 bucket encrypted with an AWS-managed key instead of a customer-managed KMS key",
        remediation="reference a customer-managed key id in the bucket encryption settings",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::S3::Bucket",),
                {
                    "all": [
                        {
                            "present": "BucketEncryption.ServerSideEncryptionConfiguration."
                            "ServerSideEncryptionByDefault.SSEAlgorithm"
                        },
                        {
                            "absent": "BucketEncryption.ServerSideEncryptionConfiguration."
                            "ServerSideEncryptionByDefault.KMSMasterKeyID"
                        },
                    ]
                },
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::S3::Bucket",),
                {
                    "all": [
                        {
                            "present": "BucketEncryption.ServerSideEncryptionConfiguration."
                            "ServerSideEncryptionByDefault.SSEAlgorithm"
                        },
                        {
                            "absent": "BucketEncryption.ServerSideEncryptionConfiguration."
                            "ServerSideEncryptionByDefault.KMSMasterKeyID"
                        },
                    ]
                },
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_s3_bucket", "aws_s3_bucket_server_side_encryption_configuration"),
                {
                    "all": [
                        {
                            "present": "server_side_encryption_configuration.rule."
                            "apply_server_side_encryption_by_default.sse_algorithm"
                        },
                        {
                            "absent": "server_side_encryption_configuration.rule."
                            "apply_server_side_encryption_by_default.kms_master_key_id"
                        },
                    ]
                },
            ),
        },
    ),
    MisconfigRule(
        rule_id="IAC-S3-PUBLIC-ACL",
        severity=Severity.HIGH,
        description="S3 bucket grants public access through its ACL",
        remediation="switch the ACL to private and use bucket policies for scoped access",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::S3::Bucket",),
                {"any": [{"equals": ["AccessControl", "PublicRead"]},
                          {"equals": ["AccessControl", "PublicReadWrite"]}]},
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::S3::Bucket",),
                {"any": [{"equals": ["AccessControl", "PublicRead"]},
                          {"equals": ["AccessControl", "PublicReadWrite"]}]},
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_s3_bucket", "aws_s3_bucket_acl"),
                {"any": [{"equals": ["acl", "public-read"]},
                          {"equals": ["acl", "public-read-write"]}]},
            ),
        },
    ),
    MisconfigRule(
        rule_id="IAC-IAM-WILDCARD-ACTION",
        severity=Severity.HIGH,
        description="IAM policy statement allows every action",
        remediation="enumerate the specific actions the role needs",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::IAM::Policy", "AWS::IAM::Role", "AWS::IAM::ManagedPolicy"),
                {"any": [
                    {"equals": ["PolicyDocument.Statement.Action", "*"]},
                    {"equals": ["Policies.PolicyDocument.Statement.Action", "*"]},
                ]},
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::IAM::Policy", "AWS::IAM::Role", "AWS::IAM::ManagedPolicy"),
                {"any": [
                    {"equals": ["PolicyDocument.Statement.Action", "*"]},
                    {"equals": ["Policies.PolicyDocument.Statement.Action", "*"]},
                ]},
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_iam_policy", "aws_iam_role_policy"),
                {"equals": ["policy.Statement.Action", "*"]},
            ),
        },
    ),
    MisconfigRule(
        rule_id="IAC-LAMBDA-ENV-NO-KMS",
        severity=Severity.MEDIUM,
        description="Lambda environment variables are not encrypted with a customer-managed key",
        remediation="set KmsKeyArn so environment variables are encrypted at rest with a key you control",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::Lambda::Function",),
                {"all": [{"present": "Environment.Variables"}, {"absent": "KmsKeyArn"}]},
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::Lambda::Function", "AWS::Serverless::Function"),
                {"all": [{"present": "Environment.Variables"}, {"absent": "KmsKeyArn"}]},
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_lambda_function",),
                {"all": [{"present": "environment.variables"}, {"absent": "kms_key_arn"}]},
            ),
        },
    ),
    MisconfigRule(
        rule_id="IAC-API-LOGGING-DISABLED",
        severity=Severity.LOW,
        description="API stage has no access logging configured",
        remediation="configure access log settings on the stage",
        matchers={
            IaCFramework.CLOUDFORMATION: RuleMatcher(
                ("AWS::ApiGateway::Stage", "AWS::ApiGatewayV2::Stage"),
                {"absent": "AccessLogSettings"},
            ),
            IaCFramework.SAM: RuleMatcher(
                ("AWS::ApiGateway::Stage", "AWS::ApiGatewayV2::Stage", "AWS::Serverless::Api"),
                {"absent": "AccessLogSetting"},
            ),
            IaCFramework.TERRAFORM: RuleMatcher(
                ("aws_api_gateway_stage",), {"absent": "access_log_settings"}
            ),
        },
    ),
)


def load_catalog(path: str | Path) -> list[MisconfigRule]:
    """Load a JSON rule catalog: a list of rule objects with per-framework
    matchers ({framework: {resource_types, predicate}})."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rules: list[MisconfigRule] = []
    seen: set[str] = set()
    for entry in doc:
        rule_id = entry["rule_id"]
        if rule_id in seen:
            raise ValueError(f"duplicate rule id {rule_id!r} in catalog")
        seen.add(rule_id)
        matchers = {
            IaCFramework(name): RuleMatcher(
                resource_types=tuple(matcher["resource_types"]),
                predicate=matcher["predicate"],
            )
            for name, matcher in entry["matchers"].items()
        }
        rules.append(
            MisconfigRule(
                rule_id=rule_id,
                severity=Severity(entry["severity"]),
                description=entry.get("description", ""),
                remediation=entry.get("remediation", ""),
                matchers=matchers,
            )
        )
    return rules


_FALLBACK_COMPONENT = ComponentRef(Repository.LOCAL_CORPUS, "adhoc", "template")


def run_rules(
    model: TemplateModel,
    catalog: Iterable[MisconfigRule] = DEFAULT_CATALOG,
    component: ComponentRef | None = None,
    notices: list[str] | None = None,
) -> list[Finding]:
    """Apply every catalog rule declared for the model's framework.

    Undetermined property values (references, interpolations) make a rule
    skip the resource with a notice instead of firing.
    """
    component = component or _FALLBACK_COMPONENT
    findings: list[Finding] = []
    for rule in catalog:
        matcher = rule.matchers.get(model.framework)
        if matcher is None:
            continue
        for resource in model.resources:
            if resource.resource_type not in matcher.resource_types:
                continue
            verdict = _eval_predicate(matcher.predicate, resource.properties)
            if verdict is None:
                if notices is not None:
                    notices.append(
                        f"{model.path}: {rule.rule_id} undetermined for {resource.logical_id}"
                    )
                continue
            if verdict:
                findings.append(
                    Finding(
                        rule_id=rule.rule_id,
                        vector=AttackVector.V4,
                        severity=rule.severity,
                        component=component,
                        location=f"{model.path}:{resource.logical_id}"
                        f"@{resource.source_span.line_start}-{resource.source_span.line_end}",
                        evidence=f"{resource.resource_type} {resource.logical_id}: {rule.description}",
                        remediation=rule.remediation,
                    )
                )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------
# Wildcard CORS check
# ---------------------------------------------------------------------------

CORS_KEY_SUBSTRINGS = ("corsorigin", "alloworigin")
AUTH_KEYS = ("auth", "authorizer", "authorizers")

_API_RESOURCE_TYPES = (
    "AWS::Serverless::Api",
    "AWS::Serverless::HttpApi",
    "AWS::ApiGateway::RestApi",
    "AWS::ApiGateway::Method",
    "AWS::ApiGatewayV2::Api",
    "aws_api_gateway_rest_api",
    "aws_apigatewayv2_api",
)

CORS_RULE_ID = "R-CORS"


def _normalize_key(key: str) -> str:
    return re.sub(r"[^a-z0-9]", "", key.lower())


def _is_cors_key(key: str, substrings: tuple[str, ...]) -> bool:
    normalized = _normalize_key(key)
    return any(s in normalized for s in substrings)


def _walk_items(tree: object):
    if isinstance(tree, dict):
        for key, value in tree.items():
            yield key, value
            yield from _walk_items(value)
    elif isinstance(tree, list):
        for item in tree:
            yield from _walk_items(item)


def _resource_has_auth(resource: ResourceNode, auth_keys: tuple[str, ...]) -> bool:
    for key, value in _walk_items(resource.properties):
        normalized = _normalize_key(str(key))
        if normalized in auth_keys and value not in (None, {}, []):
            return True
        if normalized == "authorizationtype" and isinstance(value, str) and value.upper() != "NONE":
            return True
    return False


def check_cors_wildcard(
    model: TemplateModel,
    component: ComponentRef | None = None,
    cors_substrings: tuple[str, ...] = CORS_KEY_SUBSTRINGS,
    auth_keys: tuple[str, ...] = AUTH_KEYS,
) -> list[Finding]:
    """Flag wildcard CORS origins; severity depends on API authentication.

    A wildcard origin feeding an unauthenticated API is High; a wildcard
    with every relevant API authenticated (or none present) is a Low
    advisory. Templates without CORS-related keys yield nothing.
    """
    component = component or _FALLBACK_COMPONENT
    wildcard_sites: list[tuple[str, ResourceNode | None]] = []
    for name, param in model.parameters.items():
        if _is_cors_key(name, cors_substrings) and _is_wildcard_origin(param.get("Default")):
            wildcard_sites.append((f"parameter {name}", None))
    for resource in model.resources:
        for key, value in _walk_items(resource.properties):
            if _is_cors_key(str(key), cors_substrings) and _is_wildcard_origin(value):
                wildcard_sites.append((f"{resource.logical_id}.{key}", resource))
    if not wildcard_sites:
        return []

    apis = [r for r in model.resources if r.resource_type in _API_RESOURCE_TYPES]
    findings: list[Finding] = []
    for site, owner in wildcard_sites:
        if owner is not None and owner.resource_type in _API_RESOURCE_TYPES:
            relevant = [owner]
        else:
            relevant = apis
        unauthenticated = [r for r in relevant if not _resource_has_auth(r, auth_keys)]
        if unauthenticated:
            target = unauthenticated[0]
            findings.append(
                Finding(
                    rule_id=CORS_RULE_ID,
                    vector=AttackVector.V4,
                    severity=Severity.HIGH,
                    component=component,
                    location=f"{model.path}:{site}",
                    evidence=(
                        f"wildcard CORS origin at {site} feeds unauthenticated API "
                        f"{target.logical_id}: any domain can call it"
                    ),
                    remediation="pin the allowed origin and add an authorizer to the API",
                )
            )
        else:
            findings.append(
                Finding(
                    rule_id=CORS_RULE_ID,
                    vector=AttackVector.V4,
                    severity=Severity.LOW,
                    component=component,
                    location=f"{model.path}:{site}",
                    evidence=f"wildcard CORS origin at {site}; APIs declare authentication",
                    remediation="pin the allowed origin to the front-end domains",
                )
            )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------
# Histogram
# ---------------------------------------------------------------------------


@dataclass
class IaCHistogram:
    total: dict[Severity, int] = field(default_factory=dict)
    by_framework: dict[IaCFramework, dict[Severity, int]] = field(default_factory=dict)


def severity_histogram(
    tagged_findings: Iterable[tuple[IaCFramework, Finding]]
) -> IaCHistogram:
    """Severity counts, total and split per framework."""
    histogram = IaCHistogram()
    for framework, finding in tagged_findings:
        histogram.total[finding.severity] = histogram.total.get(finding.severity, 0) + 1
        per = histogram.by_framework.setdefault(framework, {})
        per[finding.severity] = per.get(finding.severity, 0) + 1
    return histogram


def lint_template(
    path: str,
    contents: str,
    catalog: Iterable[MisconfigRule] = DEFAULT_CATALOG,
    component: ComponentRef | None = None,
    notices: list[str] | None = None,
) -> tuple[IaCFramework, list[Finding]]:
    """Classify, parse, and run all checks over one template."""
    framework = classify_template(path, contents, notices)
    model = parse_template(contents, framework, path)
    findings = run_rules(model, catalog, component, notices)
    findings.extend(check_cors_wildcard(model, component))
    return framework, sorted(findings, key=Finding.sort_key)

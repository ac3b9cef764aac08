"""Package-inventory extraction and offline advisory matching (V1).

A component's manifests and lockfiles are parsed into a
:class:`PackageInventory`, matched against an offline advisory database
(a documented subset of the OSV JSON schema), and optionally filtered by
the metadata-only false-positive heuristic.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from slsa_audit.model import AuditError, Severity, severity_band


class ManifestError(AuditError, ValueError):
    """A supported manifest failed to parse; message names the line."""


class ExternalScanFormatError(AuditError, ValueError):
    """An external scanner report did not match the documented subset."""


class Ecosystem(Enum):
    NPM = "npm"
    PYPI = "pypi"
    GOMOD = "gomod"
    OS_PACKAGES = "os-packages"

    @classmethod
    def parse(cls, token: str) -> "Ecosystem":
        normalized = _ECOSYSTEM_ALIASES.get(token.strip().lower())
        if normalized is None:
            raise ValueError(f"unknown ecosystem {token!r}")
        return normalized


_ECOSYSTEM_ALIASES = {
    "npm": Ecosystem.NPM,
    "pypi": Ecosystem.PYPI,
    "go": Ecosystem.GOMOD,
    "gomod": Ecosystem.GOMOD,
    "os-packages": Ecosystem.OS_PACKAGES,
}


# ---------------------------------------------------------------------------
# Version comparison
# ---------------------------------------------------------------------------

_SEMVER_RE = re.compile(
    r"^v?(\d+)(?:\.(\d+))?(?:\.(\d+))?(?:-([0-9A-Za-z.-]+))?(?:\+[0-9A-Za-z.-]+)?$"
)


@dataclass(frozen=True)
class Version:
    """A comparable package version.

    Semantic-version precedence where the string parses as (possibly
    truncated) semver; otherwise a deterministic positional fallback on
    dot-split segments, recorded via ``fallback``. Each segment compares
    as (0, int) or (1, str), so numeric segments precede alphanumeric
    ones at the same position ("1.0.1" < "1.0.1f" < "1.0.1g").
    """

    raw: str
    segments: tuple[tuple[int, int | str], ...]
    prerelease: tuple[tuple[int, int | str], ...] | None
    fallback: bool

    def _cmp_key(self) -> tuple:
        # A release sorts after any prerelease of the same segments.
        pre = ((1,),) if self.prerelease is None else ((0,), *self.prerelease)
        return (self.segments, pre)

    def __lt__(self, other: "Version") -> bool:
        return self._cmp_key() < other._cmp_key()

    def __le__(self, other: "Version") -> bool:
        return self._cmp_key() <= other._cmp_key()


def _identifier_key(ident: str) -> tuple[int, int | str]:
    if ident.isdigit():
        return (0, int(ident))
    return (1, ident)


def parse_version(text: str, notices: list[str] | None = None) -> Version:
    """Parse a version string into a comparable key.

    Raises ValueError for empty strings; never fails otherwise (the
    fallback path handles arbitrary tokens and appends a notice).
    """
    raw = text.strip()
    if not raw:
        raise ValueError("empty version string")
    m = _SEMVER_RE.match(raw)
    if m:
        major, minor, patch, pre = m.groups()
        segments = ((0, int(major)), (0, int(minor or 0)), (0, int(patch or 0)))
        prerelease = None
        if pre is not None:
            prerelease = tuple(_identifier_key(ident) for ident in pre.split("."))
        return Version(raw=raw, segments=segments, prerelease=prerelease, fallback=False)
    if notices is not None:
        notices.append(f"version {raw!r} is not semver; using segment fallback")
    segments = tuple(_identifier_key(seg) for seg in raw.split("."))
    return Version(raw=raw, segments=segments, prerelease=None, fallback=True)


@dataclass(frozen=True)
class VersionInterval:
    """One affected range with inclusive/exclusive bounds (None = unbounded)."""

    low: str | None = None
    low_inclusive: bool = True
    high: str | None = None
    high_inclusive: bool = False

    def __post_init__(self) -> None:
        if self.low is not None and self.high is not None:
            if parse_version(self.high) < parse_version(self.low):
                raise ValueError(f"interval has high {self.high!r} below low {self.low!r}")

    def contains(self, version: Version) -> bool:
        if self.low is not None:
            low = parse_version(self.low)
            if version < low or (not self.low_inclusive and not low < version):
                return False
        if self.high is not None:
            high = parse_version(self.high)
            if high < version or (not self.high_inclusive and not version < high):
                return False
        return True


# ---------------------------------------------------------------------------
# Advisory database (offline OSV subset)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Advisory:
    """One vulnerability record for one package.

    Loaded from the offline advisory DB: a directory of JSON files, each a
    subset of the OSV schema (id, affected package + SEMVER range events,
    numeric CVSS 3.1 score under ``severity``).
    """

    id: str
    ecosystem: Ecosystem
    package_name: str
    affected: tuple[VersionInterval, ...]
    cvss_score: float | None = None
    summary: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("advisory id must be non-empty")


def _intervals_from_events(events: list[dict]) -> list[VersionInterval]:
    intervals: list[VersionInterval] = []
    low: str | None = None
    opened = False
    for event in events:
        if "introduced" in event:
            if opened:
                intervals.append(VersionInterval(low=low))
                opened = False
            raw = event["introduced"]
            low = None if raw == "0" else raw
            opened = True
        elif "fixed" in event:
            intervals.append(VersionInterval(low=low, high=event["fixed"], high_inclusive=False))
            low, opened = None, False
        elif "last_affected" in event:
            intervals.append(VersionInterval(low=low, high=event["last_affected"], high_inclusive=True))
            low, opened = None, False
    if opened:
        intervals.append(VersionInterval(low=low))
    return intervals


def advisory_from_osv(doc: dict) -> list[Advisory]:
    """Flatten one OSV-subset document into per-package Advisory records."""
    advisory_id = doc.get("id", "")
    score: float | None = None
    for sev in doc.get("severity", []):
        raw = sev.get("score")
        if raw is None:
            continue
        try:
            score = float(raw)
            break
        except (TypeError, ValueError):
            continue
    out: list[Advisory] = []
    for affected in doc.get("affected", []):
        package = affected.get("package", {})
        intervals: list[VersionInterval] = []
        for rng in affected.get("ranges", []):
            if rng.get("type") != "SEMVER":
                continue
            intervals.extend(_intervals_from_events(rng.get("events", [])))
        if not intervals:
            continue
        out.append(
            Advisory(
                id=advisory_id,
                ecosystem=Ecosystem.parse(package.get("ecosystem", "")),
                package_name=package.get("name", ""),
                affected=tuple(intervals),
                cvss_score=score,
                summary=doc.get("summary", ""),
            )
        )
    return out


def load_advisory_db(db_dir: str | Path, notices: list[str] | None = None) -> list[Advisory]:
    """Load every ``*.json`` advisory under db_dir (sorted for determinism)."""
    root = Path(db_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"advisory database directory not found: {root}")
    advisories: list[Advisory] = []
    for path in sorted(root.rglob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            advisories.extend(advisory_from_osv(doc))
        except (ValueError, KeyError) as exc:
            if notices is not None:
                notices.append(f"skipped advisory {path.name}: {exc}")
    return advisories


# ---------------------------------------------------------------------------
# Package inventory
# ---------------------------------------------------------------------------


@dataclass
class PackageRecord:
    """One (name, ecosystem) entry with every declared version merged in."""

    name: str
    ecosystem: Ecosystem
    versions: set[str] = field(default_factory=set)
    declared_in: set[str] = field(default_factory=set)
    referenced_in_source: set[str] = field(default_factory=set)


@dataclass
class PackageInventory:
    """Packages extracted from a component's manifests and lockfiles."""

    packages: dict[tuple[str, Ecosystem], PackageRecord] = field(default_factory=dict)

    def add(self, name: str, version: str, ecosystem: Ecosystem, declared_in: str) -> None:
        key = (name, ecosystem)
        record = self.packages.get(key)
        if record is None:
            record = PackageRecord(name=name, ecosystem=ecosystem)
            self.packages[key] = record
        if version:
            record.versions.add(version)
        record.declared_in.add(declared_in)

    def merge(self, other: "PackageInventory") -> None:
        for record in other.packages.values():
            key = (record.name, record.ecosystem)
            mine = self.packages.get(key)
            if mine is None:
                self.packages[key] = record
            else:
                mine.versions |= record.versions
                mine.declared_in |= record.declared_in
                mine.referenced_in_source |= record.referenced_in_source

    def records(self) -> list[PackageRecord]:
        return [self.packages[k] for k in sorted(self.packages, key=lambda k: (k[0], k[1].value))]


MANIFEST_KINDS = ("package.json", "package-lock.json", "requirements.txt", "go.mod", "os-packages.txt")

_NPM_RANGE_RE = re.compile(r"^[\^~>]=?\s*v?(\d+)(?:\.(\d+|[xX*]))?(?:\.(\d+|[xX*]))?(.*)$")


def _min_satisfying_npm(spec: str) -> str | None:
    """Resolve an npm range expression to its minimum satisfying version."""
    spec = spec.strip()
    if not spec or spec in ("*", "latest"):
        return "0.0.0"
    if re.fullmatch(r"v?\d+\.\d+\.\d+([-+][0-9A-Za-z.-]+)?", spec):
        return spec.lstrip("v")
    wildcard = re.fullmatch(r"v?(\d+)(?:\.(\d+|[xX*]))?(?:\.(\d+|[xX*]))?", spec)
    if wildcard:
        major, minor, patch = wildcard.groups()
        minor = "0" if minor in (None, "x", "X", "*") else minor
        patch = "0" if patch in (None, "x", "X", "*") else patch
        return f"{major}.{minor}.{patch}"
    m = _NPM_RANGE_RE.match(spec)
    if m:
        major, minor, patch, rest = m.groups()
        minor = "0" if minor in (None, "x", "X", "*") else minor
        patch = "0" if patch in (None, "x", "X", "*") else patch
        base = [int(major), int(minor), int(patch)]
        if spec.startswith(">") and not spec.startswith(">="):
            base[2] += 1
        pre = ""
        if rest.startswith("-"):
            pre = rest.split(" ", 1)[0].split(",", 1)[0]
        return f"{base[0]}.{base[1]}.{base[2]}{pre}"
    return None


def parse_manifest(
    path: str,
    contents: str,
    notices: list[str] | None = None,
) -> PackageInventory:
    """Parse one manifest file into a partial inventory.

    Unsupported kinds are skipped with a notice; syntax errors raise
    :class:`ManifestError` naming the offending line.
    """
    inventory = PackageInventory()
    filename = Path(path).name.lower()
    if filename == "package.json":
        _parse_package_json(path, contents, inventory, notices)
    elif filename == "package-lock.json":
        _parse_package_lock(path, contents, inventory)
    elif filename == "requirements.txt":
        _parse_requirements(path, contents, inventory, notices)
    elif filename == "go.mod":
        _parse_go_mod(path, contents, inventory)
    elif filename == "os-packages.txt":
        _parse_os_packages(path, contents, inventory)
    else:
        if notices is not None:
            notices.append(f"skipped unsupported manifest kind: {path}")
    return inventory


def _parse_package_json(path: str, contents: str, inv: PackageInventory, notices) -> None:
    try:
        doc = json.loads(contents) if contents.strip() else {}
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    for section in ("dependencies", "devDependencies", "optionalDependencies"):
        for name, spec in (doc.get(section) or {}).items():
            version = _min_satisfying_npm(str(spec))
            if version is None:
                if notices is not None:
                    notices.append(f"{path}: cannot resolve npm range {spec!r} for {name}")
                continue
            inv.add(name, version, Ecosystem.NPM, path)


def _parse_package_lock(path: str, contents: str, inv: PackageInventory) -> None:
    try:
        doc = json.loads(contents) if contents.strip() else {}
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    # Lockfile v2/v3 layout.
    for pkg_path, meta in (doc.get("packages") or {}).items():
        if not pkg_path:
            continue
        name = pkg_path.rsplit("node_modules/", 1)[-1]
        version = meta.get("version")
        if name and version:
            inv.add(name, version, Ecosystem.NPM, path)
    # Lockfile v1 layout (possibly alongside v2 keys).
    def walk(deps: dict) -> None:
        for name, meta in deps.items():
            version = meta.get("version")
            if version:
                inv.add(name, version, Ecosystem.NPM, path)
            walk(meta.get("dependencies") or {})

    walk(doc.get("dependencies") or {})


_REQUIREMENT_RE = re.compile(
    r"^\s*([A-Za-z0-9._-]+)\s*(?:\[[^\]]*\])?\s*(==|>=|~=|<=|>|<|!=)?\s*([^\s;#,]+)?"
)


def _parse_requirements(path: str, contents: str, inv: PackageInventory, notices) -> None:
    for lineno, raw in enumerate(contents.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(("-", "--")):
            continue
        if "://" in line or line.startswith(("git+", "hg+", "svn+")):
            if notices is not None:
                notices.append(f"{path}:{lineno}: skipped URL requirement")
            continue
        m = _REQUIREMENT_RE.match(line)
        if not m or not m.group(1):
            raise ManifestError(f"{path}: cannot parse requirement at line {lineno}")
        name, op, version = m.groups()
        if op in ("==", ">=", "~=") and version:
            resolved = version
        elif op in (">",) and version:
            resolved = version  # minimum open bound; exact successor is undefined for PEP 440
            if notices is not None:
                notices.append(f"{path}:{lineno}: open bound {op}{version}; using {version}")
        else:
            resolved = "0.0.0"
            if notices is not None:
                notices.append(f"{path}:{lineno}: unpinned requirement {name}; using 0.0.0")
        inv.add(name.lower(), resolved, Ecosystem.PYPI, path)


_GO_REQUIRE_RE = re.compile(r"^\s*([^\s]+)\s+v(\d[^\s/]*)(?:\s*//.*)?$")


def _parse_go_mod(path: str, contents: str, inv: PackageInventory) -> None:
    in_require = False
    for lineno, raw in enumerate(contents.splitlines(), 1):
        line = raw.strip()
        if line.startswith("require ("):
            in_require = True
            continue
        if in_require and line.startswith(")"):
            in_require = False
            continue
        candidate = None
        if in_require and line and not line.startswith("//"):
            candidate = line
        elif line.startswith("require "):
            candidate = line[len("require "):]
        if candidate is None:
            continue
        m = _GO_REQUIRE_RE.match(candidate)
        if not m:
            raise ManifestError(f"{path}: cannot parse require directive at line {lineno}")
        inv.add(m.group(1), m.group(2), Ecosystem.GOMOD, path)


def _parse_os_packages(path: str, contents: str, inv: PackageInventory) -> None:
    for lineno, raw in enumerate(contents.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"{path}: expected name=version at line {lineno}")
        name, _, version = line.partition("=")
        inv.add(name.strip(), version.strip(), Ecosystem.OS_PACKAGES, path)


def extract_inventory(
    tree_root: str | Path, notices: list[str] | None = None
) -> PackageInventory:
    """Walk a source tree and merge every supported manifest it contains."""
    root = Path(tree_root)
    inventory = PackageInventory()
    if not root.is_dir():
        return inventory
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name.lower() in MANIFEST_KINDS:
            rel = str(path.relative_to(root))
            try:
                inventory.merge(parse_manifest(rel, path.read_text(encoding="utf-8", errors="replace"), notices))
            except ManifestError as exc:
                if notices is not None:
                    notices.append(str(exc))
    return inventory


# ---------------------------------------------------------------------------
# Source-reference marking (metadata-only false-positive heuristic)
# ---------------------------------------------------------------------------

SOURCE_EXTENSIONS = (".py", ".js", ".ts", ".java", ".go", ".rb", ".sh", ".c", ".cpp")
METADATA_EXTENSIONS = (".lock", ".gradle", ".toml", ".yml", ".yaml", ".json", ".xml", ".md")


def _import_pattern(record: PackageRecord) -> re.Pattern[str]:
    name = re.escape(record.name)
    alternatives = [
        rf"\bimport\s+['\"]?{name}\b",
        rf"\bfrom\s+['\"]?{name}\b",
        rf"\brequire\s*\(\s*['\"]{name}(?:/[^'\"]*)?['\"]",
    ]
    if record.ecosystem is Ecosystem.GOMOD:
        alternatives.append(rf"['\"]{name}(?:/[^'\"]*)?['\"]")
    return re.compile("|".join(alternatives))


def mark_source_references(
    inventory: PackageInventory,
    tree_root: str | Path,
    source_extensions: Iterable[str] = SOURCE_EXTENSIONS,
    notices: list[str] | None = None,
) -> PackageInventory:
    """Populate referenced_in_source with files importing each package.

    Only files whose extension is in the source set count; metadata files
    never do. Matching requires the package name as a whole token in an
    import-like context, which is stricter than bare substring search.
    """
    root = Path(tree_root)
    source_exts = tuple(source_extensions)
    patterns = {key: _import_pattern(rec) for key, rec in inventory.packages.items()}
    if not root.is_dir() or not patterns:
        return inventory
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in source_exts:
            continue
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            if notices is not None:
                notices.append(f"skipped unreadable source file {path}: {exc}")
            continue
        rel = str(path.relative_to(root))
        for key, pattern in patterns.items():
            if pattern.search(text):
                inventory.packages[key].referenced_in_source.add(rel)
    return inventory


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


class FpClass(Enum):
    SOURCE_REFERENCED = "SourceReferenced"
    METADATA_ONLY = "MetadataOnly"


@dataclass(frozen=True)
class VulnMatch:
    """One advisory matched to one declared package version."""

    advisory_id: str
    package_name: str
    package_version: str
    ecosystem: Ecosystem
    severity: Severity
    fp_class: FpClass
    declared_in: tuple[str, ...] = ()
    summary: str = ""


def match_advisories(
    inventory: PackageInventory,
    db: Iterable[Advisory],
    notices: list[str] | None = None,
) -> list[VulnMatch]:
    """Match every declared package version against the advisory database.

    Matches deduplicate on (advisory, package, version); packages whose
    version string is empty are excluded with a notice.
    """
    index: dict[tuple[Ecosystem, str], list[Advisory]] = {}
    for advisory in db:
        index.setdefault((advisory.ecosystem, advisory.package_name), []).append(advisory)
    matches: dict[tuple[str, str, str, Ecosystem], VulnMatch] = {}
    for record in inventory.records():
        candidates = index.get((record.ecosystem, record.name))
        if not candidates:
            continue
        fp_class = (
            FpClass.SOURCE_REFERENCED if record.referenced_in_source else FpClass.METADATA_ONLY
        )
        for version_str in sorted(record.versions):
            try:
                version = parse_version(version_str, notices)
            except ValueError:
                if notices is not None:
                    notices.append(
                        f"excluded {record.name}: unparseable version {version_str!r}"
                    )
                continue
            for advisory in candidates:
                if not any(interval.contains(version) for interval in advisory.affected):
                    continue
                key = (advisory.id, record.name, version_str, record.ecosystem)
                if key in matches:
                    continue
                matches[key] = VulnMatch(
                    advisory_id=advisory.id,
                    package_name=record.name,
                    package_version=version_str,
                    ecosystem=record.ecosystem,
                    severity=severity_band(advisory.cvss_score),
                    fp_class=fp_class,
                    declared_in=tuple(sorted(record.declared_in)),
                    summary=advisory.summary,
                )
    return [matches[k] for k in sorted(matches, key=lambda k: (k[1], k[0], k[2]))]


@dataclass
class FpFilterResult:
    kept: list[VulnMatch]
    suspected_fp: list[VulnMatch]
    fp_rate: float


def filter_false_positives(matches: Iterable[VulnMatch]) -> FpFilterResult:
    """Partition matches into source-referenced and suspected false positives.

    A match is a suspected false positive when its package appears only in
    metadata files. fp_rate is 0 for an empty match list.
    """
    kept: list[VulnMatch] = []
    suspected: list[VulnMatch] = []
    for match in matches:
        (suspected if match.fp_class is FpClass.METADATA_ONLY else kept).append(match)
    total = len(kept) + len(suspected)
    rate = len(suspected) / total if total else 0.0
    return FpFilterResult(kept=kept, suspected_fp=suspected, fp_rate=rate)


def jaccard_similarity(set_a: set[str], set_b: set[str]) -> float:
    """|A∩B| / |A∪B|, with two empty sets defined as fully similar (1.0)."""
    if not set_a and not set_b:
        return 1.0
    return len(set_a & set_b) / len(set_a | set_b)


# ---------------------------------------------------------------------------
# External scanner import
# ---------------------------------------------------------------------------


def import_external_scan(path: str | Path, format: str) -> dict[str, set[str]]:
    """Normalize a third-party scanner report to advisory-id sets per component.

    Supported format subsets:
      trivy-json: {"ArtifactName": str?, "Results": [{"Target": str?,
                   "Vulnerabilities": [{"VulnerabilityID": str}]}]}
      grype-json: {"source": {"target": str|{"userInput": str}},
                   "matches": [{"vulnerability": {"id": str}}]}
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ExternalScanFormatError(f"{path}: invalid JSON ({exc})") from exc
    if format == "trivy-json":
        return _import_trivy(doc)
    if format == "grype-json":
        return _import_grype(doc)
    raise ValueError(f"unknown scan format {format!r}; expected trivy-json or grype-json")


def _import_trivy(doc: dict) -> dict[str, set[str]]:
    if not isinstance(doc, dict) or "Results" not in doc:
        raise ExternalScanFormatError("trivy-json: missing field 'Results'")
    default_component = doc.get("ArtifactName", "")
    out: dict[str, set[str]] = {}
    if default_component:
        out.setdefault(default_component, set())
    for result in doc["Results"]:
        if not isinstance(result, dict):
            raise ExternalScanFormatError("trivy-json: 'Results' entries must be objects")
        component = result.get("Target") or default_component
        if not component:
            raise ExternalScanFormatError("trivy-json: result missing field 'Target'")
        ids = out.setdefault(component, set())
        for vuln in result.get("Vulnerabilities") or []:
            vuln_id = vuln.get("VulnerabilityID")
            if not vuln_id:
                raise ExternalScanFormatError("trivy-json: missing field 'VulnerabilityID'")
            ids.add(vuln_id)
    return out


def _import_grype(doc: dict) -> dict[str, set[str]]:
    if not isinstance(doc, dict) or "matches" not in doc:
        raise ExternalScanFormatError("grype-json: missing field 'matches'")
    target = (doc.get("source") or {}).get("target", "unknown")
    if isinstance(target, Mapping):
        target = target.get("userInput") or target.get("name") or "unknown"
    ids: set[str] = set()
    for match in doc["matches"]:
        vuln_id = (match.get("vulnerability") or {}).get("id")
        if not vuln_id:
            raise ExternalScanFormatError("grype-json: missing field 'vulnerability.id'")
        ids.add(vuln_id)
    return {str(target): ids}

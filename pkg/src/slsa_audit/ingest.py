"""Corpus loading, serverless filtering, and the pluggable fetch interface.

A corpus is a directory with one subdirectory per component:

    <root>/<publisher>__<name>/
        component.meta      key=value manifest (see parse_manifest)
        tree/               source files
        archives/           compressed artifacts
        iac/                templates
        run_commands.txt    docker run commands, one per logical line

Live registries sit behind :class:`RegistryClient`; a filesystem-backed
implementation doubles as the offline test client.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol

from slsa_audit.model import AuditError, ComponentRef, Repository


class CorpusNotFoundError(AuditError, FileNotFoundError):
    pass


class ManifestParseError(AuditError, ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class AuthError(AuditError):
    """Registry rejected the provided token."""


class RateLimitExceededError(AuditError):
    """Registry kept refusing after backoff retries."""


class NetworkError(AuditError):
    pass


class ArtifactKind(Enum):
    SOURCE_TREE = "SourceTree"
    ARCHIVE = "Archive"
    IMAGE_LAYOUT = "ImageLayout"


_MANIFEST_NAME = "component.meta"
_CORE_KEYS = ("repository", "publisher", "name", "version")


@dataclass
class CorpusEntry:
    """One component on disk plus its manifest metadata."""

    ref: ComponentRef
    root_path: Path
    metadata: dict[str, str] = field(default_factory=dict)
    artifact_kind: ArtifactKind = ArtifactKind.SOURCE_TREE

    @property
    def tree_path(self) -> Path:
        return self.root_path / "tree"

    @property
    def archives_path(self) -> Path:
        return self.root_path / "archives"

    @property
    def iac_path(self) -> Path:
        return self.root_path / "iac"

    @property
    def run_commands_path(self) -> Path:
        return self.root_path / "run_commands.txt"


@dataclass
class CorpusLoadResult:
    entries: list[CorpusEntry] = field(default_factory=list)
    errors: list[ManifestParseError] = field(default_factory=list)


def parse_manifest(path: str, text: str) -> tuple[ComponentRef, dict[str, str]]:
    """Parse a component.meta manifest (key=value lines, # comments)."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestParseError(path, f"line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key or not all(c.islower() or c.isdigit() or c == "_" for c in key):
            raise ManifestParseError(path, f"line {lineno}: keys must be lowercase ASCII")
        if key in fields:
            raise ManifestParseError(path, f"line {lineno}: duplicate key {key!r}")
        fields[key] = value.strip()
    for required in ("repository", "publisher", "name"):
        if not fields.get(required):
            raise ManifestParseError(path, f"missing required key {required!r}")
    try:
        repository = Repository.parse(fields["repository"])
    except ValueError as exc:
        raise ManifestParseError(path, str(exc)) from exc
    ref = ComponentRef(
        repository=repository,
        publisher=fields["publisher"],
        name=fields["name"],
        version=fields.get("version") or None,
    )
    metadata = {k: v for k, v in fields.items() if k not in _CORE_KEYS}
    return ref, metadata


def serialize_manifest(ref: ComponentRef, metadata: dict[str, str]) -> str:
    """Canonical manifest form: core keys first, metadata keys sorted.

    parse_manifest(serialize_manifest(...)) round-trips byte-identically
    for manifests written by this function.
    """
    lines = [
        f"repository={ref.repository.value}",
        f"publisher={ref.publisher}",
        f"name={ref.name}",
    ]
    if ref.version:
        lines.append(f"version={ref.version}")
    for key in sorted(metadata):
        lines.append(f"{key}={metadata[key]}")
    return "\n".join(lines) + "\n"


def _detect_artifact_kind(root: Path) -> ArtifactKind:
    tree = root / "tree"
    if tree.is_dir() and any(tree.iterdir()):
        return ArtifactKind.SOURCE_TREE
    archives = root / "archives"
    if archives.is_dir() and any(archives.iterdir()):
        return ArtifactKind.ARCHIVE
    if (root / "image").is_dir():
        return ArtifactKind.IMAGE_LAYOUT
    return ArtifactKind.SOURCE_TREE


def load_corpus(root: str | Path) -> CorpusLoadResult:
    """Load every component under a corpus root.

    Invalid manifests become error records in the result instead of being
    silently dropped; a missing root raises.
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise CorpusNotFoundError(f"corpus root not found: {root_path}")
    result = CorpusLoadResult()
    for child in sorted(root_path.iterdir()):
        manifest = child / _MANIFEST_NAME
        if not child.is_dir() or not manifest.is_file():
            continue
        rel = str(manifest.relative_to(root_path))
        try:
            ref, metadata = parse_manifest(rel, manifest.read_text(encoding="utf-8"))
        except ManifestParseError as exc:
            result.errors.append(exc)
            continue
        result.entries.append(
            CorpusEntry(
                ref=ref,
                root_path=child,
                metadata=metadata,
                artifact_kind=_detect_artifact_kind(child),
            )
        )
    return result


def is_serverless(entry: CorpusEntry) -> bool:
    """Two-step filter: 'serverless' keyword in name/metadata, OR a
    serverless.yml anywhere under the component (either signal keeps it)."""
    keyword = "serverless"
    if keyword in entry.ref.name.lower() or keyword in entry.ref.publisher.lower():
        return True
    for key, value in entry.metadata.items():
        if keyword in key.lower() or keyword in value.lower():
            return True
    if entry.root_path.is_dir():
        for path in entry.root_path.rglob("serverless.yml"):
            if path.is_file():
                return True
    return False


# ---------------------------------------------------------------------------
# Fetch interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FetchSpec:
    repository: Repository
    query: str
    auth_token: str | None = None
    rate_limit: int = 60  # requests per minute

    def __post_init__(self) -> None:
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be > 0")


class RegistryClient(Protocol):
    """Contract the fetch path needs from any registry backend."""

    def list_components(self, query: str, auth_token: str | None) -> list[str]:
        """Component ids (publisher/name) matching a query."""
        ...

    def get_metadata(self, component_id: str, auth_token: str | None) -> dict[str, str]:
        ...

    def download(self, component_id: str, dest: Path, auth_token: str | None) -> None:
        """Materialize the component's files under dest."""
        ...


class _RateLimiter:
    """Spaces calls at least 60/rate_limit seconds apart."""

    def __init__(
        self,
        rate_limit: int,
        clock: Callable[[], float],
        sleep: Callable[[float], None],
    ):
        self.interval = 60.0 / rate_limit
        self.clock = clock
        self.sleep = sleep
        self._last: float | None = None

    def wait(self) -> None:
        now = self.clock()
        if self._last is not None:
            remaining = self._last + self.interval - now
            if remaining > 0:
                self.sleep(remaining)
                now = self.clock()
        self._last = now


def fetch_components(
    spec: FetchSpec,
    client: RegistryClient,
    dest_root: str | Path,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
    max_retries: int = 3,
    notices: list[str] | None = None,
) -> list[CorpusEntry]:
    """Fetch matching components into corpus layout under dest_root.

    Every client call is rate-limited; rate-limit refusals retry with
    exponential backoff before surfacing.
    """
    dest = Path(dest_root)
    dest.mkdir(parents=True, exist_ok=True)
    limiter = _RateLimiter(spec.rate_limit, clock, sleep)

    def call(fn, *args):
        delay = limiter.interval or 1.0
        for attempt in range(max_retries + 1):
            limiter.wait()
            try:
                return fn(*args)
            except RateLimitExceededError:
                if attempt == max_retries:
                    raise
                sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    component_ids = call(client.list_components, spec.query, spec.auth_token)
    entries: list[CorpusEntry] = []
    for component_id in component_ids:
        metadata = call(client.get_metadata, component_id, spec.auth_token)
        publisher, _, name = component_id.partition("/")
        if not name:
            publisher, name = "unknown", component_id
        ref = ComponentRef(
            repository=spec.repository,
            publisher=publisher,
            name=name,
            version=metadata.pop("version", None) or None,
        )
        component_dir = dest / ref.slug
        component_dir.mkdir(parents=True, exist_ok=True)
        call(client.download, component_id, component_dir, spec.auth_token)
        lowered = {k.lower(): v for k, v in metadata.items()}
        (component_dir / _MANIFEST_NAME).write_text(
            serialize_manifest(ref, lowered), encoding="utf-8"
        )
        entries.append(
            CorpusEntry(
                ref=ref,
                root_path=component_dir,
                metadata=lowered,
                artifact_kind=_detect_artifact_kind(component_dir),
            )
        )
        if notices is not None:
            notices.append(f"fetched {component_id}")
    return entries


class FilesystemRegistryClient:
    """Registry backed by a local directory shaped like a corpus.

    Used as the offline stand-in for live scrapers and as the test double.
    An expected_token (when set) simulates authenticated queries.
    """

    def __init__(self, root: str | Path, expected_token: str | None = None):
        self.root = Path(root)
        self.expected_token = expected_token

    def _check_token(self, auth_token: str | None) -> None:
        if self.expected_token is not None and auth_token != self.expected_token:
            raise AuthError("registry rejected the provided token")

    def _entry_dirs(self) -> Iterable[Path]:
        if not self.root.is_dir():
            return []
        return sorted(p for p in self.root.iterdir() if (p / _MANIFEST_NAME).is_file())

    def list_components(self, query: str, auth_token: str | None) -> list[str]:
        self._check_token(auth_token)
        needle = query.lower()
        out: list[str] = []
        for entry_dir in self._entry_dirs():
            text = (entry_dir / _MANIFEST_NAME).read_text(encoding="utf-8")
            try:
                ref, metadata = parse_manifest(entry_dir.name, text)
            except ManifestParseError:
                continue
            haystack = " ".join([ref.publisher, ref.name, *metadata.values()]).lower()
            if needle in haystack:
                out.append(f"{ref.publisher}/{ref.name}")
        return out

    def _find(self, component_id: str) -> Path:
        publisher, _, name = component_id.partition("/")
        candidate = self.root / f"{publisher}__{name}"
        if not (candidate / _MANIFEST_NAME).is_file():
            raise NetworkError(f"component not found: {component_id}")
        return candidate

    def get_metadata(self, component_id: str, auth_token: str | None) -> dict[str, str]:
        self._check_token(auth_token)
        entry_dir = self._find(component_id)
        ref, metadata = parse_manifest(
            entry_dir.name, (entry_dir / _MANIFEST_NAME).read_text(encoding="utf-8")
        )
        if ref.version:
            metadata["version"] = ref.version
        return metadata

    def download(self, component_id: str, dest: Path, auth_token: str | None) -> None:
        self._check_token(auth_token)
        import shutil

        entry_dir = self._find(component_id)
        for child in sorted(entry_dir.iterdir()):
            if child.name == _MANIFEST_NAME:
                continue
            target = dest / child.name
            if child.is_dir():
                shutil.copytree(child, target, dirs_exist_ok=True)
            else:
                shutil.copy2(child, target)

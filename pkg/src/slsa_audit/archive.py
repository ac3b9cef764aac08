"""Compressed-component handling: detection, safe extraction, signature
scanning, and the payload-injection harness (V2).

Eight formats are supported: 7z, tar, tar.bz2, tar.gz, tar.lzma, tar.xz,
tar.zst, and zip. Extraction is defensive: entry names may not traverse
outside the tree, and decompressed output is capped by expansion ratio and
an absolute byte limit.
"""
from __future__ import annotations

import bz2
import gzip
import hashlib
import io
import json
import lzma
import tarfile
import zipfile
import zlib
from base64 import b64decode, b64encode
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath
from typing import Iterable

from slsa_audit import sevenz, zstdcodec
from slsa_audit.model import AuditError


class ArchiveError(AuditError):
    """Base class for archive handling failures."""


class UnsupportedFormatError(ArchiveError, ValueError):
    """Input is not one of the eight supported archive kinds."""


class ExtractionError(ArchiveError):
    """Archive is corrupt or uses unsupported features."""


class ArchiveSecurityError(ArchiveError):
    """An entry name would escape the extraction root."""


class DecompressionBombError(ArchiveError):
    """Decompressed output exceeded the configured expansion limits."""


class EncryptedArchiveError(ArchiveError):
    """Archive content is encrypted (possible evasion indicator)."""


class ArchiveFormat(Enum):
    SEVENZ = "7z"
    TAR = "tar"
    TAR_BZ2 = "tar.bz2"
    TAR_GZ = "tar.gz"
    TAR_LZMA = "tar.lzma"
    TAR_XZ = "tar.xz"
    TAR_ZST = "tar.zst"
    ZIP = "zip"


_TAR_WRAPPED = {
    ArchiveFormat.TAR_BZ2,
    ArchiveFormat.TAR_GZ,
    ArchiveFormat.TAR_LZMA,
    ArchiveFormat.TAR_XZ,
    ArchiveFormat.TAR_ZST,
}


@dataclass(frozen=True)
class ExtractionLimits:
    """Caps applied while inflating untrusted archives."""

    max_expansion_ratio: float = 1000.0
    max_total_bytes: int = 1 << 30

    def cap_for(self, compressed_size: int) -> int:
        ratio_cap = int(max(compressed_size, 1) * self.max_expansion_ratio)
        return min(ratio_cap, self.max_total_bytes)


DEFAULT_LIMITS = ExtractionLimits()


@dataclass(frozen=True)
class ArchiveEntry:
    """One regular-file entry extracted from an archive."""

    path: str
    data: bytes


def detect_format(filename: str, leading_bytes: bytes) -> ArchiveFormat:
    """Identify the archive format from magic bytes, falling back to the
    filename extension where the bytes are ambiguous (plain/old tar, lzma).

    Compression wrappers imply their tar-wrapped kind; the inner tar is
    confirmed during extraction.
    """
    head = leading_bytes
    if head.startswith((b"PK\x03\x04", b"PK\x05\x06", b"PK\x07\x08")):
        return ArchiveFormat.ZIP
    if head.startswith(sevenz.MAGIC):
        return ArchiveFormat.SEVENZ
    if head.startswith(b"\x1f\x8b"):
        return ArchiveFormat.TAR_GZ
    if head.startswith(b"BZh"):
        return ArchiveFormat.TAR_BZ2
    if head.startswith(b"\xfd7zXZ\x00"):
        return ArchiveFormat.TAR_XZ
    if head.startswith(zstdcodec.ZSTD_MAGIC):
        return ArchiveFormat.TAR_ZST
    if len(head) > 262 and head[257:262] in (b"ustar", b"usta "):
        return ArchiveFormat.TAR
    lower = filename.lower()
    if lower.endswith((".tar.lzma", ".tlz", ".lzma")) and _plausible_lzma_header(head):
        return ArchiveFormat.TAR_LZMA
    if lower.endswith(".tar"):
        return ArchiveFormat.TAR
    supported = ", ".join(f.value for f in ArchiveFormat)
    raise UnsupportedFormatError(
        f"unrecognized archive format for {filename!r}; supported kinds: {supported}"
    )


def _plausible_lzma_header(head: bytes) -> bool:
    # .lzma (alone format): properties byte < 225, then 4-byte dict size.
    return len(head) >= 5 and head[0] < 225


def _safe_entry_path(name: str) -> str:
    path = PurePosixPath(name.replace("\\", "/"))
    parts = path.parts
    if path.is_absolute() or (parts and len(parts[0]) == 2 and parts[0][1] == ":"):
        raise ArchiveSecurityError(f"absolute entry path rejected: {name!r}")
    if ".." in parts:
        raise ArchiveSecurityError(f"path-traversal entry rejected: {name!r}")
    cleaned = "/".join(p for p in parts if p not in ("", "."))
    if not cleaned:
        raise ArchiveSecurityError(f"empty entry path rejected: {name!r}")
    return cleaned


def _inflate_wrapper(data: bytes, fmt: ArchiveFormat, cap: int) -> bytes:
    """Decompress a tar compression wrapper with an output cap."""
    out = bytearray()
    try:
        if fmt is ArchiveFormat.TAR_GZ:
            stream = zlib.decompressobj(wbits=31)
            out += stream.decompress(data, cap + 1)
            while stream.unconsumed_tail and len(out) <= cap:
                out += stream.decompress(stream.unconsumed_tail, cap + 1 - len(out))
        elif fmt is ArchiveFormat.TAR_BZ2:
            stream = bz2.BZ2Decompressor()
            out += stream.decompress(data, cap + 1)
            while not stream.eof and len(out) <= cap:
                chunk = stream.decompress(b"", cap + 1 - len(out))
                if not chunk:
                    break
                out += chunk
        elif fmt in (ArchiveFormat.TAR_XZ, ArchiveFormat.TAR_LZMA):
            lz_format = lzma.FORMAT_XZ if fmt is ArchiveFormat.TAR_XZ else lzma.FORMAT_ALONE
            stream = lzma.LZMADecompressor(format=lz_format)
            out += stream.decompress(data, cap + 1)
            while not stream.eof and len(out) <= cap:
                chunk = stream.decompress(b"", cap + 1 - len(out))
                if not chunk:
                    break
                out += chunk
        elif fmt is ArchiveFormat.TAR_ZST:
            for chunk in zstdcodec.decompress_chunks(data):
                out += chunk
                if len(out) > cap:
                    break
        else:
            raise ValueError(f"not a wrapper format: {fmt}")
    except (zlib.error, lzma.LZMAError, OSError, EOFError, zstdcodec.ZstdError) as exc:
        raise ExtractionError(f"corrupt {fmt.value} stream: {exc}") from exc
    if len(out) > cap:
        raise DecompressionBombError(
            f"{fmt.value} stream inflated past the {cap}-byte cap"
        )
    return bytes(out)


def _extract_tar(data: bytes, cap: int) -> list[ArchiveEntry]:
    entries: list[ArchiveEntry] = []
    total = 0
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:") as tar:
            for member in tar:
                name = _safe_entry_path(member.name)
                if not member.isfile():
                    continue  # only regular files come back; links never followed
                total += member.size
                if total > cap:
                    raise DecompressionBombError(
                        f"tar contents exceed the {cap}-byte cap"
                    )
                fileobj = tar.extractfile(member)
                entries.append(ArchiveEntry(path=name, data=fileobj.read() if fileobj else b""))
    except tarfile.TarError as exc:
        offset = getattr(exc, "offset", None)
        suffix = f" at offset {offset}" if offset is not None else ""
        raise ExtractionError(f"corrupt tar archive{suffix}: {exc}") from exc
    return entries


def _extract_zip(data: bytes, cap: int) -> list[ArchiveEntry]:
    entries: list[ArchiveEntry] = []
    total = 0
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            for info in zf.infolist():
                if info.is_dir():
                    _safe_entry_path(info.filename + "x")  # still reject traversal in dirs
                    continue
                name = _safe_entry_path(info.filename)
                content = bytearray()
                with zf.open(info) as handle:
                    while True:
                        chunk = handle.read(1 << 17)
                        if not chunk:
                            break
                        content += chunk
                        total += len(chunk)
                        if total > cap:
                            raise DecompressionBombError(
                                f"zip contents exceed the {cap}-byte cap"
                            )
                entries.append(ArchiveEntry(path=name, data=bytes(content)))
    except (zipfile.BadZipFile, zlib.error) as exc:
        raise ExtractionError(f"corrupt zip archive: {exc}") from exc
    return entries


def extract_bytes(
    data: bytes,
    fmt: ArchiveFormat,
    limits: ExtractionLimits = DEFAULT_LIMITS,
) -> list[ArchiveEntry]:
    """Extract all regular-file entries of an in-memory archive.

    Nested archives are NOT expanded here; scan_entries recurses explicitly.
    """
    cap = limits.cap_for(len(data))
    if fmt is ArchiveFormat.ZIP:
        return _extract_zip(data, cap)
    if fmt is ArchiveFormat.SEVENZ:
        try:
            raw = sevenz.read_7z(data, max_output=cap)
        except sevenz.SevenZipEncryptedError as exc:
            raise EncryptedArchiveError(str(exc)) from exc
        except sevenz.SevenZipError as exc:
            message = str(exc)
            if "limit" in message or "exceeds" in message:
                raise DecompressionBombError(message) from exc
            raise ExtractionError(message) from exc
        return [ArchiveEntry(path=_safe_entry_path(p), data=d) for p, d in raw]
    if fmt is ArchiveFormat.TAR:
        return _extract_tar(data, cap)
    if fmt in _TAR_WRAPPED:
        inner = _inflate_wrapper(data, fmt, cap)
        return _extract_tar(inner, cap)
    raise UnsupportedFormatError(f"unsupported format: {fmt}")


def extract(
    archive_path: str | Path,
    fmt: ArchiveFormat | None = None,
    limits: ExtractionLimits = DEFAULT_LIMITS,
) -> list[ArchiveEntry]:
    """Extract an archive file; format is detected when not given."""
    path = Path(archive_path)
    data = path.read_bytes()
    if fmt is None:
        fmt = detect_format(path.name, data[:512])
    return extract_bytes(data, fmt, limits)


# ---------------------------------------------------------------------------
# Signatures and scanning
# ---------------------------------------------------------------------------


class SignatureKind(Enum):
    EXACT_BYTES = "exact-bytes"
    SHA256 = "sha256"
    SUBSTRING = "substring"


@dataclass(frozen=True)
class Signature:
    id: str
    kind: SignatureKind
    pattern: bytes
    description: str = ""

    def __post_init__(self) -> None:
        if not self.pattern:
            raise ValueError("signature pattern must be non-empty")

    def matches(self, data: bytes) -> bool:
        if self.kind is SignatureKind.EXACT_BYTES:
            return data == self.pattern
        if self.kind is SignatureKind.SHA256:
            return hashlib.sha256(data).hexdigest().encode("ascii") == self.pattern.lower()
        return self.pattern in data


# Joined at runtime so this source file is not itself flagged by scanners.
EICAR_TEST_STRING = (
    rb"X5O!P%@AP[4\PZX54(P^)7CC)7}$EI" + rb"CAR-STANDARD-ANTIVIRUS-TEST-FILE!$H+H*"
)

_PLACEHOLDER_DIGEST = b"0" * 64  # operators fill real hashes into these slots

BUILTIN_SIGNATURES: tuple[Signature, ...] = (
    Signature("eicar", SignatureKind.SUBSTRING, EICAR_TEST_STRING, "antivirus test pattern"),
    Signature("python-rat", SignatureKind.SHA256, _PLACEHOLDER_DIGEST, "remote access trojan sample slot"),
    Signature("java-infector", SignatureKind.SHA256, _PLACEHOLDER_DIGEST, "class infector sample slot"),
    Signature("php-backdoor", SignatureKind.SHA256, _PLACEHOLDER_DIGEST, "web backdoor sample slot"),
    Signature("python-backdoor", SignatureKind.SHA256, _PLACEHOLDER_DIGEST, "backdoor sample slot"),
    Signature("python-trojan", SignatureKind.SHA256, _PLACEHOLDER_DIGEST, "trojan sample slot"),
)


def load_signatures(path: str | Path) -> list[Signature]:
    """Load a JSON-lines signature database (one signature per line).

    Lines hold {"id", "kind", "description"?} plus "pattern" (UTF-8 text)
    or "pattern_base64".
    """
    signatures: list[Signature] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            doc = json.loads(line)
            if "pattern_base64" in doc:
                pattern = b64decode(doc["pattern_base64"])
            else:
                pattern = doc["pattern"].encode("utf-8")
            signatures.append(
                Signature(
                    id=doc["id"],
                    kind=SignatureKind(doc["kind"]),
                    pattern=pattern,
                    description=doc.get("description", ""),
                )
            )
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: bad signature record: {exc}") from exc
    return signatures


def dump_signatures(signatures: Iterable[Signature]) -> str:
    lines = []
    for sig in signatures:
        doc: dict = {"id": sig.id, "kind": sig.kind.value}
        try:
            text = sig.pattern.decode("ascii")
            if text.isprintable():
                doc["pattern"] = text
            else:
                raise UnicodeDecodeError("ascii", sig.pattern, 0, 1, "unprintable")
        except UnicodeDecodeError:
            doc["pattern_base64"] = b64encode(sig.pattern).decode("ascii")
        if sig.description:
            doc["description"] = sig.description
        lines.append(json.dumps(doc, sort_keys=True))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SignatureMatch:
    """A signature hit, carrying the (possibly nested) entry path."""

    entry_path: str
    signature_id: str


@dataclass(frozen=True)
class EngineVerdict:
    engine_id: str
    flagged: bool
    matched_signatures: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.flagged != bool(self.matched_signatures):
            raise ValueError("flagged must mirror matched_signatures being non-empty")


def _looks_like_archive(entry: ArchiveEntry) -> ArchiveFormat | None:
    try:
        return detect_format(entry.path, entry.data[:512])
    except UnsupportedFormatError:
        return None


def scan_entries(
    entries: Iterable[ArchiveEntry],
    signatures: Iterable[Signature],
    recursion_depth: int = 3,
    limits: ExtractionLimits = DEFAULT_LIMITS,
    notices: list[str] | None = None,
) -> list[SignatureMatch]:
    """Check entries against every signature, expanding nested archives.

    Matches inside nested archives carry a bang-delimited path such as
    ``outer.zip!inner/payload.py``. recursion_depth 0 disables nesting.
    """
    sigs = list(signatures)
    matches: list[SignatureMatch] = []
    for entry in entries:
        for sig in sigs:
            if sig.matches(entry.data):
                matches.append(SignatureMatch(entry_path=entry.path, signature_id=sig.id))
        if recursion_depth > 0:
            nested_fmt = _looks_like_archive(entry)
            if nested_fmt is None:
                continue
            try:
                nested = extract_bytes(entry.data, nested_fmt, limits)
            except ArchiveError as exc:
                if notices is not None:
                    notices.append(f"nested archive {entry.path!r} not expanded: {exc}")
                continue
            for match in scan_entries(nested, sigs, recursion_depth - 1, limits, notices):
                matches.append(
                    SignatureMatch(
                        entry_path=f"{entry.path}!{match.entry_path}",
                        signature_id=match.signature_id,
                    )
                )
    return matches


def run_signature_engine(
    engine_id: str,
    entries: Iterable[ArchiveEntry],
    signatures: Iterable[Signature],
    recursion_depth: int = 3,
    limits: ExtractionLimits = DEFAULT_LIMITS,
) -> EngineVerdict:
    matches = scan_entries(entries, signatures, recursion_depth, limits)
    matched_ids = tuple(sorted({m.signature_id for m in matches}))
    return EngineVerdict(engine_id=engine_id, flagged=bool(matched_ids), matched_signatures=matched_ids)


@dataclass(frozen=True)
class ConsensusResult:
    malicious: bool
    engines_flagging: int


def consensus_flag(verdicts: Iterable[EngineVerdict], threshold: int) -> ConsensusResult:
    """A sample is malicious when at least threshold engines flagged it."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    flagging = sum(1 for v in verdicts if v.flagged)
    return ConsensusResult(malicious=flagging >= threshold, engines_flagging=flagging)


# ---------------------------------------------------------------------------
# Deterministic packing / payload injection
# ---------------------------------------------------------------------------


def _collect_tree(tree_root: Path) -> list[tuple[str, bytes]]:
    files = [
        (p.relative_to(tree_root).as_posix(), p.read_bytes())
        for p in sorted(tree_root.rglob("*"))
        if p.is_file()
    ]
    return files


def _pack_tar(items: list[tuple[str, bytes]]) -> bytes:
    out = io.BytesIO()
    with tarfile.open(fileobj=out, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for path, data in items:
            info = tarfile.TarInfo(name=path)
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    return out.getvalue()


def _pack_zip(items: list[tuple[str, bytes]]) -> bytes:
    out = io.BytesIO()
    with zipfile.ZipFile(out, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for path, data in items:
            info = zipfile.ZipInfo(filename=path, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            info.create_system = 3
            zf.writestr(info, data)
    return out.getvalue()


def pack_entries(items: list[tuple[str, bytes]], fmt: ArchiveFormat) -> bytes:
    """Pack (path, data) pairs deterministically: sorted paths, zeroed
    timestamps, fixed permissions."""
    items = sorted(items)
    for path, _ in items:
        _safe_entry_path(path)
    if fmt is ArchiveFormat.ZIP:
        return _pack_zip(items)
    if fmt is ArchiveFormat.SEVENZ:
        return sevenz.write_7z(items)
    tar_bytes = _pack_tar(items)
    if fmt is ArchiveFormat.TAR:
        return tar_bytes
    if fmt is ArchiveFormat.TAR_GZ:
        return gzip.compress(tar_bytes, compresslevel=9, mtime=0)
    if fmt is ArchiveFormat.TAR_BZ2:
        return bz2.compress(tar_bytes, compresslevel=9)
    if fmt is ArchiveFormat.TAR_XZ:
        return lzma.compress(tar_bytes, format=lzma.FORMAT_XZ, preset=6)
    if fmt is ArchiveFormat.TAR_LZMA:
        return lzma.compress(tar_bytes, format=lzma.FORMAT_ALONE, preset=6)
    if fmt is ArchiveFormat.TAR_ZST:
        return zstdcodec.compress(tar_bytes)
    raise UnsupportedFormatError(f"unsupported format: {fmt}")


def inject_and_pack(
    benign_tree: str | Path,
    payload_file: str | Path | None,
    fmt: ArchiveFormat,
    payload_dest: str | None = None,
) -> bytes:
    """Pack a source tree, optionally adding one payload file.

    The payload lands at payload_dest (default: its filename at tree root).
    Output is byte-stable for fixed inputs. With payload_file None this is
    a plain deterministic pack.
    """
    tree_root = Path(benign_tree)
    if not tree_root.is_dir():
        raise FileNotFoundError(f"benign tree not found: {tree_root}")
    items = _collect_tree(tree_root)
    if not items:
        raise ValueError(f"benign tree is empty: {tree_root}")
    if payload_file is not None:
        payload_path = Path(payload_file)
        dest = payload_dest or payload_path.name
        items.append((_safe_entry_path(dest), payload_path.read_bytes()))
    return pack_entries(items, fmt)

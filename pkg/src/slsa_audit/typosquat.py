"""Typo-squatting detection over publisher and component names (V5).

Distances use the optimal-string-alignment (OSA) variant of
Damerau-Levenshtein: insertions, deletions, substitutions, and adjacent
transpositions, with no substring edited twice. OSA is not a metric, so
the BK-tree index is built over plain Levenshtein (a true metric) and
candidates are verified exactly with OSA.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from slsa_audit.model import (
    AttackVector,
    ComponentRef,
    EmptyInputError,
    Finding,
    Repository,
    Severity,
)


def dl_distance(a: str, b: str) -> int:
    """OSA (restricted Damerau-Levenshtein) distance between two strings."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev2: list[int] | None = None
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        ca = a[i - 1]
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cb = b[j - 1]
            cost = 0 if ca == cb else 1
            best = prev[j] + 1
            alt = cur[j - 1] + 1
            if alt < best:
                best = alt
            alt = prev[j - 1] + cost
            if alt < best:
                best = alt
            if i > 1 and j > 1 and ca == b[j - 2] and a[i - 2] == cb:
                alt = prev2[j - 2] + 1
                if alt < best:
                    best = alt
            cur[j] = best
        prev2 = prev
        prev = cur
    return prev[lb]


def levenshtein(a: str, b: str) -> int:
    """Plain Levenshtein distance (true metric; upper bound on OSA)."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        ca = a[i - 1]
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            best = prev[j] + 1
            alt = cur[j - 1] + 1
            if alt < best:
                best = alt
            alt = prev[j - 1] + (0 if ca == b[j - 1] else 1)
            if alt < best:
                best = alt
            cur[j] = best
        prev = cur
    return prev[lb]


class _BKNode:
    __slots__ = ("word", "children")

    def __init__(self, word: str):
        self.word = word
        self.children: dict[int, _BKNode] = {}


class BKTree:
    """BK-tree over Levenshtein distance for near-neighbour candidates."""

    def __init__(self, words: Iterable[str] = ()):
        self.root: _BKNode | None = None
        for word in words:
            self.add(word)

    def add(self, word: str) -> None:
        if self.root is None:
            self.root = _BKNode(word)
            return
        node = self.root
        while True:
            dist = levenshtein(word, node.word)
            if dist == 0:
                return
            child = node.children.get(dist)
            if child is None:
                node.children[dist] = _BKNode(word)
                return
            node = child

    def query(self, word: str, radius: int) -> list[str]:
        """All stored words within the given Levenshtein radius."""
        if self.root is None:
            return []
        out: list[str] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            dist = levenshtein(word, node.word)
            if dist <= radius:
                out.append(node.word)
            # Metric triangle inequality bounds useful child edges.
            for edge, child in node.children.items():
                if dist - radius <= edge <= dist + radius:
                    stack.append(child)
        return out


class NameKind(Enum):
    USERNAME = "username"
    IMAGE_NAME = "image"


@dataclass(frozen=True)
class NameRecord:
    name: str
    kind: NameKind
    owner: ComponentRef

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("normalized name must be non-empty")


def normalize_name(raw: str) -> str:
    """Lowercase and strip any registry/namespace prefix."""
    name = raw.strip().lower()
    if "/" in name:
        name = name.rsplit("/", 1)[-1]
    return name


def build_name_records(
    refs: Iterable[ComponentRef], include_aws_sar: bool = False
) -> list[NameRecord]:
    """Username and image-name records for a corpus.

    AWS SAR components are skipped by default: their names are resolved
    inside AWS tooling where manual typing is rare.
    """
    records: list[NameRecord] = []
    for ref in refs:
        if ref.repository is Repository.AWS_SAR and not include_aws_sar:
            continue
        publisher = normalize_name(ref.publisher)
        image = normalize_name(ref.name)
        if publisher:
            records.append(NameRecord(name=publisher, kind=NameKind.USERNAME, owner=ref))
        if image:
            records.append(NameRecord(name=image, kind=NameKind.IMAGE_NAME, owner=ref))
    return records


@dataclass(frozen=True)
class NearPair:
    a: NameRecord
    b: NameRecord
    distance: int

    def sort_key(self) -> tuple:
        return (self.distance, self.a.kind.value, self.a.name, self.b.name,
                self.a.owner.sort_key(), self.b.owner.sort_key())


@dataclass
class NearPairScan:
    """Distance>=1 pairs plus distance-0 cross-owner name collisions."""

    pairs: list[NearPair] = field(default_factory=list)
    collisions: list[NearPair] = field(default_factory=list)


def _ordered(a: NameRecord, b: NameRecord) -> tuple[NameRecord, NameRecord]:
    if (a.name, a.owner.sort_key()) <= (b.name, b.owner.sort_key()):
        return a, b
    return b, a


def find_near_pairs(
    records: Iterable[NameRecord], max_distance: int = 1, use_index: bool = True
) -> NearPairScan:
    """All same-kind record pairs with OSA distance in [1, max_distance].

    Identical names owned by different components are surfaced separately
    as collisions. The BK-tree path queries at twice the radius because a
    transposition costs 1 under OSA but up to 2 under Levenshtein; exact
    OSA verification then trims the candidates.
    """
    if max_distance < 1:
        raise ValueError("max_distance must be >= 1")
    scan = NearPairScan()
    by_kind: dict[NameKind, list[NameRecord]] = {}
    for record in records:
        by_kind.setdefault(record.kind, []).append(record)
    for kind_records in by_kind.values():
        by_name: dict[str, list[NameRecord]] = {}
        for record in kind_records:
            by_name.setdefault(record.name, []).append(record)
        names = sorted(by_name)
        # Identical names count as collisions only across publishers.
        for name in names:
            owners = by_name[name]
            for i in range(len(owners)):
                for j in range(i + 1, len(owners)):
                    pub_a = normalize_name(owners[i].owner.publisher)
                    pub_b = normalize_name(owners[j].owner.publisher)
                    if pub_a != pub_b:
                        first, second = _ordered(owners[i], owners[j])
                        scan.collisions.append(NearPair(first, second, 0))
        if use_index:
            name_pairs = _near_name_pairs_indexed(names, max_distance)
        else:
            name_pairs = _near_name_pairs_brute(names, max_distance)
        for name_a, name_b, distance in name_pairs:
            for rec_a in by_name[name_a]:
                for rec_b in by_name[name_b]:
                    first, second = _ordered(rec_a, rec_b)
                    scan.pairs.append(NearPair(first, second, distance))
    scan.pairs.sort(key=NearPair.sort_key)
    scan.collisions.sort(key=NearPair.sort_key)
    return scan


def _near_name_pairs_brute(names: list[str], max_distance: int) -> list[tuple[str, str, int]]:
    out: list[tuple[str, str, int]] = []
    for i in range(len(names)):
        a = names[i]
        for j in range(i + 1, len(names)):
            b = names[j]
            if abs(len(a) - len(b)) > max_distance:
                continue
            distance = dl_distance(a, b)
            if 1 <= distance <= max_distance:
                out.append((a, b, distance))
    return out


def _near_name_pairs_indexed(names: list[str], max_distance: int) -> list[tuple[str, str, int]]:
    tree = BKTree(names)
    out: list[tuple[str, str, int]] = []
    for a in names:
        # Levenshtein <= 2*OSA, so the doubled radius never drops a pair.
        for b in tree.query(a, 2 * max_distance):
            if b <= a:
                continue
            if abs(len(a) - len(b)) > max_distance:
                continue
            distance = dl_distance(a, b)
            if 1 <= distance <= max_distance:
                out.append((a, b, distance))
    return out


def distance_cdf(
    records: Iterable[NameRecord], max_distance: int
) -> list[tuple[int, float]]:
    """CDF of pairwise OSA distances for d = 0..max_distance.

    Pairs are formed within each kind; fractions are over all such pairs.
    """
    by_kind: dict[NameKind, list[NameRecord]] = {}
    total = 0
    for record in records:
        by_kind.setdefault(record.kind, []).append(record)
        total += 1
    if total < 2:
        raise EmptyInputError("distance_cdf requires at least two records")
    counts = [0] * (max_distance + 1)
    num_pairs = 0
    for kind_records in by_kind.values():
        n = len(kind_records)
        for i in range(n):
            for j in range(i + 1, n):
                num_pairs += 1
                d = dl_distance(kind_records[i].name, kind_records[j].name)
                if d <= max_distance:
                    counts[d] += 1
    if num_pairs == 0:
        raise EmptyInputError("distance_cdf requires at least one same-kind pair")
    cdf: list[tuple[int, float]] = []
    cumulative = 0
    for d in range(max_distance + 1):
        cumulative += counts[d]
        cdf.append((d, cumulative / num_pairs))
    return cdf


def findings_from_pairs(scan: NearPairScan) -> list[Finding]:
    """Render near pairs and collisions as findings (anchored on the first
    record of each pair)."""
    findings: list[Finding] = []
    for pair in scan.pairs:
        findings.append(
            Finding(
                rule_id="V5-NEAR-NAME",
                vector=AttackVector.V5,
                severity=Severity.MEDIUM,
                component=pair.a.owner,
                location="component.meta",
                evidence=(
                    f"{pair.a.kind.value} {pair.a.name!r} is within edit distance "
                    f"{pair.distance} of {pair.b.name!r} ({pair.b.owner.slug})"
                ),
                remediation="review whether the similar name is a squatting attempt",
            )
        )
    for pair in scan.collisions:
        findings.append(
            Finding(
                rule_id="V5-NAME-COLLISION",
                vector=AttackVector.V5,
                severity=Severity.MEDIUM,
                component=pair.a.owner,
                location="component.meta",
                evidence=(
                    f"{pair.a.kind.value} {pair.a.name!r} is also published by "
                    f"{pair.b.owner.slug}"
                ),
                remediation="confirm both publishers are legitimate owners of the name",
            )
        )
    return findings

"""OSA distance, BK-tree index soundness, near pairs, and the distance CDF."""
from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slsa_audit.model import ComponentRef, EmptyInputError, Repository
from slsa_audit.typosquat import (
    BKTree,
    NameKind,
    NameRecord,
    build_name_records,
    distance_cdf,
    dl_distance,
    find_near_pairs,
    findings_from_pairs,
    levenshtein,
    normalize_name,
)


def osa_reference(a: str, b: str) -> int:
    """Memoized transcription of the recursive OSA definition (test oracle)."""
    m, n = len(a), len(b)
    memo = [[-1] * (n + 1) for _ in range(m + 1)]

    def rec(i: int, j: int) -> int:
        cached = memo[i][j]
        if cached >= 0:
            return cached
        if i == 0:
            value = j
        elif j == 0:
            value = i
        else:
            cost = 0 if a[i - 1] == b[j - 1] else 1
            value = min(rec(i - 1, j) + 1, rec(i, j - 1) + 1, rec(i - 1, j - 1) + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                transposed = rec(i - 2, j - 2) + 1
                if transposed < value:
                    value = transposed
        memo[i][j] = value
        return value

    return rec(m, n)


def _ref(repository: Repository, publisher: str, name: str) -> ComponentRef:
    return ComponentRef(repository, publisher, name)


def test_dl_examples():
    assert dl_distance("lodash", "lodash") == 0
    assert dl_distance("lodash", "lodahs") == 1
    assert osa_reference("lodash", "lodahs") == 1
    assert dl_distance("ca", "abc") == 3
    assert osa_reference("ca", "abc") == 3
    assert dl_distance("", "") == 0
    assert dl_distance("", "abc") == 3
    assert dl_distance("ab", "ba") == 1


@given(
    st.text(alphabet="abcd", max_size=8),
    st.text(alphabet="abcd", max_size=8),
)
@settings(max_examples=300)
def test_dl_properties(a, b):
    d = dl_distance(a, b)
    assert d == dl_distance(b, a)
    assert d <= max(len(a), len(b))
    assert (d == 0) == (a == b)
    assert d <= levenshtein(a, b)
    assert levenshtein(a, b) <= 2 * d


def test_dl_matches_reference_small_exhaustive():
    strings = [""]
    for length in range(1, 5):
        strings += ["".join(p) for p in itertools.product("ab", repeat=length)]
    for a in strings:
        for b in strings:
            assert dl_distance(a, b) == osa_reference(a, b), (a, b)


def test_bktree_query_radius():
    tree = BKTree(["book", "books", "cake", "boo", "cape", "cart"])
    assert sorted(tree.query("book", 1)) == ["boo", "book", "books"]
    assert tree.query("zzzzz", 0) == []


def test_find_near_pairs_single_insertion():
    records = [
        NameRecord("serverless-app", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "a", "serverless-app")),
        NameRecord("serverless-apps", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "b", "serverless-apps")),
        NameRecord("redis", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "c", "redis")),
    ]
    scan = find_near_pairs(records, max_distance=1)
    assert len(scan.pairs) == 1
    assert scan.pairs[0].distance == 1
    assert {scan.pairs[0].a.name, scan.pairs[0].b.name} == {"serverless-app", "serverless-apps"}


def test_find_near_pairs_single_record():
    records = [NameRecord("solo", NameKind.IMAGE_NAME, _ref(Repository.GITHUB, "p", "solo"))]
    scan = find_near_pairs(records, max_distance=2)
    assert scan.pairs == [] and scan.collisions == []


def test_identical_names_reported_as_collision():
    records = [
        NameRecord("tool", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "alice", "tool")),
        NameRecord("tool", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "bob", "tool")),
    ]
    scan = find_near_pairs(records, max_distance=1)
    assert scan.pairs == []
    assert len(scan.collisions) == 1
    assert scan.collisions[0].distance == 0


def test_same_publisher_duplicate_not_collision():
    records = [
        NameRecord("bluefin", NameKind.USERNAME, _ref(Repository.GITHUB, "bluefin", "one")),
        NameRecord("bluefin", NameKind.USERNAME, _ref(Repository.GITHUB, "bluefin", "two")),
    ]
    scan = find_near_pairs(records, max_distance=1)
    assert scan.collisions == [] and scan.pairs == []


def test_kinds_compared_separately():
    records = [
        NameRecord("alpha", NameKind.USERNAME, _ref(Repository.GITHUB, "alpha", "x")),
        NameRecord("alphas", NameKind.IMAGE_NAME, _ref(Repository.GITHUB, "other", "alphas")),
    ]
    assert find_near_pairs(records, max_distance=1).pairs == []


def _random_records(rng: random.Random, count: int) -> list[NameRecord]:
    records = []
    for i in range(count):
        name = "".join(rng.choices("abcdefgh", k=rng.randint(3, 9)))
        records.append(
            NameRecord(name, NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, f"p{i}", f"n{i}"))
        )
    return records


@pytest.mark.parametrize("seed,count,max_distance", [(1, 120, 1), (2, 150, 2), (3, 80, 3)])
def test_index_equals_brute_force(seed, count, max_distance):
    records = _random_records(random.Random(seed), count)
    indexed = find_near_pairs(records, max_distance, use_index=True)
    brute = find_near_pairs(records, max_distance, use_index=False)
    assert indexed.pairs == brute.pairs
    assert indexed.collisions == brute.collisions


def test_length_prefilter_soundness():
    # Any true near pair has length difference <= max_distance, so the filter
    # can only remove non-pairs.
    rng = random.Random(9)
    for _ in range(300):
        a = "".join(rng.choices("ab", k=rng.randint(0, 8)))
        b = "".join(rng.choices("ab", k=rng.randint(0, 8)))
        if dl_distance(a, b) <= 2:
            assert abs(len(a) - len(b)) <= 2


def test_distance_cdf_examples():
    records = [
        NameRecord(n, NameKind.IMAGE_NAME, _ref(Repository.GITHUB, f"p{i}", n))
        for i, n in enumerate(["ab", "ba", "zz"])
    ]
    cdf = distance_cdf(records, 2)
    assert cdf[0] == (0, 0.0)
    assert cdf[1][1] == pytest.approx(1 / 3)
    assert cdf[2] == (2, 1.0)


def test_distance_cdf_all_far():
    records = [
        NameRecord(n, NameKind.IMAGE_NAME, _ref(Repository.GITHUB, f"p{i}", n))
        for i, n in enumerate(["aaaaaa", "bbbbbb", "cccccc"])
    ]
    assert distance_cdf(records, 1) == [(0, 0.0), (1, 0.0)]


def test_distance_cdf_needs_two():
    with pytest.raises(EmptyInputError):
        distance_cdf([], 1)
    solo = [NameRecord("x", NameKind.IMAGE_NAME, _ref(Repository.GITHUB, "p", "x"))]
    with pytest.raises(EmptyInputError):
        distance_cdf(solo, 1)


def test_build_name_records_skips_aws_sar():
    refs = [
        _ref(Repository.AWS_SAR, "amazon", "resizer"),
        _ref(Repository.DOCKER_HUB, "Alice", "ns/Tool"),
    ]
    records = build_name_records(refs)
    assert all(r.owner.repository is not Repository.AWS_SAR for r in records)
    names = {(r.kind, r.name) for r in records}
    assert names == {(NameKind.USERNAME, "alice"), (NameKind.IMAGE_NAME, "tool")}
    included = build_name_records(refs, include_aws_sar=True)
    assert any(r.owner.repository is Repository.AWS_SAR for r in included)


def test_normalize_name():
    assert normalize_name("Registry.io/NS/Image") == "image"
    assert normalize_name("  MixedCase ") == "mixedcase"


def test_findings_from_pairs():
    records = [
        NameRecord("tool", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "alice", "tool")),
        NameRecord("tools", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "bob", "tools")),
        NameRecord("tool", NameKind.IMAGE_NAME, _ref(Repository.DOCKER_HUB, "carol", "tool")),
    ]
    scan = find_near_pairs(records, max_distance=1)
    findings = findings_from_pairs(scan)
    rule_ids = sorted(f.rule_id for f in findings)
    assert rule_ids.count("V5-NEAR-NAME") == 2  # tool~tools twice (two owners of "tool")
    assert rule_ids.count("V5-NAME-COLLISION") == 1

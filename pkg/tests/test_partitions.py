import itertools

import pytest
from hypothesis import given, strategies as st

from equibasis.partitions import (
    SetPartition,
    bell,
    class_size,
    effective_dim,
    enumerate_partitions,
    equality_pattern,
    nominal_dim,
)

# reference values for the Bell triangle
BELL_KNOWN = {0: 1, 1: 1, 2: 2, 3: 5, 4: 15, 5: 52, 6: 203, 12: 4_213_597}


@pytest.mark.parametrize("order,expected", sorted(BELL_KNOWN.items()))
def test_bell_known_values(order, expected):
    assert bell(order) == expected


def test_bell_rejects_negative():
    with pytest.raises(ValueError):
        bell(-1)


def brute_force_partitions(order):
    """Independent oracle: enumerate all label assignments, canonicalize, dedupe."""
    seen = set()
    for labels in itertools.product(range(order), repeat=order):
        seen.add(equality_pattern(labels).rgs)
    return seen


@pytest.mark.parametrize("order", range(1, 8))
def test_enumeration_matches_brute_force(order):
    enumerated = [p.rgs for p in enumerate_partitions(order)]
    assert len(enumerated) == bell(order)
    assert set(enumerated) == brute_force_partitions(order)
    assert enumerated == sorted(enumerated)  # canonical order is lexicographic
    assert len(set(enumerated)) == len(enumerated)


def test_enumeration_small_cases():
    assert [p.rgs for p in enumerate_partitions(1)] == [(0,)]
    assert [p.rgs for p in enumerate_partitions(2)] == [(0, 0), (0, 1)]
    assert len(enumerate_partitions(4)) == 15


def test_enumeration_range_errors():
    with pytest.raises(ValueError):
        enumerate_partitions(0)
    with pytest.raises(ValueError):
        enumerate_partitions(13)


def test_rgs_validation():
    with pytest.raises(ValueError):
        SetPartition((1, 0))
    with pytest.raises(ValueError):
        SetPartition((0, 2))
    SetPartition(())  # empty partition of zero positions is fine


def test_blocks_round_trip():
    p = SetPartition((0, 0, 1, 2, 1))
    assert p.blocks() == ((0, 1), (2, 4), (3,))
    assert SetPartition.from_blocks([(3,), (0, 1), (2, 4)]) == p


def test_equality_pattern_examples():
    assert equality_pattern((7, 7, 7)).rgs == (0, 0, 0)
    assert equality_pattern((1, 2)).rgs == (0, 1)
    assert equality_pattern((3, 3, 5, 4)).rgs == (0, 0, 1, 2)


@given(
    st.lists(st.integers(0, 5), min_size=1, max_size=6),
    st.permutations(list(range(6))),
)
def test_equality_pattern_invariant_under_relabeling(index, relabel):
    mapped = [relabel[v] for v in index]
    assert equality_pattern(mapped) == equality_pattern(index)


def test_class_size_examples():
    assert class_size(SetPartition((0, 0)), 5) == 5  # diagonal of a 5x5 matrix
    assert class_size(SetPartition((0, 1)), 5) == 20  # ordered pairs i != j
    assert class_size(SetPartition((0, 1, 2)), 2) == 0  # no injective assignment


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("order", range(1, 5))
def test_class_sizes_partition_index_space(n, order):
    total = sum(class_size(p, n) for p in enumerate_partitions(order))
    assert total == n**order


def test_refinement():
    fine = SetPartition((0, 1, 2, 3))
    coarse = SetPartition((0, 0, 0, 0))
    mid = SetPartition((0, 1, 0, 1))
    assert fine.refines(coarse) and fine.refines(mid) and mid.refines(coarse)
    assert not coarse.refines(mid)
    assert mid.refines(mid)


def test_effective_vs_nominal_dim():
    assert nominal_dim(4) == 15
    # partitions of 4 positions with at most n blocks
    assert [effective_dim(4, n) for n in (1, 2, 3, 4, 5)] == [1, 8, 14, 15, 15]


def test_string_round_trip():
    for p in enumerate_partitions(5):
        assert SetPartition.from_string(str(p)) == p

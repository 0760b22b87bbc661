import itertools

import numpy as np
import pytest

from equibasis.basis import (
    BasisElement,
    bias_basis,
    equivariant_basis,
    hartford_subbasis,
    invariant_basis,
    mixed_basis,
    multiset_basis,
    pattern_index_array,
    zeta_matrix,
)
from equibasis.partitions import (
    SetPartition,
    bell,
    class_size,
    effective_dim,
    enumerate_partitions,
    equality_pattern,
)
from equibasis.tensor import PermSpec, apply_perm


def test_invariant_basis_order_1_is_all_ones():
    (elem,) = invariant_basis(1, 4)
    np.testing.assert_array_equal(elem.materialize().data[..., 0], np.ones(4))


def test_invariant_basis_order_2_is_diag_and_offdiag():
    diag, offdiag = invariant_basis(2, 4)
    np.testing.assert_array_equal(diag.materialize().data[..., 0], np.eye(4))
    np.testing.assert_array_equal(
        offdiag.materialize().data[..., 0], np.ones((4, 4)) - np.eye(4)
    )


def test_equivariant_basis_order_1_matches_two_parameter_layer():
    same, different = equivariant_basis(1, 5)
    np.testing.assert_array_equal(same.as_operator(), np.eye(5))
    np.testing.assert_array_equal(different.as_operator(), np.ones((5, 5)) - np.eye(5))


def test_equivariant_basis_k2_counts():
    elems = equivariant_basis(2, 5)
    assert len(elems) == 15
    assert all(e.as_matrix().shape == (25, 25) for e in elems)
    assert sum(e.nonzero_count for e in elems) == 5**4
    for e in elems:
        assert int(e.materialize().data.sum()) == e.nonzero_count == class_size(e.partition, 5)


def test_empty_class_at_small_n():
    _, offdiag = invariant_basis(2, 1)
    assert offdiag.nonzero_count == 0
    assert not offdiag.materialize().data.any()


def test_mixed_basis_counts_and_degenerate_cases():
    assert len(mixed_basis(2, 1, 3)) == bell(3) == 5
    assert [e.partition for e in mixed_basis(2, 0, 3)] == [
        e.partition for e in invariant_basis(2, 3)
    ]
    m11 = mixed_basis(1, 1, 4)
    e11 = equivariant_basis(1, 4)
    for a, b in zip(m11, e11):
        np.testing.assert_array_equal(a.materialize().data, b.materialize().data)


def test_basis_order_caps():
    with pytest.raises(ValueError):
        equivariant_basis(7, 2)
    with pytest.raises(ValueError):
        mixed_basis(0, 0, 3)


def test_orthogonality_disjoint_supports():
    for elems in (equivariant_basis(2, 3), invariant_basis(3, 3)):
        mats = [e.materialize().data.reshape(-1).astype(np.int64) for e in elems]
        for a, b in itertools.combinations(mats, 2):
            assert int(a @ b) == 0


@pytest.mark.parametrize("n", (1, 2, 3, 4))
@pytest.mark.parametrize("order", (1, 2, 3, 4))
def test_fixed_point_property_exhaustive(n, order, request):
    """Every basis element is unchanged by every node relabeling."""
    for elem in mixed_basis(order, 0, n):
        dense = elem.materialize()
        for perm in itertools.permutations(range(n)):
            moved = apply_perm(PermSpec(perm), dense)
            np.testing.assert_array_equal(moved.data, dense.data)


@pytest.mark.parametrize("n,order", [(2, 3), (3, 4), (2, 4)])
def test_effective_rank_when_n_below_order(n, order):
    elems = mixed_basis(order, 0, n)
    stacked = np.array([e.materialize().data.reshape(-1) for e in elems])
    assert np.linalg.matrix_rank(stacked) == effective_dim(order, n)
    for e in elems:
        assert (e.nonzero_count == 0) == (e.partition.num_blocks > n)


def test_completeness_against_group_average():
    from equibasis.oracle import check_basis_spans_fixed_space

    for n, k in ((2, 1), (3, 1), (2, 2), (3, 2)):
        assert check_basis_spans_fixed_space(n, 2 * k).ok


def test_coords_match_membership():
    elem = BasisElement(SetPartition((0, 1, 0)), 3, 2, 1)
    coords = {tuple(r) for r in elem.coords()}
    expected = {
        idx
        for idx in itertools.product(range(3), repeat=3)
        if equality_pattern(idx) == elem.partition
    }
    assert coords == expected
    assert elem.contains((1, 2, 1)) and not elem.contains((1, 1, 1))
    with pytest.raises(ValueError):
        elem.contains((0, 3, 0))


def test_pattern_index_array_agrees_with_scalar_classifier():
    n, order = 3, 3
    ids = pattern_index_array(n, order)
    parts = enumerate_partitions(order)
    for flat, idx in enumerate(itertools.product(range(n), repeat=order)):
        assert parts[ids[flat]] == equality_pattern(idx)


def test_bias_basis_is_output_side_indicators():
    elems = bias_basis(2, 3)
    assert len(elems) == bell(2)
    np.testing.assert_array_equal(elems[0].materialize().data[..., 0], np.eye(3))


# multi-node-set products


def test_multiset_hartford_count():
    sig = [(1, 1, 3), (1, 1, 4)]
    elems = multiset_basis(sig)
    assert len(elems) == bell(2) * bell(2) == 4


def test_multiset_single_set_reduces_to_equivariant():
    for a, b in zip(multiset_basis([(2, 2, 3)]), equivariant_basis(2, 3)):
        np.testing.assert_array_equal(a.materialize(), b.materialize().data[..., 0])


def test_multiset_product_structure_exhaustive():
    sig = [(2, 0, 2), (1, 0, 2)]
    elems = multiset_basis(sig)
    assert len(elems) == bell(2) * bell(1) == 2
    for elem in elems:
        dense = elem.materialize()
        assert dense.shape == (2, 2, 2)
        for idx in itertools.product(range(2), repeat=3):
            member = elem.contains([idx[:2], idx[2:]])
            assert dense[idx] == (1.0 if member else 0.0)


def test_multiset_nonzero_count_is_product():
    sig = [(1, 1, 3), (2, 0, 2)]
    for elem in multiset_basis(sig):
        assert elem.nonzero_count == (
            class_size(elem.factors[0].partition, 3) * class_size(elem.factors[1].partition, 2)
        )


# the 4-operator exchangeable-matrix sub-span


def test_hartford_total_sum_on_ones():
    ops = {c.name: c for c in hartford_subbasis(3)}
    out = ops["broadcast_total"].apply(np.ones((3, 3)))
    np.testing.assert_array_equal(out, np.full((3, 3), 9.0))


def test_hartford_identity_and_broadcasts():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    ops = {c.name: c for c in hartford_subbasis(4)}
    np.testing.assert_allclose(ops["identity"].apply(a), a, atol=1e-12)
    np.testing.assert_allclose(
        ops["broadcast_row_sums"].apply(a), np.outer(a.sum(axis=1), np.ones(4)), atol=1e-12
    )
    np.testing.assert_allclose(
        ops["broadcast_col_sums"].apply(a), np.outer(np.ones(4), a.sum(axis=0)), atol=1e-12
    )


def test_hartford_rank_four():
    stacked = np.array([c.as_operator().reshape(-1) for c in hartford_subbasis(3)])
    assert np.linalg.matrix_rank(stacked) == 4


def test_hartford_span_misses_transpose():
    n = 3
    ops = np.array([c.as_operator().reshape(-1) for c in hartford_subbasis(n)])
    transpose = np.zeros((n * n, n * n))
    for i, j in itertools.product(range(n), repeat=2):
        transpose[i * n + j, j * n + i] = 1.0
    coeff, _, _, _ = np.linalg.lstsq(ops.T, transpose.reshape(-1), rcond=None)
    residual = np.linalg.norm(transpose.reshape(-1) - ops.T @ coeff)
    assert residual > 0.1


def test_zeta_matrix_unit_diagonal_and_invertible():
    z = zeta_matrix(4)
    assert np.array_equal(np.diag(z), np.ones(15))
    assert abs(np.linalg.det(z)) == pytest.approx(1.0)  # unimodular on the lattice

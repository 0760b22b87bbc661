from fractions import Fraction

import numpy as np
import pytest

from equibasis.oracle import (
    averaging_projector,
    check_basis_spans_fixed_space,
    check_layer_dims_with_features,
    check_multiset_dims,
    fixed_subspace_dim,
    trace_moment,
)
from equibasis.partitions import bell, effective_dim


def test_projector_trivial_group():
    np.testing.assert_array_equal(averaging_projector(1, 3), np.eye(1))


def test_projector_structure():
    phi = averaging_projector(3, 2)
    np.testing.assert_allclose(phi, phi.T, atol=0)
    np.testing.assert_allclose(phi @ phi, phi, atol=1e-12)
    assert np.linalg.matrix_rank(phi, tol=1e-8) == 2
    assert np.trace(phi) == pytest.approx(2.0)


@pytest.mark.parametrize(
    "n,order,expected",
    [(3, 2, 2), (4, 3, 5), (5, 4, 15), (2, 3, 4), (2, 4, 8), (3, 4, 14)],
)
def test_fixed_subspace_dims(n, order, expected):
    assert fixed_subspace_dim(n, order) == expected
    assert expected == effective_dim(order, n)


def test_rank_equals_trace():
    for n, order in ((2, 2), (3, 2), (3, 3), (4, 2)):
        phi = averaging_projector(n, order)
        assert round(float(np.trace(phi))) == fixed_subspace_dim(n, order)


@pytest.mark.parametrize("n,order", [(3, 2), (4, 2), (3, 3), (2, 4)])
def test_basis_spans_fixed_space(n, order):
    res = check_basis_spans_fixed_space(n, order)
    assert res.ok
    assert res.max_fixed_point_residual < 1e-10
    assert res.basis_rank == res.fixed_space_dim


def test_trace_moment_examples():
    assert trace_moment(5, 2) == Fraction(2)
    assert trace_moment(6, 4) == Fraction(15)
    assert trace_moment(2, 3) == Fraction(4)  # below-n counterexample: not bell(3)=5
    assert trace_moment(4, 1) == Fraction(1)


@pytest.mark.parametrize("k", (1, 2, 3, 4))
def test_trace_moment_matches_bell_when_n_geq_k(k):
    for n in range(k, 7):
        assert trace_moment(n, k) == Fraction(bell(k))


def test_trace_moment_exactness_type():
    value = trace_moment(3, 2)
    assert isinstance(value, Fraction)


def test_layer_dims_examples():
    res = check_layer_dims_with_features(3, 1, 2, 2, "invariant")
    assert res.ok and res.expected == 2 * 2 * bell(1) + 2
    res = check_layer_dims_with_features(3, 2, 1, 1, "invariant")
    assert res.ok and res.expected == bell(2) + 1
    res = check_layer_dims_with_features(3, 1, 1, 1, "equivariant")
    assert res.ok and res.expected == bell(2) + bell(1)
    res = check_layer_dims_with_features(3, 1, 2, 2, "equivariant")
    assert res.ok and res.expected == 2 * 2 * bell(2) + 2 * bell(1)


def test_multiset_dims_examples():
    assert check_multiset_dims(3, 3, 1, 1, 1, 1).ok  # value 4: the two-set matrix case
    assert check_multiset_dims(3, 3, 1, 1, 1, 1).expected == 4
    res = check_multiset_dims(3, 3, 2, 0, 0, 0)
    assert res.ok and res.expected == 2
    res = check_multiset_dims(2, 3, 1, 1, 0, 0)
    assert res.ok and res.expected == 1


def test_caps_enforced():
    with pytest.raises(ValueError):
        averaging_projector(8, 2)
    with pytest.raises(ValueError):
        averaging_projector(7, 5)  # 7^5 > 3000
    with pytest.raises(ValueError):
        trace_moment(9, 2)

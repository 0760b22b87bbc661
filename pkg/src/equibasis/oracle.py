"""Brute-force verification of the dimension and basis theorems.

Everything here averages over *all* permutations of a small node set and
checks the claimed structure exactly: the group-averaged operator is an
orthogonal projector onto the fixed subspace, its trace and rank both equal
that subspace's dimension, and the indicator basis spans it.  No shortcut
(character theory, cycle indices) is ever taken; the closed forms are the
thing under test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .partitions import bell
from .basis import mixed_basis
from .tensor import flat_perm_indices

# Exhaustive enumeration stays below 7! = 5040 group elements and
# 3000 x 3000 dense projectors.
MAX_PERM_N = 7
MAX_PROJECTOR_SIDE = 3000

EIG_BINARY_TOL = 1e-6  # projector eigenvalues must sit this close to {0, 1}
RANK_EIG_THRESHOLD = 1e-8


def _check_caps(n: int, side: int) -> None:
    if n > MAX_PERM_N:
        raise ValueError(f"n = {n} exceeds the exhaustive-enumeration cap {MAX_PERM_N}")
    if side > MAX_PROJECTOR_SIDE:
        raise ValueError(
            f"projector side {side} exceeds the dense cap {MAX_PROJECTOR_SIDE}"
        )


def averaging_projector(n: int, order: int) -> np.ndarray:
    """Group average of the order-fold relabeling action: (1/n!) sum over perms.

    The result is verified symmetric and idempotent before being returned;
    its image is exactly the subspace of tensors fixed by every relabeling.
    """
    side = n**order
    _check_caps(n, side)
    acc = np.zeros((side, side))
    cols = np.arange(side)
    for perm in itertools.permutations(range(n)):
        acc[flat_perm_indices(perm, order), cols] += 1.0
    phi = acc / math.factorial(n)
    if not np.allclose(phi, phi.T, atol=1e-12):
        raise AssertionError("averaging projector is not symmetric")
    if np.max(np.abs(phi @ phi - phi)) > 1e-10:
        raise AssertionError("averaging projector is not idempotent")
    return phi


def _projector_eigenvalues(phi: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvalsh(phi)
    dist = np.minimum(np.abs(eigs), np.abs(eigs - 1.0))
    if np.max(dist) > EIG_BINARY_TOL:
        raise AssertionError(f"projector eigenvalues stray from {{0,1}} by {np.max(dist):.2e}")
    return eigs


def fixed_subspace_dim(n: int, order: int) -> int:
    """Rank of the averaging projector; the dimension being asserted by theory.

    Eigenvalues of a projector are exactly 0 or 1, so rank counting is
    threshold-insensitive; the eigenvalues are nevertheless checked to be
    within {0, 1} numerically before counting.
    """
    phi = averaging_projector(n, order)
    eigs = _projector_eigenvalues(phi)
    rank = int(np.sum(eigs > RANK_EIG_THRESHOLD))
    trace = float(np.trace(phi))
    if abs(trace - rank) > 1e-6:
        raise AssertionError(f"trace {trace} and rank {rank} disagree")
    return rank


@dataclass(frozen=True)
class SpanCheck:
    ok: bool
    max_fixed_point_residual: float
    basis_rank: int
    fixed_space_dim: int


def check_basis_spans_fixed_space(n: int, order: int) -> SpanCheck:
    """Indicator elements are each fixed points and jointly span the fixed space.

    Verifies phi @ vec(B) == vec(B) for every element and that the stacked
    nonzero elements reach the projector's full rank.
    """
    phi = averaging_projector(n, order)
    dim = fixed_subspace_dim(n, order)
    vecs = []
    residual = 0.0
    for elem in mixed_basis(order, 0, n):
        v = elem.materialize().data.reshape(-1)
        residual = max(residual, float(np.max(np.abs(phi @ v - v))))
        if elem.nonzero_count > 0:
            vecs.append(v)
    rank = int(np.linalg.matrix_rank(np.array(vecs), tol=1e-8))
    return SpanCheck(residual < 1e-10 and rank == dim, residual, rank, dim)


def trace_moment(n: int, k: int) -> Fraction:
    """Average k-th power of the fixed-point count over all permutations; exact.

    Equals bell(k) whenever n >= k.  Integer arithmetic throughout: this is
    an identity test, and floats would weaken it.
    """
    if n > MAX_PERM_N:
        raise ValueError(f"n = {n} exceeds the exhaustive-enumeration cap {MAX_PERM_N}")
    if k < 0:
        raise ValueError("k must be >= 0")
    total = 0
    for perm in itertools.permutations(range(n)):
        fixed = sum(1 for i, v in enumerate(perm) if i == v)
        total += fixed**k
    return Fraction(total, math.factorial(n))


@dataclass(frozen=True)
class DimCheck:
    ok: bool
    measured: float
    expected: int


def _perm_flat_matrix(perm, order: int) -> np.ndarray:
    """Dense matrix of the order-fold relabeling action for one permutation."""
    side = len(perm) ** order
    m = np.zeros((side, side))
    m[flat_perm_indices(perm, order), np.arange(side)] = 1.0
    return m


def _assert_projector(phi: np.ndarray) -> None:
    if not np.allclose(phi, phi.T, atol=1e-12):
        raise AssertionError("group average is not symmetric")
    if np.max(np.abs(phi @ phi - phi)) > 1e-10:
        raise AssertionError("group average is not idempotent")


def check_layer_dims_with_features(
    n: int, k: int, d_in: int, d_out: int, kind: str = "invariant"
) -> DimCheck:
    """Parameter-space dimension of a feature-carrying layer, by projector trace.

    Builds the dense projector for the relabeling power tensored with
    identities on the channel axes and reads off its trace: it must equal
    d_in * d_out * bell(k) plus d_out bias terms for invariant layers, and
    d_in * d_out * bell(2k) plus d_out * bell(k) for equivariant ones
    (valid for n >= the relevant order).
    """
    if kind not in ("invariant", "equivariant"):
        raise ValueError(f"unknown layer kind {kind!r}")
    order = k if kind == "invariant" else 2 * k
    side = (n**order) * d_in * d_out
    _check_caps(n, side)
    eye_ch = np.eye(d_in * d_out)
    phi = np.zeros((side, side))
    for perm in itertools.permutations(range(n)):
        phi += np.kron(_perm_flat_matrix(perm, order), eye_ch)
    phi /= math.factorial(n)
    _assert_projector(phi)
    linear = float(np.trace(phi))
    if kind == "invariant":
        bias = float(d_out)  # constants; the group acts trivially on them
        expected = d_in * d_out * bell(k) + d_out
    else:
        bias_side = (n**k) * d_out
        phi_b = np.zeros((bias_side, bias_side))
        for perm in itertools.permutations(range(n)):
            phi_b += np.kron(_perm_flat_matrix(perm, k), np.eye(d_out))
        phi_b /= math.factorial(n)
        _assert_projector(phi_b)
        bias = float(np.trace(phi_b))
        expected = d_in * d_out * bell(2 * k) + d_out * bell(k)
    measured = linear + bias
    return DimCheck(abs(measured - expected) < 1e-8, measured, expected)


def check_multiset_dims(
    n1: int, n2: int, k1: int, k2: int, l1: int, l2: int
) -> DimCheck:
    """Dimension of equivariant layers over two independently permuted node sets.

    Builds the dense projector averaging the Kronecker product of the two
    per-set relabeling powers over both permutation groups; the trace must
    equal the product of the per-set Bell numbers (for n_i >= k_i + l_i).
    """
    o1, o2 = k1 + l1, k2 + l2
    side = (n1**o1) * (n2**o2)
    _check_caps(max(n1, n2), side)
    phi = np.zeros((side, side))
    for p1 in itertools.permutations(range(n1)):
        m1 = _perm_flat_matrix(p1, o1)
        for p2 in itertools.permutations(range(n2)):
            phi += np.kron(m1, _perm_flat_matrix(p2, o2))
    phi /= math.factorial(n1) * math.factorial(n2)
    _assert_projector(phi)
    measured = float(np.trace(phi))
    expected = bell(o1) * bell(o2)
    return DimCheck(abs(measured - expected) < 1e-8, measured, expected)

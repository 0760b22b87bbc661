"""Indicator bases for permutation-invariant and -equivariant linear maps.

Each basis element is the 0/1 indicator of one index-equality class: its
entry at a multi-index is 1 exactly when the index's equality pattern is the
element's partition.  Distinct elements therefore have disjoint supports and
form an orthogonal family.  Elements are stored implicitly (partition plus a
membership test); dense materialization is opt-in and meant for tests,
oracles and figure dumps.

A single element covers every flavor the package needs by splitting its
positions into k input positions followed by l output positions:

* invariant functionals R^{n^k} -> R      : l = 0
* equivariant maps      R^{n^k} -> R^{n^k}: l = k
* mixed-order maps      R^{n^k} -> R^{n^l}: arbitrary l
* bias terms for order-l outputs          : k = 0
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .partitions import (
    SetPartition,
    class_size,
    enumerate_partitions,
    equality_pattern,
)
from .tensor import Tensor

MAX_BASIS_ORDER = 12

# Classification of [n]^order touches n^order indices; chunked to bound memory.
_CLASSIFY_CHUNK = 1 << 21


def _digit_matrix(flat: np.ndarray, n: int, order: int) -> np.ndarray:
    """Row-major digits of flat indices: shape (order, len(flat))."""
    digits = np.empty((order, flat.size), dtype=np.int64)
    rest = flat.copy()
    for axis in range(order - 1, -1, -1):
        digits[axis] = rest % n
        rest //= n
    return digits


def _pattern_keys(digits: np.ndarray) -> np.ndarray:
    """Encode the equality pattern of each column as a single integer key."""
    order = digits.shape[0]
    labels = np.empty_like(digits)
    next_label = np.zeros(digits.shape[1], dtype=np.int64)
    for i in range(order):
        lab = np.full(digits.shape[1], -1, dtype=np.int64)
        for j in range(i):
            hit = (digits[j] == digits[i]) & (lab < 0)
            lab[hit] = labels[j][hit]
        fresh = lab < 0
        lab[fresh] = next_label[fresh]
        next_label[fresh] += 1
        labels[i] = lab
    keys = np.zeros(digits.shape[1], dtype=np.int64)
    for i in range(order):
        keys = keys * (MAX_BASIS_ORDER + 1) + labels[i]
    return keys


@lru_cache(maxsize=None)
def _partition_key_table(order: int) -> tuple[np.ndarray, np.ndarray]:
    """(sorted keys, canonical index per sorted key) for partitions of ``order``."""
    parts = enumerate_partitions(order)
    keys = np.array(
        [
            sum(label * (MAX_BASIS_ORDER + 1) ** (order - 1 - i) for i, label in enumerate(p.rgs))
            for p in parts
        ],
        dtype=np.int64,
    )
    sorter = np.argsort(keys)
    return keys[sorter], np.arange(len(parts), dtype=np.int64)[sorter]


@lru_cache(maxsize=None)
def pattern_index_array(n: int, order: int) -> np.ndarray:
    """Canonical partition index of every flat multi-index of [n]^order.

    The result has length n^order; entry f is the position, in the canonical
    partition order, of the equality pattern of the multi-index with
    row-major flat index f.  For order 0 the single empty index gets class 0.
    """
    if order == 0:
        return np.zeros(1, dtype=np.int64)
    size = n**order
    sorted_keys, canon = _partition_key_table(order)
    out = np.empty(size, dtype=np.int64)
    for start in range(0, size, _CLASSIFY_CHUNK):
        flat = np.arange(start, min(start + _CLASSIFY_CHUNK, size), dtype=np.int64)
        keys = _pattern_keys(_digit_matrix(flat, n, order))
        out[start : start + flat.size] = canon[np.searchsorted(sorted_keys, keys)]
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BasisElement:
    """Indicator of one index-equality class over k input + l output positions."""

    partition: SetPartition
    n: int
    k: int
    l: int

    def __post_init__(self) -> None:
        if self.partition.order != self.k + self.l:
            raise ValueError("partition order must equal k + l")

    @property
    def order(self) -> int:
        return self.k + self.l

    @property
    def nonzero_count(self) -> int:
        return class_size(self.partition, self.n)

    def contains(self, index: Sequence[int]) -> bool:
        """Membership test: entry at ``index`` is 1 iff this returns True."""
        if len(index) != self.order:
            raise ValueError(f"index length {len(index)} != order {self.order}")
        if any(not 0 <= int(v) < self.n for v in index):
            raise ValueError(f"index entries must lie in 0..{self.n - 1}")
        return equality_pattern(index) == self.partition

    def coords(self) -> np.ndarray:
        """All member multi-indices, shape (nonzero_count, order).

        Enumerates injective block-value assignments, so the cost is the
        support size rather than n^order.
        """
        m = self.partition.num_blocks
        rgs = self.partition.rgs
        rows = [
            [assign[label] for label in rgs]
            for assign in itertools.permutations(range(self.n), m)
        ]
        return np.array(rows, dtype=np.int64).reshape(len(rows), self.order)

    def materialize(self) -> Tensor:
        """Dense 0/1 tensor of shape (n,) * order (single channel)."""
        dense = np.zeros((self.n,) * self.order)
        for row in self.coords():
            dense[tuple(row)] = 1.0
        return Tensor(dense[..., None], self.order)

    def as_matrix(self) -> np.ndarray:
        """Row-major reshape to (n^k, n^l): rows = input index, cols = output."""
        return self.materialize().data.reshape(self.n**self.k, self.n**self.l)

    def as_operator(self) -> np.ndarray:
        """(n^l, n^k) matrix acting on flattened inputs: out[b] = sum_a T[a,b] in[a]."""
        return self.as_matrix().T


def mixed_basis(k: int, l: int, n: int) -> list[BasisElement]:
    """Basis of maps R^{n^k} -> R^{n^l}: one element per partition of k+l positions."""
    if k < 0 or l < 0 or k + l < 1:
        raise ValueError(f"need k, l >= 0 with k + l >= 1, got k={k}, l={l}")
    if k + l > MAX_BASIS_ORDER:
        raise ValueError(f"k + l = {k + l} exceeds the order cap {MAX_BASIS_ORDER}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [BasisElement(p, n, k, l) for p in enumerate_partitions(k + l)]


def invariant_basis(k: int, n: int) -> list[BasisElement]:
    """bell(k) elements spanning the invariant functionals on order-k tensors."""
    if k > 6:
        raise ValueError(f"invariant basis capped at order 6, got k={k}")
    return mixed_basis(k, 0, n)


def equivariant_basis(k: int, n: int) -> list[BasisElement]:
    """bell(2k) order-2k elements spanning the equivariant maps on order-k tensors."""
    if k > 6:
        raise ValueError(f"equivariant basis capped at order 6, got k={k}")
    return mixed_basis(k, k, n)


def bias_basis(k: int, n: int) -> list[BasisElement]:
    """bell(k) constant-term elements for order-k outputs (no input positions)."""
    return mixed_basis(0, k, n)


@dataclass(frozen=True)
class MultiNodeBasisElement:
    """Product indicator over several independently permuted node sets.

    The entry at (a_1..a_m, b_1..b_m) is 1 iff every per-set index group
    (a_i, b_i) matches that set's partition.
    """

    factors: tuple[BasisElement, ...]

    @property
    def nonzero_count(self) -> int:
        out = 1
        for f in self.factors:
            out *= f.nonzero_count
        return out

    def contains(self, groups: Sequence[Sequence[int]]) -> bool:
        """Membership for per-set index groups, each of length k_i + l_i."""
        if len(groups) != len(self.factors):
            raise ValueError("one index group per node set required")
        return all(f.contains(g) for f, g in zip(self.factors, groups))

    def materialize(self) -> np.ndarray:
        """Dense array with axes (a_1.., a_2.., ..., b_1.., b_2.., ...)."""
        dense = np.array(1.0)
        for f in self.factors:
            part = f.materialize().data[..., 0]
            dense = np.multiply.outer(dense, part)
        # outer() interleaves per-set (a_i.., b_i..); regroup inputs then outputs
        in_axes: list[int] = []
        out_axes: list[int] = []
        offset = 0
        for f in self.factors:
            in_axes.extend(range(offset, offset + f.k))
            out_axes.extend(range(offset + f.k, offset + f.k + f.l))
            offset += f.k + f.l
        return np.transpose(dense, in_axes + out_axes)


def multiset_basis(signature: Sequence[tuple[int, int, int]]) -> list[MultiNodeBasisElement]:
    """Basis for layers over a product of node sets.

    ``signature`` lists (k_i, l_i, n_i) per node set.  The result has one
    element per choice of partition for each set, prod_i bell(k_i + l_i) in
    total, ordered row-major with the canonical per-set order.
    """
    if not signature:
        raise ValueError("signature must name at least one node set")
    per_set = [mixed_basis(k, l, n) for (k, l, n) in signature]
    return [MultiNodeBasisElement(tuple(combo)) for combo in itertools.product(*per_set)]


@lru_cache(maxsize=None)
def zeta_matrix(order: int) -> np.ndarray:
    """Refinement incidence of the partition lattice in canonical order.

    Z[i, j] = 1 iff partition i refines partition j.  Z is invertible over
    the integers; its inverse carries sums over closed equality constraints
    back to exact-pattern indicator coefficients.
    """
    parts = enumerate_partitions(order)
    z = np.zeros((len(parts), len(parts)))
    for i, p in enumerate(parts):
        for j, q in enumerate(parts):
            if p.refines(q):
                z[i, j] = 1.0
    return z


@dataclass(frozen=True, eq=False)
class BasisCombination:
    """A named linear combination of the canonical order-2k indicator elements."""

    name: str
    coefficients: np.ndarray  # aligned with equivariant_basis(k, n)
    n: int
    k: int = 2

    def elements(self) -> list[BasisElement]:
        return equivariant_basis(self.k, self.n)

    def as_operator(self) -> np.ndarray:
        out = np.zeros((self.n**self.k, self.n**self.k))
        for c, e in zip(self.coefficients, self.elements()):
            if c != 0:
                out += c * e.as_operator()
        return out

    def apply(self, a: np.ndarray) -> np.ndarray:
        flat = self.as_operator() @ np.asarray(a, dtype=np.float64).reshape(-1)
        return flat.reshape((self.n,) * self.k)


def hartford_subbasis(n: int) -> list[BasisCombination]:
    """The 4-parameter exchangeable-matrix operators inside the 15-element span.

    These are the maps equivariant under independent row and column
    relabelings: identity, column-broadcast of row sums, row-broadcast of
    column sums, and the total-sum broadcast.  Coefficients are recorded over
    the canonical order-4 indicator basis, where each operator is the sum of
    the indicator classes refined by its equality-constraint pattern.
    """
    constraints = [
        ("identity", SetPartition((0, 1, 0, 1))),
        ("broadcast_row_sums", SetPartition((0, 1, 0, 2))),  # out(i,j) = sum_c A(i,c)
        ("broadcast_col_sums", SetPartition((0, 1, 2, 1))),  # out(i,j) = sum_r A(r,j)
        ("broadcast_total", SetPartition((0, 1, 2, 3))),
    ]
    parts = enumerate_partitions(4)
    out = []
    for name, pi in constraints:
        coeff = np.array([1.0 if pi.refines(mu) else 0.0 for mu in parts])
        out.append(BasisCombination(name, coeff, n))
    return out

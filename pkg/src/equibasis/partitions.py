"""Set partitions of tensor index positions.

Every weight-tying class of a permutation-invariant or -equivariant linear
layer corresponds to one partition of the index positions, so everything in
this package ultimately indexes its parameters by the objects defined here.
Partitions are kept in restricted growth form, which is canonical: two
partitions are equal iff their growth strings are equal, and the lexicographic
order of growth strings is the parameter order used everywhere else.

Positions are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

# Hard enumeration limit: bell(12) = 4_213_597 partitions is the most a dense
# desk-scale enumeration can usefully hold.
MAX_ORDER = 12

# One symbol per block label; MAX_ORDER blocks need at most 12 symbols.
_LABEL_SYMBOLS = "0123456789ab"


@dataclass(frozen=True)
class SetPartition:
    """A partition of positions {0, ..., order-1} in restricted growth form.

    ``rgs[i]`` is the block label of position ``i``.  Labels are assigned in
    order of first appearance, so ``rgs[0] == 0`` and each label is at most
    one larger than every label before it.  Instances are immutable, hashable
    and totally ordered by their growth string.
    """

    rgs: tuple[int, ...]

    def __post_init__(self) -> None:
        rgs = tuple(int(v) for v in self.rgs)
        object.__setattr__(self, "rgs", rgs)
        if len(rgs) == 0:
            return
        if rgs[0] != 0:
            raise ValueError(f"growth string must start at 0, got {rgs}")
        top = 0
        for v in rgs[1:]:
            if v < 0 or v > top + 1:
                raise ValueError(f"not a restricted growth string: {rgs}")
            top = max(top, v)

    @property
    def order(self) -> int:
        """Number of positions being partitioned."""
        return len(self.rgs)

    @property
    def num_blocks(self) -> int:
        return max(self.rgs) + 1 if self.rgs else 0

    def blocks(self) -> tuple[tuple[int, ...], ...]:
        """Blocks as position tuples, ordered by first element."""
        out: list[list[int]] = [[] for _ in range(self.num_blocks)]
        for pos, label in enumerate(self.rgs):
            out[label].append(pos)
        return tuple(tuple(b) for b in out)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]]) -> "SetPartition":
        """Build from a collection of disjoint position sets covering 0..order-1."""
        pairs = sorted((pos, i) for i, blk in enumerate(blocks) for pos in blk)
        positions = [p for p, _ in pairs]
        if positions != list(range(len(positions))):
            raise ValueError("blocks must be disjoint and cover 0..order-1")
        relabel: dict[int, int] = {}
        rgs = []
        for _, raw in pairs:
            if raw not in relabel:
                relabel[raw] = len(relabel)
            rgs.append(relabel[raw])
        return cls(tuple(rgs))

    def refines(self, other: "SetPartition") -> bool:
        """True if every block of ``self`` lies inside a block of ``other``."""
        if self.order != other.order:
            raise ValueError("orders differ")
        seen: dict[int, int] = {}
        for a, b in zip(self.rgs, other.rgs):
            if seen.setdefault(a, b) != b:
                return False
        return True

    def to_string(self) -> str:
        """Compact growth-string form, one symbol per position."""
        return "".join(_LABEL_SYMBOLS[v] for v in self.rgs)

    @classmethod
    def from_string(cls, s: str) -> "SetPartition":
        return cls(tuple(_LABEL_SYMBOLS.index(ch) for ch in s))

    def __str__(self) -> str:
        return self.to_string()

    def __lt__(self, other: "SetPartition") -> bool:
        return self.rgs < other.rgs


def bell(order: int) -> int:
    """Number of partitions of a set with ``order`` elements; bell(0) == 1.

    Computed with the Bell triangle in exact integer arithmetic, so the
    values are usable as test oracles at any order.
    """
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    row = [1]
    for _ in range(order):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


@lru_cache(maxsize=None)
def enumerate_partitions(order: int) -> tuple[SetPartition, ...]:
    """All partitions of {0..order-1}, lexicographic by growth string.

    This ordering is the canonical parameter index: element ``i`` of any
    basis or coefficient array corresponds to partition ``i`` of this list.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}, got {order}")
    out: list[SetPartition] = []
    rgs = [0] * order

    def extend(pos: int, top: int) -> None:
        if pos == order:
            out.append(SetPartition(tuple(rgs)))
            return
        for label in range(top + 2):
            rgs[pos] = label
            extend(pos + 1, max(top, label))

    extend(1, 0)
    if len(out) != bell(order):
        raise AssertionError("enumeration does not match the Bell number")
    return tuple(out)


@lru_cache(maxsize=None)
def partition_index(partition: SetPartition) -> int:
    """Position of a partition in the canonical order of its own order."""
    table = {p: i for i, p in enumerate(enumerate_partitions(partition.order))}
    return table[partition]


def equality_pattern(index: Sequence[int]) -> SetPartition:
    """The partition grouping positions of ``index`` that hold equal values.

    Permuting the *values* (relabeling nodes) never changes the result, which
    is what makes equality patterns the right invariant for weight tying.
    """
    labels: dict[int, int] = {}
    rgs = []
    for v in index:
        v = int(v)
        if v not in labels:
            labels[v] = len(labels)
        rgs.append(labels[v])
    return SetPartition(tuple(rgs))


def class_size(partition: SetPartition, n: int) -> int:
    """Number of multi-indices over n values whose equality pattern is ``partition``.

    Each of the ``m`` blocks picks a distinct value, so the count is the
    falling factorial n(n-1)...(n-m+1); it is 0 whenever m > n.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return math.perm(n, partition.num_blocks)


def effective_dim(order: int, n: int) -> int:
    """Number of partitions of the given order with at most n blocks.

    This is the true dimension of the fixed-point space at node count n; it
    equals bell(order) exactly when n >= order.
    """
    return sum(1 for p in enumerate_partitions(order) if p.num_blocks <= n)


def nominal_dim(order: int) -> int:
    """bell(order): the node-count-independent dimension count."""
    return bell(order)

"""Dense order-k node tensors with feature channels and the node-relabeling action.

A value tensor over a set of n nodes has k node axes of length n followed by
one feature axis of length d, stored row-major (node indices outermost,
channels innermost).  Relabeling the nodes by a permutation p moves entry
(i1..ik, :) to (p(i1)..p(ik), :); feature channels are never touched.

The index-wise relabeling is the production path.  Its matrix form (the
k-fold Kronecker power of the permutation matrix) is built only at oracle
scale, for exhaustive verification.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

TENSOR_MAGIC = b"EQTEN01\x00"

# kron_power_matrix allocates an (n^order)^2 dense matrix; keep it oracle-sized.
MAX_KRON_SIDE = 100_000


@dataclass(frozen=True)
class Tensor:
    """Immutable dense tensor: k node axes of length n, then d feature channels."""

    data: np.ndarray
    k: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != self.k + 1:
            raise ValueError(
                f"expected {self.k} node axes plus a channel axis, got shape {arr.shape}"
            )
        node_dims = arr.shape[: self.k]
        if self.k > 0 and len(set(node_dims)) > 1:
            raise ValueError(f"node axes must share one length, got {node_dims}")
        view = arr.view()
        view.flags.writeable = False
        object.__setattr__(self, "data", view)

    @property
    def n(self) -> int:
        """Node count; 1 by convention for order-0 tensors."""
        return self.data.shape[0] if self.k > 0 else 1

    @property
    def d(self) -> int:
        return self.data.shape[-1]

    @classmethod
    def from_array(cls, arr: np.ndarray, k: int | None = None) -> "Tensor":
        """Wrap an array, defaulting the order to ndim - 1."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr, arr.ndim - 1 if k is None else k)


@dataclass(frozen=True)
class PermSpec:
    """A permutation of range(n); ``perm[i]`` is the image of node i."""

    perm: tuple[int, ...]

    def __post_init__(self) -> None:
        perm = tuple(int(v) for v in self.perm)
        object.__setattr__(self, "perm", perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a bijection on 0..{len(perm) - 1}: {perm}")

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def inverse(self) -> "PermSpec":
        inv = [0] * self.n
        for i, v in enumerate(self.perm):
            inv[v] = i
        return PermSpec(tuple(inv))

    def compose(self, other: "PermSpec") -> "PermSpec":
        """self after other: i -> self(other(i))."""
        if self.n != other.n:
            raise ValueError("sizes differ")
        return PermSpec(tuple(self.perm[other.perm[i]] for i in range(self.n)))

    @classmethod
    def identity(cls, n: int) -> "PermSpec":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PermSpec":
        return cls(tuple(int(v) for v in rng.permutation(n)))


def permute_array(perm: Sequence[int], arr: np.ndarray, k: int) -> np.ndarray:
    """Relabel the first k axes of ``arr`` by ``perm``; remaining axes untouched.

    Output entry (p(i1)..p(ik), ...) equals input entry (i1..ik, ...).
    """
    if k == 0:
        return np.array(arr, dtype=np.float64)
    n = arr.shape[0]
    if len(perm) != n:
        raise ValueError(f"permutation over {len(perm)} nodes applied to n={n}")
    inv = np.argsort(np.asarray(perm))
    return arr[np.ix_(*([inv] * k))]


def apply_perm(p: PermSpec, t: Tensor) -> Tensor:
    """The relabeling action on a tensor; shape is preserved exactly."""
    if t.k > 0 and p.n != t.n:
        raise ValueError(f"permutation over {p.n} nodes applied to n={t.n} tensor")
    return Tensor(permute_array(p.perm, t.data, t.k), t.k)


def vec(t: Tensor | np.ndarray) -> np.ndarray:
    """Row-major flattening; channels vary fastest."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    return arr.reshape(-1)


def mat(v: np.ndarray, k: int, n: int, d: int = 1) -> Tensor:
    """Inverse of :func:`vec` for the given shape."""
    v = np.asarray(v, dtype=np.float64)
    expected = (n**k) * d
    if v.size != expected:
        raise ValueError(f"length {v.size} does not match n^k*d = {expected}")
    return Tensor(v.reshape((n,) * k + (d,)), k)


def flat_perm_indices(perm: Sequence[int], order: int) -> np.ndarray:
    """Image of each row-major flat index of [n]^order under digit-wise ``perm``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = len(perm)
    size = n**order
    idx = np.arange(size, dtype=np.int64)
    out = np.zeros(size, dtype=np.int64)
    for axis in range(order - 1, -1, -1):
        digit = idx % n
        idx //= n
        out += perm[digit] * (n ** (order - 1 - axis))
    return out


def kron_power_matrix(p: PermSpec, order: int) -> np.ndarray:
    """Matrix M with M @ vec(A) == vec(apply_perm(p, A)) for order-``order`` A.

    A 0/1 matrix with exactly one 1 per row and column; equals the
    ``order``-fold Kronecker power of the matrix sending e_j to e_{p(j)}.
    Oracle-scale only.
    """
    n = p.n
    side = n**order
    if side > MAX_KRON_SIDE:
        raise ValueError(f"n^order = {side} exceeds the oracle cap {MAX_KRON_SIDE}")
    fp = flat_perm_indices(p.perm, order)
    m = np.zeros((side, side))
    m[fp, np.arange(side)] = 1.0
    return m


def save_tensor(t: Tensor, f: BinaryIO | str) -> None:
    """Binary format: magic, then k/n/d/element-width header, then LE float64 data."""
    if isinstance(f, str):
        with open(f, "wb") as fh:
            save_tensor(t, fh)
        return
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<IIII", t.k, t.n, t.d, 8))
    f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_tensor(f: BinaryIO | str) -> Tensor:
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return load_tensor(fh)
    magic = f.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    k, n, d, width = struct.unpack("<IIII", f.read(16))
    if width != 8:
        raise ValueError(f"unsupported element width {width}")
    count = (n**k) * d
    raw = f.read(count * 8)
    if len(raw) != count * 8:
        raise ValueError("truncated tensor payload")
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape((n,) * k + (d,))
    return Tensor(data, k)


def load_csv_matrix(path: str) -> Tensor:
    """Import a square 2-D single-channel tensor from a delimited text file."""
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    return Tensor(arr[..., None], 2)

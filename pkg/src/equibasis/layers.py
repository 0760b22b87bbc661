"""Learnable permutation-invariant and -equivariant linear layers.

A layer from order-k to order-l tensors carries one scalar weight per
(index-equality class, input channel, output channel) triple plus one bias
coefficient per (output equality class, output channel) pair.  Two parameter
bases are supported, connected by an exact change of basis:

``indicator``
    Coefficients multiply the raw indicator elements: the output at b sums
    the input over each exact equality class of the combined index (a, b).

``ops``
    Coefficients multiply closed equality-constraint operators (one per
    partition: the sum over all indices satisfying that partition's
    equalities), each scaled to unit max operator norm.  Row/column sums
    become row/column means, the total sum becomes the grand mean, and so
    on.  This is the basis networks train in: the scaling keeps activations
    comparable across node counts, which is what lets one set of weights
    run on graphs of any size.

The order-2 equivariant case additionally has a fast path built from 15
closed-form matrix operations (identity, transpose, row/column/diagonal
sums and broadcasts); it agrees with the generic class-sum contraction to
machine precision after the change of basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .partitions import SetPartition, bell, class_size, enumerate_partitions
from .basis import pattern_index_array, zeta_matrix
from .tensor import Tensor

# Generic class-sum contraction enumerates n^(k+l) combined indices.
MAX_GENERIC_INDEX_SPACE = 40_000_000

PARAM_BASES = ("indicator", "ops")


# ---------------------------------------------------------------------------
# layer containers


@dataclass
class EquivariantLayer:
    """Linear layer between node tensors of orders k_in and k_out.

    ``w`` has shape (bell(k_in + k_out), d_in, d_out): one coefficient per
    combined-index equality class and channel pair.  ``bias`` has shape
    (bell(k_out), d_out): one coefficient per output equality class and
    output channel.  ``op_subset`` restricts the layer to a sub-span of the
    constraint operators (ops basis only), used for expressivity baselines.
    """

    k_in: int
    k_out: int
    d_in: int
    d_out: int
    w: np.ndarray
    bias: np.ndarray
    param_basis: str = "indicator"
    op_subset: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.param_basis not in PARAM_BASES:
            raise ValueError(f"unknown parameter basis {self.param_basis!r}")
        n_classes = len(self.op_subset) if self.op_subset is not None else bell(self.k_in + self.k_out)
        if self.op_subset is not None and self.param_basis != "ops":
            raise ValueError("op_subset requires the ops parameter basis")
        expected_w = (n_classes, self.d_in, self.d_out)
        expected_b = (bell(self.k_out), self.d_out)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.w.shape != expected_w:
            raise ValueError(f"w shape {self.w.shape} != {expected_w}")
        if self.bias.shape != expected_b:
            raise ValueError(f"bias shape {self.bias.shape} != {expected_b}")

    @classmethod
    def zeros(
        cls,
        k_in: int,
        k_out: int,
        d_in: int,
        d_out: int,
        param_basis: str = "indicator",
        op_subset: tuple[int, ...] | None = None,
    ) -> "EquivariantLayer":
        n_classes = len(op_subset) if op_subset is not None else bell(k_in + k_out)
        return cls(
            k_in,
            k_out,
            d_in,
            d_out,
            np.zeros((n_classes, d_in, d_out)),
            np.zeros((bell(k_out), d_out)),
            param_basis,
            op_subset,
        )

    @classmethod
    def square(cls, k: int, d_in: int, d_out: int, param_basis: str = "indicator") -> "EquivariantLayer":
        return cls.zeros(k, k, d_in, d_out, param_basis)

    @property
    def num_params(self) -> int:
        return self.w.size + self.bias.size


@dataclass
class InvariantLayer:
    """Linear functional layer: order-k tensor in, channel vector out.

    ``w`` has shape (bell(k), d_in, d_out) and ``bias`` shape (d_out,),
    so the parameter count is d_in * d_out * bell(k) + d_out.
    """

    k: int
    d_in: int
    d_out: int
    w: np.ndarray
    bias: np.ndarray
    param_basis: str = "indicator"
    op_subset: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.param_basis not in PARAM_BASES:
            raise ValueError(f"unknown parameter basis {self.param_basis!r}")
        n_classes = len(self.op_subset) if self.op_subset is not None else bell(self.k)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.w.shape != (n_classes, self.d_in, self.d_out):
            raise ValueError(f"w shape {self.w.shape} != {(n_classes, self.d_in, self.d_out)}")
        if self.bias.shape != (self.d_out,):
            raise ValueError(f"bias shape {self.bias.shape} != {(self.d_out,)}")

    @classmethod
    def zeros(cls, k: int, d_in: int, d_out: int, param_basis: str = "indicator") -> "InvariantLayer":
        return cls(k, d_in, d_out, np.zeros((bell(k), d_in, d_out)), np.zeros(d_out), param_basis)

    @property
    def num_params(self) -> int:
        return self.w.size + self.bias.size

    def as_equivariant(self) -> EquivariantLayer:
        """The same map as an order-(k -> 0) layer (single output class)."""
        return EquivariantLayer(
            self.k,
            0,
            self.d_in,
            self.d_out,
            self.w,
            self.bias[None, :],
            self.param_basis,
            self.op_subset,
        )


# ---------------------------------------------------------------------------
# array plumbing: accept a Tensor, a bare sample, or a batch of samples


def _as_batch(a: Tensor | np.ndarray, k: int) -> tuple[np.ndarray, str, int]:
    """Normalize input to (batch, n^k, d); report how to restore the caller's type."""
    if isinstance(a, Tensor):
        if a.k != k:
            raise ValueError(f"layer expects order {k}, tensor has order {a.k}")
        arr, form = a.data[None], "tensor"
    else:
        arr = np.asarray(a, dtype=np.float64)
        if arr.ndim == k + 1:
            arr, form = arr[None], "single"
        elif arr.ndim == k + 2:
            form = "batch"
        else:
            raise ValueError(f"expected {k + 1} or {k + 2} axes, got shape {arr.shape}")
    n = arr.shape[1] if k > 0 else 1
    if arr.shape[1 : 1 + k] != (n,) * k:
        raise ValueError(f"node axes must share one length, got {arr.shape}")
    batch, d = arr.shape[0], arr.shape[-1]
    return arr.reshape(batch, n**k, d), form, n


def _restore(flat: np.ndarray, form: str, k: int, n: int) -> Tensor | np.ndarray:
    batch, _, d = flat.shape
    shaped = flat.reshape((batch,) + (n,) * k + (d,))
    if form == "tensor":
        return Tensor(shaped[0], k)
    if form == "single":
        return shaped[0]
    return shaped


# ---------------------------------------------------------------------------
# generic path: exact equality-class sums via precomputed coordinate lists


@lru_cache(maxsize=None)
def _class_coordinate_lists(n: int, k_in: int, k_out: int) -> tuple:
    """Per-class (input flat indices, output flat indices) for [n]^(k_in+k_out).

    Together the lists enumerate every combined multi-index once, grouped by
    equality class; total size n^(k_in+k_out), independent of channel counts.
    """
    order = k_in + k_out
    size = n**order
    if size > MAX_GENERIC_INDEX_SPACE:
        raise ValueError(
            f"n^(k_in+k_out) = {size} exceeds the generic-path cap {MAX_GENERIC_INDEX_SPACE}"
        )
    ids = pattern_index_array(n, order)
    sorter = np.argsort(ids, kind="stable")
    counts = np.bincount(ids, minlength=bell(order))
    bounds = np.concatenate([[0], np.cumsum(counts)])
    out_size = n**k_out
    lists = []
    for c in range(bell(order)):
        flat = sorter[bounds[c] : bounds[c + 1]]
        lists.append((
            (flat // out_size).astype(np.int64),
            (flat % out_size).astype(np.int64),
        ))
    return tuple(lists)


def pooled_class_sums(a: Tensor | np.ndarray, k_in: int, k_out: int) -> np.ndarray:
    """Exact equality-class sums S[c, b] = sum over a with pattern(a, b) = class c.

    Returns shape (bell(k_in + k_out), batch, n^k_out, d).  This is the
    layer contraction with the big coefficient tensor never materialized.
    """
    flat, _, n = _as_batch(a, k_in)
    batch, _, d = flat.shape
    trans = np.ascontiguousarray(flat.transpose(1, 0, 2))  # (n^k_in, batch, d)
    out_size = n**k_out
    lists = _class_coordinate_lists(n, k_in, k_out)
    pooled = np.zeros((len(lists), out_size, batch, d))
    for c, (in_idx, out_idx) in enumerate(lists):
        np.add.at(pooled[c], out_idx, trans[in_idx])
    return pooled.transpose(0, 2, 1, 3)


def output_class_labels(n: int, k_out: int) -> np.ndarray:
    """Canonical equality-class id of each flat output index (bias tying)."""
    return pattern_index_array(n, k_out)


# ---------------------------------------------------------------------------
# constraint operators and the change of basis


def op_norms(order_partitions: tuple[SetPartition, ...], k_in: int, n: int) -> np.ndarray:
    """Max operator norm (l-inf induced) of each closed-constraint operator.

    A constraint operator sums inputs over all indices satisfying its
    partition's equalities; each output entry therefore sums n^f inputs,
    where f counts blocks lying entirely in the input positions.
    """
    norms = np.empty(len(order_partitions))
    for i, p in enumerate(order_partitions):
        free = sum(1 for blk in p.blocks() if all(pos < k_in for pos in blk))
        norms[i] = float(n) ** free
    return norms


@lru_cache(maxsize=None)
def change_of_basis(n: int, k_in: int, k_out: int) -> tuple[np.ndarray, np.ndarray]:
    """(indicator -> unit-norm ops, ops -> indicator) coefficient transforms.

    With Z the refinement incidence and D the diagonal of operator norms,
    a weight vector w over indicators equals c = D Z^{-T} w over unit-norm
    constraint operators, and back via w = Z^T D^{-1} c.  Both transforms
    are exact for every n, including n < order where some classes are empty.
    """
    parts = enumerate_partitions(k_in + k_out)
    z = zeta_matrix(k_in + k_out)
    d = op_norms(parts, k_in, n)
    z_inv_t = np.linalg.inv(z).T
    to_ops = d[:, None] * z_inv_t
    to_indicator = z.T * (1.0 / d)[None, :]
    return to_ops, to_indicator


def weights_to_ops(layer: EquivariantLayer, n: int) -> np.ndarray:
    if layer.param_basis == "ops":
        return layer.w
    to_ops, _ = change_of_basis(n, layer.k_in, layer.k_out)
    return np.einsum("cm,mde->cde", to_ops, layer.w)


def weights_to_indicator(layer: EquivariantLayer, n: int) -> np.ndarray:
    if layer.param_basis == "indicator":
        return layer.w
    _, to_ind = change_of_basis(n, layer.k_in, layer.k_out)
    if layer.op_subset is not None:
        full = np.zeros((bell(layer.k_in + layer.k_out),) + layer.w.shape[1:])
        full[list(layer.op_subset)] = layer.w
        return np.einsum("mc,cde->mde", to_ind, full)
    return np.einsum("mc,cde->mde", to_ind, layer.w)


# ---------------------------------------------------------------------------
# fast order-2 -> order-2 path: 15 closed-form matrix operations

# Constraint partition of each operation over positions (a1, a2, b1, b2),
# in the fixed published order of the operation list.
FAST_OP_PARTITIONS: tuple[SetPartition, ...] = (
    SetPartition((0, 1, 0, 1)),  # identity
    SetPartition((0, 1, 1, 0)),  # transpose
    SetPartition((0, 0, 0, 0)),  # diagonal kept in place
    SetPartition((0, 1, 0, 2)),  # row sums on rows
    SetPartition((0, 1, 2, 0)),  # row sums on columns
    SetPartition((0, 1, 0, 0)),  # row sums on diagonal
    SetPartition((0, 1, 1, 2)),  # column sums on rows
    SetPartition((0, 1, 2, 1)),  # column sums on columns
    SetPartition((0, 1, 1, 1)),  # column sums on diagonal
    SetPartition((0, 1, 2, 3)),  # total sum everywhere
    SetPartition((0, 1, 2, 2)),  # total sum on diagonal
    SetPartition((0, 0, 1, 2)),  # diagonal sum everywhere
    SetPartition((0, 0, 1, 1)),  # diagonal sum on diagonal
    SetPartition((0, 0, 0, 1)),  # diagonal on rows
    SetPartition((0, 0, 1, 0)),  # diagonal on columns
)

FAST_OP_NAMES = (
    "identity",
    "transpose",
    "diag_to_diag",
    "row_sum_to_rows",
    "row_sum_to_cols",
    "row_sum_to_diag",
    "col_sum_to_rows",
    "col_sum_to_cols",
    "col_sum_to_diag",
    "total_to_all",
    "total_to_diag",
    "diag_sum_to_all",
    "diag_sum_to_diag",
    "diag_to_rows",
    "diag_to_cols",
)


def fast_op_norms(n: int) -> np.ndarray:
    """Analytic max operator norms of the 15 operations at node count n."""
    return op_norms(FAST_OP_PARTITIONS, 2, n)


def _fast_ops_stack(a: np.ndarray) -> np.ndarray:
    """Unnormalized operation stack for a (..., n, n) array: shape (15, ..., n, n)."""
    n = a.shape[-1]
    eye = np.eye(n)
    at = np.swapaxes(a, -1, -2)
    diag = np.einsum("...ii->...i", a)
    row = a.sum(axis=-1)
    col = a.sum(axis=-2)
    total = a.sum(axis=(-1, -2))
    dsum = diag.sum(axis=-1)
    ones = np.ones(n)

    def on_diag(v):  # (..., n) -> diagonal matrices
        return np.einsum("...i,ij->...ij", v, eye)

    def on_rows(v):  # value v_i on every column of row i
        return np.einsum("...i,j->...ij", v, ones)

    def on_cols(v):  # value v_j on every row of column j
        return np.einsum("...j,i->...ij", v, ones)

    def bcast(s):  # (...,) scalar on the whole matrix / the diagonal
        return np.einsum("...,ij->...ij", s, np.ones((n, n)))

    def bcast_diag(s):
        return np.einsum("...,ij->...ij", s, eye)

    return np.stack(
        [
            a,
            at,
            on_diag(diag),
            on_rows(row),
            on_cols(row),
            on_diag(row),
            on_rows(col),
            on_cols(col),
            on_diag(col),
            bcast(total),
            bcast_diag(total),
            bcast(dsum),
            bcast_diag(dsum),
            on_rows(diag),
            on_cols(diag),
        ]
    )


def order2_fast_ops(a: np.ndarray, normalized: bool = True) -> list[np.ndarray]:
    """The 15 closed-form order-2 operations applied to a square matrix.

    Returned in the fixed published order (see FAST_OP_NAMES); by default
    each result is scaled so the operation has unit max operator norm.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    stack = _fast_ops_stack(a)
    if normalized:
        stack = stack / fast_op_norms(a.shape[0])[:, None, None]
    return list(stack)


@lru_cache(maxsize=None)
def _fast_to_canonical_permutation() -> np.ndarray:
    """Canonical partition index of each of the 15 operations."""
    order = {p: i for i, p in enumerate(enumerate_partitions(4))}
    return np.array([order[p] for p in FAST_OP_PARTITIONS], dtype=np.int64)


def hartford_op_subset(k_in: int, k_out: int) -> tuple[int, ...]:
    """Canonical op indices spanning the exchangeable-matrix (separate row and
    column permutation) layers of the given shape.

    Only merges between positions of the same axis type survive independent
    row/column relabeling, which leaves 4 operators for order-2 -> order-2
    layers, 2 for order-2 -> order-1, and 1 (the grand mean) for invariant.
    """
    from .partitions import partition_index

    if (k_in, k_out) == (2, 2):
        rgs_list = [(0, 1, 0, 1), (0, 1, 0, 2), (0, 1, 2, 1), (0, 1, 2, 3)]
    elif (k_in, k_out) == (2, 1):
        rgs_list = [(0, 1, 0), (0, 1, 2)]
    elif (k_in, k_out) == (2, 0):
        rgs_list = [(0, 1)]
    else:
        raise ValueError(f"no exchangeable sub-span defined for shape ({k_in}, {k_out})")
    return tuple(partition_index(SetPartition(r)) for r in rgs_list)


def fast_op_coefficients(layer: EquivariantLayer, n: int) -> np.ndarray:
    """Layer weights over the 15 unit-norm operations, in fast-path order.

    Coefficient arrays everywhere else use the canonical partition order;
    this permutes (and, for indicator layers, converts) into the published
    operation order the fast kernels run in.
    """
    if (layer.k_in, layer.k_out) != (2, 2):
        raise ValueError("the fast path handles order-2 -> order-2 layers only")
    if layer.param_basis == "ops":
        if layer.op_subset is not None:
            full = np.zeros((bell(4), layer.d_in, layer.d_out))
            full[list(layer.op_subset)] = layer.w
        else:
            full = layer.w
    else:
        full = np.einsum("cm,mde->cde", change_of_basis(n, 2, 2)[0], layer.w)
    return full[_fast_to_canonical_permutation()]


def apply_equivariant(layer: EquivariantLayer, a: Tensor | np.ndarray) -> Tensor | np.ndarray:
    """Generic layer application via exact equality-class sums.

    Works for any (k_in, k_out) within the index-space cap and never
    materializes the full coefficient tensor.
    """
    flat, form, n = _as_batch(a, layer.k_in)
    if flat.shape[-1] != layer.d_in:
        raise ValueError(f"layer expects {layer.d_in} channels, got {flat.shape[-1]}")
    w = weights_to_indicator(layer, n)
    pooled = pooled_class_sums(
        flat.reshape((flat.shape[0],) + (n,) * layer.k_in + (layer.d_in,)),
        layer.k_in,
        layer.k_out,
    )
    out = np.einsum("cbod,cde->boe", pooled, w, optimize=True)
    labels = output_class_labels(n, layer.k_out)
    out += layer.bias[labels][None]
    return _restore(out, form, layer.k_out, n)


def fast22_forward(x: np.ndarray, chat: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Hot kernel: order-2 layer with norm-folded op coefficients.

    ``x`` is (batch, n, n, d); ``chat`` is (15, d, d_out) in fast-op order
    with each row already divided by its op norm.  Only the identity and
    transpose terms touch n^2 data per channel pair (BLAS matmuls); every
    other operation reduces to row/column/diagonal vectors or scalars first.
    """
    batch, n, _, d = x.shape
    e = chat.shape[-1]
    idx = np.arange(n)
    row = x.sum(axis=2)  # (batch, n, d)
    col = x.sum(axis=1)
    diag = x[:, idx, idx, :]
    total = row.sum(axis=1)  # (batch, d)
    dsum = diag.sum(axis=1)
    # channel-last flattening turns every contraction into one large matmul
    vecs = np.concatenate([row, col, diag], axis=2)  # (batch, n, 3d)
    scalars = np.concatenate([total, dsum], axis=1)  # (batch, 2d)

    x2 = x.reshape(-1, d)
    out = (x2 @ chat[0]).reshape(batch, n, n, e)
    out += (x2 @ chat[1]).reshape(batch, n, n, e).swapaxes(1, 2)
    v2 = vecs.reshape(-1, 3 * d)
    on_rows = (v2 @ chat[[3, 6, 13]].reshape(3 * d, e)).reshape(batch, n, e)
    on_cols = (v2 @ chat[[4, 7, 14]].reshape(3 * d, e)).reshape(batch, n, e)
    on_diag = (v2 @ chat[[5, 8, 2]].reshape(3 * d, e)).reshape(batch, n, e)
    everywhere = scalars @ chat[[9, 11]].reshape(2 * d, e)
    diag_only = scalars @ chat[[10, 12]].reshape(2 * d, e)
    out += on_rows[:, :, None, :]
    out += on_cols[:, None, :, :]
    out += everywhere[:, None, None, :]
    out[:, idx, idx, :] += on_diag + diag_only[:, None, :]
    return out, (x, vecs, scalars, chat)


def fast22_backward(cache: tuple, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`fast22_forward`: gradients for the input and coefficients."""
    x, vecs, scalars, chat = cache
    batch, n, _, d = x.shape
    e = g.shape[-1]
    idx = np.arange(n)
    g_rows = g.sum(axis=2)  # (batch, n, e)
    g_cols = g.sum(axis=1)
    g_diag = g[:, idx, idx, :]
    g_all = g_rows.sum(axis=1)  # (batch, e)
    g_dsum = g_diag.sum(axis=1)
    # mirror sources feeding the rows/cols/diag placements of the forward pass
    g_vecs = np.concatenate([g_rows, g_cols, g_diag], axis=2).reshape(-1, 3 * e)
    g_scal = np.concatenate([g_all, g_dsum], axis=1)

    dchat = np.empty_like(chat)
    x2 = x.reshape(-1, d)
    g2 = g.reshape(-1, e)
    dchat[0] = x2.T @ g2
    dchat[1] = x2.T @ g.swapaxes(1, 2).reshape(-1, e)
    v2 = vecs.reshape(-1, 3 * d)
    dchat[[3, 6, 13]] = (v2.T @ g_rows.reshape(-1, e)).reshape(3, d, e)
    dchat[[4, 7, 14]] = (v2.T @ g_cols.reshape(-1, e)).reshape(3, d, e)
    dchat[[5, 8, 2]] = (v2.T @ g_diag.reshape(-1, e)).reshape(3, d, e)
    dchat[[9, 11]] = (scalars.T @ g_all).reshape(2, d, e)
    dchat[[10, 12]] = (scalars.T @ g_dsum).reshape(2, d, e)

    da = (g2 @ chat[0].T).reshape(batch, n, n, d)
    da += (g2 @ chat[1].T).reshape(batch, n, n, d).swapaxes(1, 2)
    w_row = (g_vecs @ np.concatenate([chat[3].T, chat[4].T, chat[5].T])).reshape(batch, n, d)
    w_col = (g_vecs @ np.concatenate([chat[6].T, chat[7].T, chat[8].T])).reshape(batch, n, d)
    w_diag = (g_vecs @ np.concatenate([chat[13].T, chat[14].T, chat[2].T])).reshape(batch, n, d)
    w_total = g_scal @ np.concatenate([chat[9].T, chat[10].T])
    w_ds = g_scal @ np.concatenate([chat[11].T, chat[12].T])
    da += w_row[:, :, None, :]
    da += w_col[:, None, :, :]
    da += w_total[:, None, None, :]
    da[:, idx, idx, :] += w_diag + w_ds[:, None, :]
    return da, dchat


def apply_equivariant_fast(layer: EquivariantLayer, a: Tensor | np.ndarray) -> Tensor | np.ndarray:
    """Order-2 layer application through the 15 closed-form operations.

    Agrees with :func:`apply_equivariant` to machine precision after the
    fixed change of basis between operations and indicator elements.
    """
    flat, form, n = _as_batch(a, 2)
    batch, _, d = flat.shape
    if d != layer.d_in:
        raise ValueError(f"layer expects {layer.d_in} channels, got {d}")
    coeff = fast_op_coefficients(layer, n)  # (15, d_in, d_out), fast-op order
    chat = coeff / fast_op_norms(n)[:, None, None]
    out, _ = fast22_forward(flat.reshape(batch, n, n, d), chat)
    out = out.reshape(batch, n * n, layer.d_out)
    labels = output_class_labels(n, 2)
    out = out + layer.bias[labels][None]
    return _restore(out, form, 2, n)


def apply_invariant(layer: InvariantLayer, a: Tensor | np.ndarray) -> np.ndarray:
    """Invariant layer: order-k tensor in, channel vector out (batched if batched in)."""
    out = apply_equivariant(layer.as_equivariant(), a)
    return np.asarray(out.data) if isinstance(out, Tensor) else out


# ---------------------------------------------------------------------------
# invariant pooling


def invariant_pool(a: Tensor, mode: str = "sum") -> np.ndarray:
    """Aggregate a tensor over each equality class of its index, per channel.

    ``sum`` averages within each class (the class sum divided by the class
    size) and ``max`` takes the raw maximum; either way an empty class
    contributes 0.  Output has length bell(k) * d, classes in canonical
    order with channels fastest.  The result is unchanged under any node
    relabeling of the input.
    """
    if not isinstance(a, Tensor):
        raise TypeError("invariant_pool needs a Tensor; use pool_classes(a, k, mode) for raw arrays")
    return pool_classes(a, a.k, mode)


def pool_classes(a: Tensor | np.ndarray, k: int, mode: str = "sum") -> np.ndarray:
    """invariant_pool with the tensor order given explicitly (for raw arrays)."""
    if mode not in ("sum", "max"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    flat, form, n = _as_batch(a, k)
    batch, _, d = flat.shape
    labels = output_class_labels(n, k)
    parts = enumerate_partitions(k) if k > 0 else (SetPartition(()),)
    n_classes = bell(k)
    out = np.zeros((batch, n_classes, d))
    if mode == "sum":
        acc = np.zeros((n_classes, batch, d))
        np.add.at(acc, labels, flat.transpose(1, 0, 2))
        sizes = np.array([class_size(p, n) for p in parts], dtype=np.float64)
        safe = np.where(sizes > 0, sizes, 1.0)
        out = (acc / safe[:, None, None]).transpose(1, 0, 2)
        out[:, sizes == 0, :] = 0.0
    else:
        acc = np.full((n_classes, batch, d), -np.inf)
        np.maximum.at(acc, labels, flat.transpose(1, 0, 2))
        out = np.where(np.isfinite(acc), acc, 0.0).transpose(1, 0, 2)
    out = out.reshape(batch, n_classes * d)
    return out[0] if form in ("tensor", "single") else out


# ---------------------------------------------------------------------------
# networks


@dataclass
class DenseLayer:
    """Plain fully-connected layer acting on channel vectors."""

    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("inconsistent dense layer shapes")

    @classmethod
    def zeros(cls, d_in: int, d_out: int) -> "DenseLayer":
        return cls(np.zeros((d_in, d_out)), np.zeros(d_out))


@dataclass
class Network:
    """Equivariant layers with ReLU between, optional pooling, then dense head.

    Without pooling the network is equivariant end to end; with pooling (and
    any dense layers after it) it is invariant.  Channel counts of adjacent
    layers must chain.
    """

    layers: list[EquivariantLayer]
    pool: str | None = None  # None | "sum" | "max"
    dense: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in or prev.k_out != nxt.k_in:
                raise ValueError("adjacent layers do not chain")
        if self.pool is not None and self.pool not in ("sum", "max"):
            raise ValueError(f"unknown pooling mode {self.pool!r}")
        if self.dense and self.pool is None:
            raise ValueError("dense head requires pooling first")

    @property
    def is_invariant(self) -> bool:
        return self.pool is not None

    def param_arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (layer w/bias, dense weight/bias)."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.w, layer.bias])
        for dl in self.dense:
            out.extend([dl.weight, dl.bias])
        return out

    def with_params(self, arrays: list[np.ndarray]) -> "Network":
        """A copy of this network with parameters replaced (same shapes)."""
        it = iter(arrays)
        layers = [
            replace(layer, w=next(it).copy(), bias=next(it).copy()) for layer in self.layers
        ]
        dense = [DenseLayer(next(it).copy(), next(it).copy()) for _ in self.dense]
        return Network(layers, self.pool, dense)


def _apply_layer(layer: EquivariantLayer, a: np.ndarray) -> np.ndarray:
    if (layer.k_in, layer.k_out) == (2, 2):
        return apply_equivariant_fast(layer, a)
    return apply_equivariant(layer, a)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def forward(net: Network, a: Tensor | np.ndarray) -> Tensor | np.ndarray:
    """Run the network; accepts a Tensor, one sample, or a batch."""
    first = net.layers[0]
    flat, form, n = _as_batch(a, first.k_in)
    x = flat.reshape((flat.shape[0],) + (n,) * first.k_in + (first.d_in,))
    for i, layer in enumerate(net.layers):
        x = _apply_layer(layer, x)
        if i < len(net.layers) - 1:
            x = relu(x)
    if net.pool is None:
        return _restore(
            x.reshape(flat.shape[0], -1, net.layers[-1].d_out), form, net.layers[-1].k_out, n
        )
    pooled = pool_classes(x, net.layers[-1].k_out, net.pool)
    for i, dl in enumerate(net.dense):
        pooled = pooled @ dl.weight + dl.bias
        if i < len(net.dense) - 1:
            pooled = relu(pooled)
    return pooled[0] if form in ("tensor", "single") else pooled


CHECKPOINT_MAGIC = b"EQNET01\x00"
PARTITION_ORDERING_VERSION = "rgs-lex-1"


def save_checkpoint(net: Network, f) -> None:
    """Checkpoint format: magic, JSON architecture header, LE float64 blob.

    The header records layer shapes, parameter bases and the partition
    ordering version; the blob concatenates every parameter array in
    ``param_arrays`` order.
    """
    if isinstance(f, str):
        with open(f, "wb") as fh:
            save_checkpoint(net, fh)
        return
    import json
    import struct

    header = {
        "partition_ordering": PARTITION_ORDERING_VERSION,
        "pool": net.pool,
        "layers": [
            {
                "k_in": l.k_in,
                "k_out": l.k_out,
                "d_in": l.d_in,
                "d_out": l.d_out,
                "param_basis": l.param_basis,
                "op_subset": list(l.op_subset) if l.op_subset is not None else None,
            }
            for l in net.layers
        ],
        "dense": [{"d_in": d.weight.shape[0], "d_out": d.weight.shape[1]} for d in net.dense],
    }
    payload = json.dumps(header, sort_keys=True).encode()
    f.write(CHECKPOINT_MAGIC)
    f.write(struct.pack("<I", len(payload)))
    f.write(payload)
    for arr in net.param_arrays():
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(f) -> Network:
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return load_checkpoint(fh)
    import json
    import struct

    magic = f.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    (length,) = struct.unpack("<I", f.read(4))
    header = json.loads(f.read(length).decode())
    if header["partition_ordering"] != PARTITION_ORDERING_VERSION:
        raise ValueError(f"incompatible partition ordering {header['partition_ordering']!r}")
    layers = [
        EquivariantLayer.zeros(
            spec["k_in"],
            spec["k_out"],
            spec["d_in"],
            spec["d_out"],
            spec["param_basis"],
            tuple(spec["op_subset"]) if spec["op_subset"] is not None else None,
        )
        for spec in header["layers"]
    ]
    dense = [DenseLayer.zeros(spec["d_in"], spec["d_out"]) for spec in header["dense"]]
    net = Network(layers, header["pool"], dense)
    arrays = []
    for template in net.param_arrays():
        raw = f.read(template.size * 8)
        if len(raw) != template.size * 8:
            raise ValueError("truncated checkpoint payload")
        arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(template.shape))
    return net.with_params(arrays)


def init_params(net: Network, seed: int) -> Network:
    """Uniform variance-scaling init: limits sqrt(6 / (fan_in + fan_out)).

    For a layer between equality-class bases, fan_in = d_in * (number of
    classes) and fan_out = d_out * (number of classes); biases start at 0.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    arrays = []
    for layer in net.layers:
        n_classes = layer.w.shape[0]
        fan_in = layer.d_in * n_classes
        fan_out = layer.d_out * n_classes
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays.append(rng.uniform(-limit, limit, size=layer.w.shape))
        arrays.append(np.zeros_like(layer.bias))
    for dl in net.dense:
        d_in, d_out = dl.weight.shape
        limit = np.sqrt(6.0 / (d_in + d_out))
        arrays.append(rng.uniform(-limit, limit, size=dl.weight.shape))
        arrays.append(np.zeros_like(dl.bias))
    return net.with_params(arrays)

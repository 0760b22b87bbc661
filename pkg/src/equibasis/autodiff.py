"""Minimal reverse-mode gradient engine over the layer operations.

Only what training needs: each operation records a closure computing
vector-Jacobian products for its parents, and ``backward`` walks the tape in
reverse topological order.  Values are float64 numpy arrays with a leading
batch axis where applicable.  Gradients are checked against central finite
differences in the test suite; nothing here is trusted without that.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .partitions import SetPartition, bell, class_size, enumerate_partitions
from .layers import (
    EquivariantLayer,
    Network,
    _class_coordinate_lists,
    _fast_to_canonical_permutation,
    change_of_basis,
    fast22_backward,
    fast22_forward,
    fast_op_norms,
    output_class_labels,
)


class Var:
    """A node in the computation graph: a value plus how to push gradients back."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Var"] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.vjp = vjp


def backward(root: Var) -> None:
    """Accumulate gradients of the scalar ``root`` into every reachable Var."""
    if root.value.size != 1:
        raise ValueError("backward starts from a scalar loss")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# elementwise and dense ops


def relu(x: Var) -> Var:
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return Var(x.value * mask, (x,), vjp)


def dense(x: Var, weight: Var, bias: Var) -> Var:
    """(batch, d_in) @ (d_in, d_out) + bias."""
    out = x.value @ weight.value + bias.value

    def vjp(g):
        return (g @ weight.value.T, x.value.T @ g, g.sum(axis=0))

    return Var(out, (x, weight, bias), vjp)


def scatter_subset(c: Var, subset: tuple[int, ...], total: int) -> Var:
    """Embed subset coefficients into the full coefficient array (rest zero)."""
    full = np.zeros((total,) + c.value.shape[1:])
    full[list(subset)] = c.value

    def vjp(g):
        return (g[list(subset)],)

    return Var(full, (c,), vjp)


def coeff_transform(m: np.ndarray, c: Var) -> Var:
    """Fixed linear change of basis on the class axis of a coefficient array."""
    out = np.einsum("mc,cde->mde", m, c.value)

    def vjp(g):
        return (np.einsum("mc,mde->cde", m, g),)

    return Var(out, (c,), vjp)


# ---------------------------------------------------------------------------
# layer contractions
#
# Inputs are batched as (batch, n, ..., n, d); coefficient arrays use the
# canonical partition order of the relevant combined index.


def generic_layer(a: Var, w: Var, bias: Var, k_in: int, k_out: int) -> Var:
    """Exact class-sum contraction, any orders; indicator-basis coefficients."""
    val = a.value
    batch = val.shape[0]
    n = val.shape[1] if k_in > 0 else 1
    d = val.shape[-1]
    trans = np.ascontiguousarray(val.reshape(batch, n**k_in, d).transpose(1, 0, 2))
    lists = _class_coordinate_lists(n, k_in, k_out)
    out_size = n**k_out
    pooled = np.zeros((len(lists), out_size, batch, d))
    for c, (in_idx, out_idx) in enumerate(lists):
        np.add.at(pooled[c], out_idx, trans[in_idx])
    pooled = pooled.transpose(0, 2, 1, 3)  # (classes, batch, out, d)
    out = np.einsum("cbod,cde->boe", pooled, w.value, optimize=True)
    labels = output_class_labels(n, k_out)
    out = out + bias.value[labels][None]
    d_out = out.shape[-1]

    def vjp(g):
        g3 = g.reshape(batch, out_size, d_out)
        dw = np.einsum("cbod,boe->cde", pooled, g3, optimize=True)
        dbias = np.zeros_like(bias.value)
        np.add.at(dbias, labels, g3.sum(axis=0))
        gw = np.einsum("boe,cde->cbod", g3, w.value, optimize=True)
        da_trans = np.zeros((n**k_in, batch, d))
        for c, (in_idx, out_idx) in enumerate(lists):
            gw_t = gw[c].transpose(1, 0, 2)  # (out, batch, d)
            np.add.at(da_trans, in_idx, gw_t[out_idx])
        da = da_trans.transpose(1, 0, 2).reshape(val.shape)
        return (da, dw, dbias)

    return Var(out.reshape((batch,) + (n,) * k_out + (d_out,)), (a, w, bias), vjp)


def fast22_layer(a: Var, c: Var, bias: Var) -> Var:
    """Order-2 -> order-2 layer; coefficients over the 15 unit-norm ops (fast order)."""
    val = a.value
    batch, n = val.shape[0], val.shape[1]
    norms = fast_op_norms(n)[:, None, None]
    out, cache = fast22_forward(val, c.value / norms)
    labels = output_class_labels(n, 2)
    out = out + bias.value[labels].reshape(n, n, -1)[None]
    d_out = out.shape[-1]
    idx = np.arange(n)

    def vjp(g):
        da, dchat = fast22_backward(cache, g)
        dbias = np.zeros_like(bias.value)
        # bias classes for order 2: diagonal entries first, then off-diagonal
        g_diag = g[:, idx, idx, :].sum(axis=(0, 1))
        g_all = g.reshape(batch, n * n, d_out).sum(axis=(0, 1))
        dbias[0] = g_diag
        dbias[1] = g_all - g_diag
        return (da, dchat / norms, dbias)

    return Var(out, (a, c, bias), vjp)


def fast21_layer(a: Var, c: Var, bias: Var) -> Var:
    """Order-2 -> order-1 layer; coefficients over the 5 unit-norm constraint ops.

    Canonical partition order of the combined (a1, a2, b) index:
    diagonal entry, trace broadcast, row means, column means, grand mean.
    """
    val = a.value
    batch, n, _, d = val.shape
    idx = np.arange(n)
    diag = val[:, idx, idx, :]  # (batch, n, d)
    row = val.sum(axis=2) / n
    col = val.sum(axis=1) / n
    trace = diag.sum(axis=1) / n  # (batch, d)
    total = val.sum(axis=(1, 2)) / (n * n)
    stack = np.stack(
        [
            diag,
            np.broadcast_to(trace[:, None, :], diag.shape),
            row,
            col,
            np.broadcast_to(total[:, None, :], diag.shape),
        ]
    )  # (5, batch, n, d)
    out = np.einsum("sbnd,sde->bne", stack, c.value)
    out = out + bias.value[0][None, None]

    def vjp(g):
        dc = np.einsum("sbnd,bne->sde", stack, g)
        dbias = g.sum(axis=(0, 1))[None]
        h = np.stack([g @ c.value[s].T for s in range(5)])  # (5, batch, n, d)
        da = np.zeros((batch, n, n, d))
        da[:, idx, idx, :] += h[0]
        da[:, idx, idx, :] += (h[1].sum(axis=1) / n)[:, None, :]
        da += (h[2] / n)[:, :, None, :]
        da += (h[3] / n)[:, None, :, :]
        da += (h[4].sum(axis=1) / (n * n))[:, None, None, :]
        return (da, dc, dbias)

    return Var(out, (a, c, bias), vjp)


def fast20_layer(a: Var, c: Var, bias: Var) -> Var:
    """Order-2 -> channel-vector layer; ops are mean diagonal and grand mean."""
    val = a.value
    batch, n, _, d = val.shape
    idx = np.arange(n)
    trace = val[:, idx, idx, :].sum(axis=1) / n  # (batch, d)
    total = val.sum(axis=(1, 2)) / (n * n)
    stack = np.stack([trace, total])  # (2, batch, d)
    out = np.einsum("sbd,sde->be", stack, c.value)
    out = out + bias.value[None]

    def vjp(g):
        dc = np.einsum("sbd,be->sde", stack, g)
        dbias = g.sum(axis=0)
        h0 = g @ c.value[0].T  # (batch, d)
        h1 = g @ c.value[1].T
        da = np.broadcast_to((h1 / (n * n))[:, None, None, :], (batch, n, n, d)).copy()
        da[:, idx, idx, :] += (h0 / n)[:, None, :]
        return (da, dc, dbias)

    return Var(out, (a, c, bias), vjp)


def pool(a: Var, k: int, mode: str) -> Var:
    """Per-class pooling: class means (mode "sum") or raw class maxima ("max")."""
    val = a.value
    batch = val.shape[0]
    n = val.shape[1] if k > 0 else 1
    d = val.shape[-1]
    flat = val.reshape(batch, n**k, d)
    trans = flat.transpose(1, 0, 2)
    labels = output_class_labels(n, k)
    n_classes = bell(k)
    parts = enumerate_partitions(k) if k > 0 else (SetPartition(()),)
    sizes = np.array([class_size(p, n) for p in parts], dtype=np.float64)
    if mode == "sum":
        acc = np.zeros((n_classes, batch, d))
        np.add.at(acc, labels, trans)
        safe = np.where(sizes > 0, sizes, 1.0)
        pooled = acc / safe[:, None, None]
        pooled[sizes == 0] = 0.0

        def vjp(g):
            g3 = g.reshape(batch, n_classes, d).transpose(1, 0, 2) / safe[:, None, None]
            g3[sizes == 0] = 0.0
            da = g3[labels].transpose(1, 0, 2)
            return (da.reshape(val.shape),)

    elif mode == "max":
        acc = np.full((n_classes, batch, d), -np.inf)
        np.maximum.at(acc, labels, trans)
        pooled = np.where(np.isfinite(acc), acc, 0.0)
        # first maximizer per (class, batch, channel), for a deterministic subgradient
        argmax = np.zeros((n_classes, batch, d), dtype=np.int64)
        hit = np.zeros((n_classes, batch, d), dtype=bool)
        for flat_idx in range(n**k):
            cls = labels[flat_idx]
            is_max = (trans[flat_idx] == pooled[cls]) & ~hit[cls]
            argmax[cls][is_max] = flat_idx
            hit[cls] |= is_max

        def vjp(g):
            g3 = g.reshape(batch, n_classes, d).transpose(1, 0, 2)
            da = np.zeros((n**k, batch, d))
            b_idx, d_idx = np.meshgrid(np.arange(batch), np.arange(d), indexing="ij")
            for cls in range(n_classes):
                if sizes[cls] == 0:
                    continue
                np.add.at(da, (argmax[cls], b_idx, d_idx), g3[cls])
            return (da.transpose(1, 0, 2).reshape(val.shape),)

    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    out = pooled.transpose(1, 0, 2).reshape(batch, n_classes * d)
    return Var(out, (a,), vjp)


# ---------------------------------------------------------------------------
# losses


def mse(pred: Var, target: np.ndarray) -> Var:
    """Mean squared error over every entry and the batch."""
    diff = pred.value - target

    def vjp(g):
        return (g * 2.0 * diff / diff.size,)

    return Var(np.array(np.mean(diff**2)), (pred,), vjp)


def cosine_loss(pred: Var, target: np.ndarray) -> Var:
    """Mean over the batch of 1 - <x/|x|, y/|y|>^2; in [0, 1], sign-blind."""
    x = pred.value
    y = np.asarray(target, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("cosine loss expects (batch, length) predictions")
    xn = np.linalg.norm(x, axis=1, keepdims=True)
    yn = np.linalg.norm(y, axis=1, keepdims=True)
    xh = x / xn
    yh = y / yn
    s = np.sum(xh * yh, axis=1, keepdims=True)
    batch = x.shape[0]

    def vjp(g):
        dx = -2.0 * s * (yh - s * xh) / xn / batch
        return (g * dx,)

    return Var(np.array(np.mean(1.0 - s**2)), (pred,), vjp)


def reshape(x: Var, shape: tuple[int, ...]) -> Var:
    old = x.value.shape

    def vjp(g):
        return (g.reshape(old),)

    return Var(x.value.reshape(shape), (x,), vjp)


# ---------------------------------------------------------------------------
# whole-network forward on the tape


def _layer_on_tape(layer: EquivariantLayer, a: Var, w: Var, bias: Var, n: int) -> Var:
    shape = (layer.k_in, layer.k_out)
    if layer.param_basis == "ops":
        c = w
        if layer.op_subset is not None:
            c = scatter_subset(c, layer.op_subset, bell(layer.k_in + layer.k_out))
        if shape == (2, 2):
            # reorder canonical -> fast op order with a fixed permutation matrix
            perm = _fast_to_canonical_permutation()
            pm = np.zeros((15, 15))
            pm[np.arange(15), perm] = 1.0
            return fast22_layer(a, coeff_transform(pm, c), bias)
        if shape == (2, 1):
            return fast21_layer(a, c, bias)
        if shape == (2, 0):
            return fast20_layer(a, c, bias)
        _, to_ind = change_of_basis(n, layer.k_in, layer.k_out)
        return generic_layer(a, coeff_transform(to_ind, c), bias, layer.k_in, layer.k_out)
    return generic_layer(a, w, bias, layer.k_in, layer.k_out)


def network_forward(net: Network, a_batch: np.ndarray, params: list[Var]) -> Var:
    """Forward pass on the tape; ``params`` aligns with net.param_arrays()."""
    a_batch = np.asarray(a_batch, dtype=np.float64)
    n = a_batch.shape[1] if net.layers[0].k_in > 0 else 1
    x = Var(a_batch)
    it = iter(params)
    for i, layer in enumerate(net.layers):
        w, bias = next(it), next(it)
        x = _layer_on_tape(layer, x, w, bias, n)
        if i < len(net.layers) - 1:
            x = relu(x)
    if net.pool is None:
        return x
    x = pool(x, net.layers[-1].k_out, net.pool)
    for i, dl in enumerate(net.dense):
        w, bias = next(it), next(it)
        x = dense(x, w, bias)
        if i < len(net.dense) - 1:
            x = relu(x)
    return x


def make_param_vars(net: Network) -> list[Var]:
    return [Var(arr.copy()) for arr in net.param_arrays()]


def grad(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    loss: str,
    params: list[Var] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Loss value and gradients for every parameter array of the network.

    Raises if the loss comes out non-finite, with enough context to debug.
    """
    params = make_param_vars(net) if params is None else params
    for p in params:
        p.grad = None
    out = network_forward(net, batch, params)
    pred = out
    if loss == "mse":
        loss_var = mse(pred, targets)
    elif loss == "cosine":
        val = pred.value
        if val.ndim == 3 and val.shape[-1] == 1:
            pred = reshape(pred, val.shape[:-1])
        loss_var = cosine_loss(pred, targets)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if not np.isfinite(loss_var.value):
        raise FloatingPointError(
            f"non-finite loss {loss_var.value!r} (batch shape {batch.shape}, loss {loss!r})"
        )
    backward(loss_var)
    return float(loss_var.value), [
        p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
    ]

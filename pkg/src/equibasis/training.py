"""Synthetic learning tasks, the training loop, and expressivity oracles.

Four regression tasks on random square matrices exercise the layer bases:
symmetric projection, diagonal extraction, leading right singular vector,
and trace.  The first three are equivariant (the singular-vector task maps
matrices to vectors), the last is invariant.  Networks built from the full
operator basis can represent the linear tasks exactly; the 4-operator
exchangeable-matrix sub-span cannot, and both the trained losses and an
SGD-free least-squares residual make that gap measurable.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .partitions import bell
from .layers import (
    DenseLayer,
    EquivariantLayer,
    Network,
    FAST_OP_NAMES,
    _fast_ops_stack,
    _fast_to_canonical_permutation,
    fast_op_norms,
    forward,
    hartford_op_subset,
    init_params,
)
from . import autodiff as ad

TASK_KINDS = ("sym_projection", "diag_extraction", "max_singular_vector", "trace")
BASIS_CHOICES = ("full", "hartford")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LossSpec:
    """Loss selection; both reduce by averaging over the batch."""

    kind: str  # "mse" | "cosine"

    def __post_init__(self) -> None:
        if self.kind not in ("mse", "cosine"):
            raise ValueError(f"unknown loss {self.kind!r}")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n: int = 20
    train_size: int = 2000
    test_size: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task {self.kind!r}; choose from {TASK_KINDS}")

    @property
    def loss(self) -> str:
        return "cosine" if self.kind == "max_singular_vector" else "mse"


@dataclass(frozen=True)
class TrainConfig:
    depths: tuple[int, ...] = (1, 2)
    width: int = 8
    epochs: int = 60
    batch_size: int = 100
    learning_rate: float = 1e-2
    lr_decay: float = 1.0  # per-epoch multiplicative factor once decay starts
    decay_after: int = 0  # epochs at the base rate before decay kicks in
    weight_decay: float = 0.0  # decoupled, skips biases
    optimizer: str = "adam"  # "adam" | "sgd"
    pool_mode: str = "sum"
    dense_widths: tuple[int, ...] = ()
    seed: int = 0


# ---------------------------------------------------------------------------
# reference targets and data generation


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def diagonal_mask(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    return a * np.eye(n)


def power_iteration_top_vector(a: np.ndarray, rng: np.random.Generator, tol: float = 1e-12) -> np.ndarray:
    """Leading right singular vector by power iteration on a^T a."""
    ata = a.T @ a
    v = rng.normal(size=a.shape[-1])
    v /= np.linalg.norm(v)
    for _ in range(100_000):
        nxt = ata @ v
        nxt /= np.linalg.norm(nxt)
        if min(np.linalg.norm(nxt - v), np.linalg.norm(nxt + v)) < tol:
            return nxt
        v = nxt
    raise RuntimeError("power iteration failed to converge; spectral gap too small?")


def _singular_gap_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with bulk singular values in [0, 0.5] and gap >= 0.5.

    The leading value sits 0.5 above the largest of the bulk, so the gap
    holds literally while the rest of the spectrum stays in [0, 0.5].
    """
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    bulk = rng.uniform(0.0, 0.5, size=n - 1)
    sigma = np.concatenate([[bulk.max() + 0.5], bulk])
    return u @ np.diag(sigma) @ v.T


def gen_task_data(task: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (N, n, n, 1) and targets for train+test combined, deterministic by seed.

    Targets come from direct reference routines: symmetrization, diagonal
    masking, power iteration (to 1e-12), and the diagonal sum.
    """
    rng = np.random.default_rng(task.seed)
    total = task.train_size + task.test_size
    n = task.n
    if task.kind == "max_singular_vector":
        mats = np.stack([_singular_gap_matrix(n, rng) for _ in range(total)])
        targets = np.stack([power_iteration_top_vector(m, rng) for m in mats])
    else:
        mats = rng.uniform(0.0, 10.0, size=(total, n, n))
        if task.kind == "sym_projection":
            targets = symmetrize(mats)[..., None]
        elif task.kind == "diag_extraction":
            targets = diagonal_mask(mats)[..., None]
        else:  # trace
            targets = np.einsum("bii->b", mats)[:, None]
    return mats[..., None], targets


def split_task_data(task: TaskSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    inputs, targets = gen_task_data(task)
    tr = task.train_size
    return inputs[:tr], targets[:tr], inputs[tr:], targets[tr:]


# ---------------------------------------------------------------------------
# losses (evaluation forms) and the trivial predictor


def mse_value(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def cosine_value(pred: np.ndarray, target: np.ndarray) -> float:
    xh = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    yh = target / np.linalg.norm(target, axis=1, keepdims=True)
    return float(np.mean(1.0 - np.sum(xh * yh, axis=1) ** 2))


def loss_value(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    if kind == "mse":
        return mse_value(pred, target)
    if kind == "cosine":
        return cosine_value(pred, target)
    raise ValueError(f"unknown loss {kind!r}")


def trivial_baseline(
    train_targets: np.ndarray, test_targets: np.ndarray, loss: str
) -> float:
    """Loss of the constant mean-of-train-targets predictor on the test set."""
    mean = train_targets.mean(axis=0, keepdims=True)
    pred = np.broadcast_to(mean, test_targets.shape)
    return loss_value(loss, pred, test_targets)


# ---------------------------------------------------------------------------
# network construction per task


def build_task_network(kind: str, depth: int, width: int, basis: str, config: TrainConfig) -> Network:
    """Untrained (zero) network of the requested depth for one task.

    ``depth`` counts equivariant layers.  Depth 1 is a single linear layer
    straight to the output shape; deeper networks use hidden layers of
    ``width`` channels with ReLU between.  The ``hartford`` basis swaps every
    layer's operator span for the exchangeable-matrix sub-span, leaving the
    architecture untouched.
    """
    if basis not in BASIS_CHOICES:
        raise ValueError(f"unknown basis {basis!r}")
    if depth < 1:
        raise ValueError("depth must be >= 1")

    def layer(k_in: int, k_out: int, d_in: int, d_out: int) -> EquivariantLayer:
        subset = hartford_op_subset(k_in, k_out) if basis == "hartford" else None
        return EquivariantLayer.zeros(k_in, k_out, d_in, d_out, "ops", subset)

    out_order = {"sym_projection": 2, "diag_extraction": 2, "max_singular_vector": 1}.get(kind)
    if kind == "trace":
        layers = [layer(2, 2, 1, width)]
        layers += [layer(2, 2, width, width) for _ in range(depth - 1)]
        widths = (bell(2) * width,) + tuple(config.dense_widths) + (1,)
        dense = [DenseLayer.zeros(a, b) for a, b in zip(widths, widths[1:])]
        return Network(layers, pool=config.pool_mode, dense=dense)
    if depth == 1:
        return Network([layer(2, out_order, 1, 1)])
    layers = [layer(2, 2, 1, width)]
    layers += [layer(2, 2, width, width) for _ in range(depth - 2)]
    layers += [layer(2, out_order, width, 1)]
    return Network(layers)


# ---------------------------------------------------------------------------
# optimizers and the training loop


class Adam:
    """Adam with decoupled weight decay; state per parameter array.

    ``decay_mask`` flags the arrays that weight decay applies to (weights
    yes, biases no).
    """

    def __init__(self, shapes, decay_mask, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decay_mask = decay_mask
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[ad.Var], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v, decays in zip(params, grads, self.m, self.v, self.decay_mask):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            step = mhat / (np.sqrt(vhat) + self.eps)
            if decays and self.weight_decay:
                step = step + self.weight_decay * p.value
            p.value = p.value - self.lr * step


class SGD:
    def __init__(self, shapes, decay_mask, lr=1e-3, weight_decay=0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay_mask = decay_mask

    def step(self, params, grads):
        for p, g, decays in zip(params, grads, self.decay_mask):
            if decays and self.weight_decay:
                g = g + self.weight_decay * p.value
            p.value = p.value - self.lr * g


def evaluate(net: Network, inputs: np.ndarray, targets: np.ndarray, loss: str, chunk: int = 250) -> float:
    """Loss of the plain forward pass over a dataset, computed in chunks."""
    preds = []
    for start in range(0, inputs.shape[0], chunk):
        out = forward(net, inputs[start : start + chunk])
        preds.append(out)
    pred = np.concatenate(preds)
    if loss == "cosine" and pred.ndim == 3 and pred.shape[-1] == 1:
        pred = pred[..., 0]
    return loss_value(loss, pred, targets)


def train(
    net: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: str,
    config: TrainConfig,
) -> tuple[Network, list[float]]:
    """Mini-batch training; returns the trained network and per-epoch mean loss.

    Fully deterministic for a given (network, data, config): batch order
    comes from the config seed and all kernels are single-threaded numpy.
    """
    params = ad.make_param_vars(net)
    shapes = [p.value.shape for p in params]
    decay_mask = [i % 2 == 0 for i in range(len(params))]  # w/weight arrays, not biases
    if config.optimizer == "adam":
        opt = Adam(shapes, decay_mask, lr=config.learning_rate, weight_decay=config.weight_decay)
    elif config.optimizer == "sgd":
        opt = SGD(shapes, decay_mask, lr=config.learning_rate, weight_decay=config.weight_decay)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    rng = np.random.default_rng(config.seed)
    n_samples = inputs.shape[0]
    history: list[float] = []
    for epoch in range(config.epochs):
        opt.lr = config.learning_rate * config.lr_decay ** max(0, epoch - config.decay_after)
        order = rng.permutation(n_samples)
        epoch_losses = []
        for start in range(0, n_samples, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss_val, grads = ad.grad(net, inputs[idx], targets[idx], loss, params)
            opt.step(params, grads)
            epoch_losses.append(loss_val)
        history.append(float(np.mean(epoch_losses)))
    return net.with_params([p.value for p in params]), history


# ---------------------------------------------------------------------------
# experiment runner


@dataclass
class RunResult:
    depth: int
    train_loss: float
    test_loss: float
    epochs: int
    learning_rate: float
    wall_time: float
    history: list[float] = field(repr=False, default_factory=list)
    net: Network | None = field(repr=False, default=None)


@dataclass
class ExperimentReport:
    task: TaskSpec
    basis: str
    config: TrainConfig
    loss_kind: str
    baseline: float
    runs: list[RunResult]
    generalization: dict[int, float] = field(default_factory=dict)

    @property
    def best(self) -> RunResult:
        return min(self.runs, key=lambda r: r.test_loss)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task.kind,
            "basis": self.basis,
            "n": self.task.n,
            "n_train": self.task.train_size,
            "n_test": self.task.test_size,
            "seed": self.task.seed,
            "loss": self.loss_kind,
            "trivial_baseline": self.baseline,
            "config": {
                **asdict(self.config),
                "depths": list(self.config.depths),
                "dense_widths": list(self.config.dense_widths),
            },
            "runs": [
                {
                    "depth": r.depth,
                    "train_loss": r.train_loss,
                    "test_loss": r.test_loss,
                    "epochs": r.epochs,
                    "learning_rate": r.learning_rate,
                    "wall_time": r.wall_time,
                }
                for r in self.runs
            ],
            "best": {"depth": self.best.depth, "test_loss": self.best.test_loss},
            "generalization": {str(k): v for k, v in self.generalization.items()},
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.runs:
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "task": self.task.kind,
                    "basis": self.basis,
                    "depth": r.depth,
                    "n": self.task.n,
                    "n_train": self.task.train_size,
                    "n_test": self.task.test_size,
                    "loss": r.test_loss,
                    "baseline": self.baseline,
                    "seed": self.task.seed,
                    "wall_time": r.wall_time,
                }
            )
        return rows


def _run_single(
    task: TaskSpec,
    config: TrainConfig,
    basis: str,
    depth: int,
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> RunResult:
    train_x, train_y, test_x, test_y = data
    started = time.perf_counter()
    net = build_task_network(task.kind, depth, config.width, basis, config)
    net = init_params(net, seed=config.seed + 7919 * depth)
    net, history = train(net, train_x, train_y, task.loss, config)
    test_loss = evaluate(net, test_x, test_y, task.loss)
    train_loss = evaluate(net, train_x, train_y, task.loss)
    return RunResult(
        depth=depth,
        train_loss=train_loss,
        test_loss=test_loss,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        wall_time=time.perf_counter() - started,
        history=history,
        net=net,
    )


def run_experiment(
    task: TaskSpec,
    config: TrainConfig,
    basis: str = "full",
    eval_sizes: tuple[int, ...] = (),
    max_workers: int = 1,
) -> ExperimentReport:
    """Train over the depth grid and report the best test loss per config.

    ``eval_sizes`` additionally evaluates the best trained network on fresh
    data at other node counts, with zero retraining; the layers are
    size-agnostic so the same parameters apply as-is.
    """
    data = split_task_data(task)
    baseline = trivial_baseline(data[1], data[3], task.loss)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [
                pool.submit(_run_single, task, config, basis, depth, data)
                for depth in config.depths
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [_run_single(task, config, basis, depth, data) for depth in config.depths]
    runs.sort(key=lambda r: r.depth)
    report = ExperimentReport(task, basis, config, task.loss, baseline, runs)
    for size in eval_sizes:
        alt = TaskSpec(task.kind, size, 0, task.test_size, task.seed + 104729)
        _, _, ax, ay = split_task_data(alt)
        report.generalization[size] = evaluate(report.best.net, ax, ay, task.loss)
    return report


# ---------------------------------------------------------------------------
# SGD-free expressivity oracle


def _op_operator_matrices(n: int) -> np.ndarray:
    """The 15 unit-norm operations as (n^2, n^2) operator matrices.

    Row ordering follows the canonical partition order (matching layer
    coefficient arrays), columns act on row-major flattened inputs.
    """
    basis_mats = np.eye(n * n).reshape(n * n, n, n)
    stack = _fast_ops_stack(basis_mats) / fast_op_norms(n)[:, None, None, None]
    # stack[s, in_flat, i, j]: operator matrix has rows = output index
    ops_fast_order = stack.reshape(15, n * n, n * n).transpose(0, 2, 1)
    out = np.empty_like(ops_fast_order)
    out[_fast_to_canonical_permutation()] = ops_fast_order
    return out


def _invariant_operator_rows(n: int) -> np.ndarray:
    """Unit-norm invariant functionals as (2, n^2) rows: mean diagonal, grand mean."""
    eye = np.eye(n).reshape(-1) / n
    ones = np.full(n * n, 1.0 / (n * n))
    return np.stack([eye, ones])


def target_operator(kind: str, n: int) -> np.ndarray:
    """Exact operator of a linear task, on row-major flattened matrices."""
    size = n * n
    if kind == "sym_projection":
        transpose = np.zeros((size, size))
        for i in range(n):
            for j in range(n):
                transpose[i * n + j, j * n + i] = 1.0
        return 0.5 * (np.eye(size) + transpose)
    if kind == "diag_extraction":
        diag = np.zeros((size, size))
        for i in range(n):
            diag[i * n + i, i * n + i] = 1.0
        return diag
    if kind == "trace":
        return np.eye(n).reshape(1, -1)
    raise ValueError(f"task {kind!r} is not linear; no exact operator exists")


def least_squares_fit(kind: str, basis: str, n: int) -> tuple[dict[str, float], float]:
    """Best coefficients for a linear task over a basis, plus the Frobenius residual.

    Solves the normal equations over the operator span directly against the
    exact target operator, so the result is independent of any training run:
    a zero residual certifies the task is representable, a positive one
    certifies it is not.
    """
    if basis not in BASIS_CHOICES:
        raise ValueError(f"unknown basis {basis!r}")
    target = target_operator(kind, n)
    if kind == "trace":
        rows = _invariant_operator_rows(n)
        names = ["mean_diagonal", "grand_mean"]
        if basis == "hartford":
            keep = list(hartford_op_subset(2, 0))
            rows, names = rows[keep], [names[i] for i in keep]
    else:
        rows = _op_operator_matrices(n).reshape(15, -1)
        canon_names = [""] * 15
        for fast_idx, canon_idx in enumerate(_fast_to_canonical_permutation()):
            canon_names[canon_idx] = FAST_OP_NAMES[fast_idx]
        names = canon_names
        if basis == "hartford":
            keep = list(hartford_op_subset(2, 2))
            rows, names = rows[keep], [names[i] for i in keep]
        rows = rows.reshape(len(names), -1)
    coeffs, _, _, _ = np.linalg.lstsq(rows.T, target.reshape(-1), rcond=None)
    residual = float(np.linalg.norm(target.reshape(-1) - rows.T @ coeffs))
    return dict(zip(names, (float(c) for c in coeffs))), residual

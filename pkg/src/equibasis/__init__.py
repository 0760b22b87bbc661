"""Complete bases for permutation-invariant and -equivariant linear layers.

The number of independent weights in a linear layer that respects node
relabeling is a Bell number: bell(k) tied weights for invariant maps of
order-k tensors and bell(2k) for equivariant ones, independent of the node
count.  This package enumerates the underlying index-equality classes,
builds the indicator bases, applies and trains layers made from them, and
verifies every dimension claim by brute force over whole permutation groups
at small sizes.
"""

__version__ = "0.1.0"

from .partitions import (
    SetPartition,
    bell,
    class_size,
    effective_dim,
    enumerate_partitions,
    equality_pattern,
    nominal_dim,
)
from .tensor import PermSpec, Tensor, apply_perm, kron_power_matrix, mat, vec
from .basis import (
    BasisElement,
    MultiNodeBasisElement,
    bias_basis,
    equivariant_basis,
    hartford_subbasis,
    invariant_basis,
    mixed_basis,
    multiset_basis,
)
from .layers import (
    DenseLayer,
    EquivariantLayer,
    InvariantLayer,
    Network,
    apply_equivariant,
    apply_equivariant_fast,
    apply_invariant,
    forward,
    init_params,
    invariant_pool,
    order2_fast_ops,
)
from .training import (
    TaskSpec,
    TrainConfig,
    gen_task_data,
    least_squares_fit,
    run_experiment,
    train,
)
from .oracle import (
    averaging_projector,
    check_basis_spans_fixed_space,
    check_layer_dims_with_features,
    check_multiset_dims,
    fixed_subspace_dim,
    trace_moment,
)

__all__ = [
    "SetPartition",
    "bell",
    "class_size",
    "effective_dim",
    "enumerate_partitions",
    "equality_pattern",
    "nominal_dim",
    "PermSpec",
    "Tensor",
    "apply_perm",
    "kron_power_matrix",
    "mat",
    "vec",
    "BasisElement",
    "MultiNodeBasisElement",
    "bias_basis",
    "equivariant_basis",
    "hartford_subbasis",
    "invariant_basis",
    "mixed_basis",
    "multiset_basis",
    "DenseLayer",
    "EquivariantLayer",
    "InvariantLayer",
    "Network",
    "apply_equivariant",
    "apply_equivariant_fast",
    "apply_invariant",
    "forward",
    "init_params",
    "invariant_pool",
    "order2_fast_ops",
    "TaskSpec",
    "TrainConfig",
    "gen_task_data",
    "least_squares_fit",
    "run_experiment",
    "train",
    "averaging_projector",
    "check_basis_spans_fixed_space",
    "check_layer_dims_with_features",
    "check_multiset_dims",
    "fixed_subspace_dim",
    "trace_moment",
]

"""Convolution over arbitrary structures.

A convolution maps an input bundle ``x`` of shape ⟨M,P⟩ to ``y`` of shape
⟨N,Q⟩ through ``y = Σ_k A_kᵀ x Θ_k``: the sparse basis stack ``A`` carries the
structure (grid shifts, graph operators, attention maps), the ⟨K,P,Q⟩ tensor
``Θ`` the parameters.
"""

from .attention import (
    AttentionConvSpec,
    BiaffineParams,
    Mask,
    Step,
    apply_mask,
    attention_convolve,
    biaffine_attention,
    expand_transformer_theta,
    gat_head,
    leaky_relu,
    positional_heads,
    softmax_columns,
    softmax_rows,
    transformer_head,
)
from .basis import (
    Graph,
    GridSpec,
    KernelSpec,
    chebyshev_basis,
    cuboid_offsets,
    gcn_basis,
    grid_basis,
    identity_basis,
    random_walk_basis,
    relation_sort_basis,
    shift_matrix,
)
from .conv import (
    ContractionPlan,
    MultiplyAddCounter,
    Path,
    apply_dense_phi,
    compose,
    convolve,
    convolve_batched,
    materialize_phi,
    plan_contraction,
)
from .errors import ArgumentError, ShapeError, SingularBasisError, SizeError, StructConvError, TensorIndexError
from .params import (
    ControlledSeparableParams,
    DepthwiseParams,
    GroupedParams,
    expand_controlled_separable,
    expand_depthwise,
    expand_grouped,
    parameter_count,
)
from .sparse import BasisStack, SparseMatrix
from .tensor import (
    IndexBijection,
    canonical_index,
    canonical_multi_index,
    flatten,
    mixed_product,
    numerical_rank,
    outer,
    slice_tensor,
    solve_basis_coefficients,
    unflatten,
)

__version__ = "0.1.0"

"""Nonnegative CP decomposition of dense tensors.

Alternating-updating solvers (unconstrained, multiplicative, HALS, block
principal pivoting, ADMM, Nesterov-type) over a dimension-tree MTTKRP,
runnable either in-process or across a simulated distributed worker grid
with communication accounting.
"""

from .dimtree import (
    DimTreeContext,
    DimTreePlan,
    TempTensor,
    choose_split_mode,
    multi_ttv,
    partial_mttkrp,
)
from .driver import (
    ALGORITHMS,
    CATEGORIES,
    RunConfig,
    RunReport,
    init_factor,
    nncp_parallel,
    nncp_sequential,
    record_category,
    relative_error,
)
from .grid import CommCounters, DistMap, Grid, Worker, block_partition
from .tensor_io import (
    SyntheticSpec,
    TensorFileError,
    generate_synthetic,
    read_matrix,
    read_tensor,
    write_matrix,
    write_tensor,
)
from .tensor_ops import (
    DenseTensor,
    FactorSet,
    gram,
    hadamard_grams_excluding,
    khatri_rao,
    matrix_inner_product,
    naive_mttkrp,
    norm_squared,
    normalize_columns,
    reconstruct,
)
from .updaters import (
    BppCyclingError,
    UpdateInputs,
    UpdaterState,
    admm_update,
    bpp_update,
    hals_update,
    mu_update,
    nesterov_outer_accelerate,
    nesterov_update,
    ucp_update,
)

__version__ = "0.1.0"

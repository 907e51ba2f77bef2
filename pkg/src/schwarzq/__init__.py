"""Two-level additive Schwarz preconditioning of the Poisson problem with
multilevel local solves, block-encoding composition, register-level circuit
emulation and QSVT pseudo-inversion with shot sampling."""

__version__ = "0.1.0"

from .fem import (
    Coefficient,
    MeshSpec,
    assemble_mass,
    assemble_rhs,
    assemble_stiffness,
    coefficient_block,
    coefficient_block_expanded,
    factorize_gradient,
)
from .schwarz import (
    SplitPreconditioner,
    SubdomainLayout,
    build_layout,
    build_preconditioner,
    coarse_space,
    dg_prolongation,
    local_gradient_identity_check,
    local_stiffness,
    restriction,
)
from .bpx import BpxFactor, build_bpx, bpx_spectral_bounds
from .spectral import (
    EigensolverError,
    SpectralReport,
    extreme_eigs_sym,
    precond_spectrum,
    unpreconditioned_kappa,
)
from .encoding import (
    BlockEncoding,
    assemble_preconditioned_encoding,
    assemble_split_gradient_encoding,
    calibrate_subnorm_offset,
    compose_concat_columns,
    compose_product,
    encode_dilation,
    encode_prolongation,
    encode_scaled_identity,
)
from .circuits import (
    RegisterLayout,
    prepare_rhs_state,
    prolongation_permutation_1d,
    prolongation_tensor,
)
from .qsvt import (
    ChebyshevOddPoly,
    InnerProductConfig,
    RunReport,
    apply_svt,
    build_inverse_poly,
    solve_inner_product,
)

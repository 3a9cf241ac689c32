"""rho-value multiple testing: the rho-BH procedure family, its estimators,
classical baselines and a simulation harness."""

from .baselines import PValueSet, adjusted_bh, bh, clfdr_procedure, ebh, sc_lfdr, weighted_bh
from .core import (
    Decision,
    DegenerateInputError,
    InvalidInputError,
    NotApplicableError,
    ProcedureConfig,
    RhoError,
    RhoValue,
    SplitAssignment,
    TestInstance,
    combine_decisions,
    split_data,
)
from .dist import (
    STD_NORMAL,
    ClosedFormNullCdf,
    ConditionalKernelMixture,
    EmpiricalNullCdf,
    KernelMixture,
    Normal,
    NormalLocationNullCdf,
    build_conditional_null_cdfs,
    build_null_cdf_mc,
    normal_scale_bandwidth,
    silverman_bandwidth_1d,
)
from .estimators import (
    bh_tau,
    clfdr_from_q,
    fit_alt_density,
    fit_cond_alt_density,
    kernel_storey_pi,
    lfdr,
    storey_pi,
)
from .kernels import BACKEND
from .procedures import (
    RhoProblem,
    compute_rho,
    rho_bh,
    rho_bh_by,
    rho_bh_dd,
    rho_bh_side_dd,
    side_info_rho_bh,
    side_info_threshold_form,
    weighted_rho_bh,
    weighted_rho_bh_dd,
    zap_variant,
)

__version__ = "0.1.0"

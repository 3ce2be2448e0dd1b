"""Autocovariance-based learning for high-dimensional functional time series.

Three-step estimation for panels of noisily observed curves: (1) per-series
dimension reduction through the eigenfunctions of a lag-pooled autocovariance
operator, which the additive white-noise contamination cannot reach; (2) a
block regularized minimum-distance program on lagged score moments, solved by
linearized ADMM, giving block-sparse coefficient estimates; (3) linear
recovery of functional coefficients. Ships SFLR, FFLR, and VFAR model fits, a
covariance-based baseline (FPCA + group-lasso FISTA), the simulation design
and benchmark runner used for method comparison, and a CLI.
"""

from .autocov_basis import (
    AutocovBasis,
    LagCovEstimate,
    ScorePanel,
    autocov_hs_distance,
    build_autocov_basis,
    build_fpca_basis,
    eigen_decompose,
    fpca,
    pooled_autocov_kernel,
    project_scores,
    sample_autocov,
    select_dim,
)
from .block_rmd import (
    BlockSolution,
    MomentSystem,
    RmdConfig,
    residual_norms,
    sensitivity_diagnostic,
    solve,
    solve_path,
)
from .errors import (
    AftsError,
    CapabilityError,
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    GridMismatchError,
    InfeasibleError,
    StructureError,
)
from .func_core import (
    Curve,
    FunctionalPanel,
    Grid,
    Kernel,
    curve_norm,
    hs_norm,
    inner_product,
    kernel_apply,
)

__version__ = "0.1.0"

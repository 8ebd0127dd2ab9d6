"""Regression Monte-Carlo solvers for two-time backward stochastic systems.

The package simulates a Brownian ensemble once, then sweeps a family of
backward equations over the time square by least-squares regression,
recovering the adapted value process, its kernel under three extension
conventions, and a dynamic coherent risk measure built on top.
"""

from .analytic import (
    CASES,
    ConvergenceTable,
    ErrorReport,
    ReferenceCase,
    ReferenceFields,
    convergence_study,
    error_metrics,
    field_errors,
    get_case,
    reference_fields,
)
from .ensemble import PathEnsemble, ito_sum, sample_ensemble
from .expr import ExprError, eval_expr, format_expr, free_variables, parse
from .fields import (
    AdaptedField,
    CoeffSurface,
    CompositeSurface,
    DenseSurface,
    FuncSurface,
    SurfaceField,
    SymmetricSurface,
    design_matrix,
)
from .girsanov import (
    DriftError,
    DriftSpec,
    SelftestReport,
    TiltedEnsemble,
    girsanov_selftest,
    tilt,
)
from .grid import TimeGrid, build_grid
from .norms import (
    NormReport,
    s2_norm,
    star_h2_norm,
    y_l2,
    z_cells_l2,
    z_diag_l2,
    z_full_l2,
    z_rect_l2,
    z_upper_l2,
)
from .regression import (
    BasisSpec,
    DegenerateEnsembleError,
    NodeDesign,
    RegressionError,
    at_initial_expect,
    cond_expect,
    martingale_coeff,
    node_regression,
)
from .risk import (
    Aggregator,
    AxiomCheck,
    AxiomReport,
    RiskSetupError,
    RiskSpec,
    RouteReport,
    check_axioms,
    constant_position_reference,
    discount_factor,
    position_terminal,
    require_common_paths,
    rho,
    rho_report,
    route_agreement,
)
from .solver import (
    Driver,
    FamilyReport,
    Generator,
    ProblemSpec,
    ResidualReport,
    SolveReport,
    SolverConfig,
    SolverError,
    Terminal,
    extend_martingale,
    extend_symmetric,
    family_bsde_sweep,
    martingale_reconstruction_error,
    residual,
    solve_adapted,
    solve_m,
    solve_s,
)

__version__ = "0.1.0"

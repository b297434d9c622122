"""Continuation and verification toolkit for parametrized semilinear problems
on radially symmetric domains: minimal branches, extremal parameters, critical
curves for the coupled system, stability indicators, deflated solution
enumeration, and the integral identities the comparison arguments rest on.
"""

from .branch import (
    Branch,
    BranchPoint,
    DivergenceReport,
    FoldEstimate,
    ProblemSpec,
    continue_branch,
    contraction_threshold,
    estimate_lambda_star,
    extremal_solution,
    lambda_star_bisection,
    minimal_solution,
    newton_solve,
    small_solution,
    stability_eigenvalue,
    weak_residual,
)
from .deflation import (
    FoldCollapseReport,
    SolutionSet,
    UniquenessRegion,
    deflated_search,
    extremal_uniqueness_probe,
    uniqueness_region,
)
from .errors import (
    DomainExitError,
    EigenSolverError,
    InternalConsistencyError,
    NoContractionError,
    NonConvergenceError,
    RejectedInputError,
    SearchFailureError,
    SingularEvaluationError,
    StepFailureError,
    ToolkitError,
    UnavailableError,
    WrongClassError,
)
from .identities import (
    EnergyBoundReport,
    IdentityReport,
    ScanReport,
    T_scan,
    TScanResult,
    cal_threshold,
    default_c_sigma,
    extremal_energy_bound,
    nine_scan,
    nine_threshold,
    pohozaev_fourth,
    pohozaev_from_fields,
    system_energy,
    t_scan_threshold,
)
from .nonlinearities import (
    Nonlinearity,
    classify,
    common_mu,
    exp_nonlinearity,
    find_k,
    find_mu_R,
    find_mu_S,
    from_spec,
    mems_nonlinearity,
    power_nonlinearity,
    strict_convexity_check,
    supercritical_check,
    superlinearity_ratio,
    verify_antiderivative,
)
from .operators import (
    OperatorMatrix,
    RadialField,
    RadialGrid,
    bilaplacian,
    integrate,
    integrate_values,
    laplacian,
    radial_derivative,
    surface_area,
)
from .system import (
    OrderingReport,
    RayBranch,
    SystemPoint,
    SystemSpec,
    UpsilonCurve,
    difference_residual,
    iv_threshold,
    newton_system,
    pointwise_orderings,
    solution_pair,
    system_minimal,
    system_weak_residual,
    trace_ray,
    upsilon_curve,
)

__version__ = "0.1.0"

"""Numerical toolkit for the particle-number-Casimir functional of the spherically
symmetric Einstein-Vlasov system."""
from .errors import (
    DomainError,
    EvCasimirError,
    GridMismatchError,
    HorizonError,
    InitError,
    NoSupportError,
    ParameterError,
    PreconditionError,
    RangeError,
    SupportError,
    UsageError,
)
from .grid import (
    AdmissibilityReport,
    AdmissibleParams,
    DistributionFunction,
    PhaseGrid,
    RadialProfile,
    check_admissible,
    density,
    lambda_of_m,
    make_grid,
    mass_function,
    two_m_over_r_bound,
)
from .functional import FunctionalReport, casimir, evaluate, midpoint_convexity_probe, phi, scale
from .ansatz import AnsatzTables, build_ansatz, invert_Gprime
from .static import (
    StaticSolution,
    cbec_witness,
    check_cbec,
    functional_of_static,
    integrate_static,
    sample_static,
    sweep_family,
)
from .rearrange import MachineTrace, cap_excess, improve_tail, remove_gap, restrict_rescale, tail_rearrange
from .minimize import (
    DiagnosticsReport,
    MinimizerState,
    MinimizeOptions,
    ShellProblem,
    convergence_diagnostics,
    minimize,
    project_shell,
    reduced_functional,
    variational_residual,
)

__version__ = "0.1.0"

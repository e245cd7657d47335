"""semiflow: conjugate instants and integer indices of perturbed-geodesic
boundary value problems in parallel-trivialized form.

The package computes, for a system Ju'' + S(x)u = 0 with symmetry
J = diag(Id, -Id), the conjugate instants of the induced one-parameter
family together with three independently defined integer indices (spectral
flow of the Hessian family, planar winding degree of det b_z, Maslov index
of the induced Lagrangian path) and verifies their agreement.
"""

from .errors import (
    BoundaryZeroError,
    DegenerateEndpointError,
    DeltaRegularizationError,
    H1ViolationError,
    HomogeneousFitError,
    IntegrationBlowupError,
    IrregularInstantError,
    SemiflowError,
    UncertifiedDipError,
    ValidationError,
)
from .numkit import Signature, det, kernel_basis, poly_divrem, sym_signature
from .system import (
    CoefficientField,
    MetricSignature,
    ProblemSystem,
    Tolerances,
    hamiltonian,
    problem_from_dict,
    problem_to_dict,
    s_family,
    s_family_dot,
    symplectic_matrix,
)
from .flow import FundamentalSolution, fundamental_solution, rho, symplectic_residual

__version__ = "1.0.0"

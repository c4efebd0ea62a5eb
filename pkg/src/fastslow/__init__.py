"""Fast-slow chemical reaction networks.

Conservation structure, slow-manifold reconstruction, large-deviation rate
functions, least-action solvers and state-constrained Hamilton-Jacobi grids
for mass-action networks with a fast/slow scale separation.
"""

from .network import (
    Network,
    NetworkError,
    NetworkSyntaxError,
    Reaction,
    Timescale,
    parse_network,
    reaction_vector,
    serialize_network,
    validate,
)
from .stoich import StoichStructure, build_structure, project_onto
from .kinetics import (
    FdbResult,
    StepControl,
    fast_defect,
    fdb_solve,
    integrate_rre,
    intensity,
    rre_rhs,
)
from .equilibria import (
    ManifoldChart,
    ReconstructionResult,
    chart,
    is_fast_equilibrium,
    reconstruct,
    sample_manifold,
)
from .effective import (
    effective_rhs_coarse,
    effective_rhs_projected,
    integrate_effective,
)
from .rate_functions import (
    DualEvaluation,
    S,
    S_star,
    cosh_legendre,
    cosh_star,
    hamiltonian_cg,
    hamiltonian_eff,
    hamiltonian_eps,
    lagrangian_cg,
    lagrangian_eff,
    lagrangian_eps,
    lagrangian_eps_flux,
    relative_entropy,
)
from .paths import Path
from .examples import load_example

__version__ = "0.1.0"

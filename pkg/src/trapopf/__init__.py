"""Block-structured trust-region solver with alternating-projection activity
detection, augmented Lagrangian outer loops, and AC optimal power flow
benchmarks."""

from .blockspace import (
    ActiveSet,
    BlockVector,
    BoxSet,
    CouplingGraph,
    Partition,
    active_set,
    criticality,
    greedy_coloring,
    project_box,
    projected_gradient,
)
from .model import (
    BlockMatrixBuilder,
    BlockSparseMatrix,
    NlpProblem,
    QuadraticModel,
    as_single_node,
    hess_vec,
    model_eval,
    partial_model_gradient,
)
from .cauchy import CauchyParams, CauchyResult, cauchy_sweep
from .refine import RefineParams, RefineResult, RefineTermination, scg_refine
from .driver import TrapParams, TrapReport, trap_solve
from .auglag import (
    AugLagOracle,
    EqualityNlp,
    OuterReport,
    auglag_oracle,
    auglag_outer,
    lancelot_outer,
)
from .commaccount import CommLedger

__version__ = "0.1.0"

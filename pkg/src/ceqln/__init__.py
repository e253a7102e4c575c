"""Constrained basis-function regression with a learned equation network.

Fit multi-dimensional trajectories under hard equality and inequality
constraints by solving a quadratic program over basis-function weights; the
basis functions themselves are the outputs of a small feed-forward network
with elemental analytic activations, trained end to end through the QP.
Trained bases adapt to new constraint sets by re-solving the QP only.
"""

__version__ = "0.1.0"

from .adaptation import TrajectoryAdapter, adapt
from .assembly import (
    ConstraintSet,
    EqualityRow,
    InequalityRow,
    TrajectoryDataset,
    assemble_design,
    assemble_equality,
    assemble_inequality,
    load_constraint_sets,
    save_constraint_sets,
)
from .errors import (
    CeqlnError,
    ConfigurationError,
    DegenerateGradientError,
    IllConditionedError,
    InfeasibleConstraintsError,
    InitializationError,
    NonconvergenceError,
    RedundantConstraintsError,
    TrainingAbortedError,
)
from .fixed_basis import FixedBasisSpec, evaluate_fixed, sweep
from .metrics import mse_const, mse_shape, mse_suite_pickplace
from .network import (
    BasisEvaluations,
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    forward,
    forward_with_gradients,
    init_uniform,
    load_model,
    repeated_kinds,
    save_model,
)
from .qp import (
    QpProblem,
    QpSolution,
    SolverOptions,
    build_cost,
    solve,
    solve_equality,
)
from .qp_adjoint import chain_to_design, solution_pullback
from .symbolic import (
    basis_expressions,
    compile_expressions,
    export_expressions,
    load_reference_model,
    unit_expressions,
    verify_constraints,
    verify_model_constraints,
)
from .synthetic import generate_synthetic
from .training import (
    FitResult,
    TrainingConfig,
    evaluate,
    initialize_stage,
    total_loss,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]

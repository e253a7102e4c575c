"""Two-stage fitting: restart initialization, then full-batch gradient descent.

The loss is the half sum of squared errors between each constraint set's
regressed trajectory and the targets, summed over constraint sets (the
weight regularizer lives inside the QP cost, not here). Each epoch
re-solves one QP per constraint set; constraints therefore hold at every
epoch regardless of parameter quality, and training only reshapes the basis
to cut distortion.

Descent uses a fixed learning rate and plain gradient steps; the lowest-loss
parameters seen are returned, not the last ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .assembly import (
    ConstraintSet,
    TrajectoryDataset,
    assemble_design,
    check_equality_conflicts,
    place_rows,
)
from .errors import (
    CeqlnError,
    ConfigurationError,
    DegenerateGradientError,
    InitializationError,
    TrainingAbortedError,
)
from .network import (
    BasisEvaluations,
    LayerSpec,
    NetworkGrads,
    NetworkParams,
    NetworkSpec,
    forward,
    forward_with_gradients,
    init_uniform,
    pack,
    repeated_kinds,
    unpack,
)
from .qp import CostMode, QpProblem, QpSolution, SolverOptions, build_cost, solve
from .qp_adjoint import chain_to_design, solution_pullback
from .util import ordered_map

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    beta: int
    epochs: int
    learning_rate: float
    lambda_w: float
    init_ranges: list[tuple[tuple[float, float], tuple[float, float]]]
    seed: int
    cost_mode: CostMode = "paper"
    fd_fallback: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.beta < 1:
            raise ConfigurationError("beta must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.lambda_w < 0:
            raise ConfigurationError("lambda_w must be nonnegative")


@dataclass
class FitResult:
    params_star: NetworkParams
    loss_history: np.ndarray  # (epochs,)
    # worst constraint violation across sets per epoch: max of equality
    # |A w - b| and one-sided bound violations
    residual_history: np.ndarray  # (epochs,)
    init_loss: float
    best_epoch: int
    per_constraint_solutions: dict[int, QpSolution]
    trajectories: dict[int, np.ndarray]  # r -> (D, N)


def config_from_json(doc: dict) -> tuple[TrainingConfig, NetworkSpec]:
    """Parse a training-config document into (config, network spec).

    Hidden layers are given either as {"activations": [...]} or as
    {"repeat": k} / {"repeat": k, "kinds": [...]}, the latter expanding to k
    copies of each kind in listed order.
    """
    hidden = []
    for entry in doc["hidden_layers"]:
        if "activations" in entry:
            hidden.append(LayerSpec(tuple(entry["activations"])))
        else:
            kinds = entry.get("kinds")
            hidden.append(
                repeated_kinds(int(entry["repeat"]), tuple(kinds)) if kinds
                else repeated_kinds(int(entry["repeat"]))
            )
    spec = NetworkSpec(tuple(hidden), n_basis=int(doc["n_basis"]))
    ranges = [
        ((float(w[0]), float(w[1])), (float(b[0]), float(b[1])))
        for w, b in doc["init_ranges"]
    ]
    config = TrainingConfig(
        beta=int(doc["beta"]),
        epochs=int(doc["epochs"]),
        learning_rate=float(doc["learning_rate"]),
        lambda_w=float(doc["lambda_w"]),
        init_ranges=ranges,
        seed=int(doc["seed"]),
        cost_mode=doc.get("cost_mode", "paper"),
        fd_fallback=bool(doc.get("fd_fallback", False)),
    )
    return config, spec


# -- shared fitting pipeline ---------------------------------------------------


def _build_problem(
    Phi: np.ndarray,
    P: np.ndarray,
    q: np.ndarray,
    eq_rows: np.ndarray,
    ineq_rows: np.ndarray,
    cs: ConstraintSet,
    n_dims: int,
) -> QpProblem:
    check_equality_conflicts(cs)
    n_cols = Phi.shape[1]
    A_eq = place_rows(eq_rows, [e.dim for e in cs.equalities], n_dims) if cs.equalities else np.zeros((0, n_dims * n_cols))
    b_eq = np.array([e.value for e in cs.equalities], dtype=float)
    A_ineq = place_rows(ineq_rows, [iq.dim for iq in cs.inequalities], n_dims) if cs.inequalities else np.zeros((0, n_dims * n_cols))
    lb = np.array([iq.lower for iq in cs.inequalities], dtype=float)
    ub = np.array([iq.upper for iq in cs.inequalities], dtype=float)
    return QpProblem(P=P, q=q, A_eq=A_eq, b_eq=b_eq, A_ineq=A_ineq, lb=lb, ub=ub)


def _trajectory(Phi: np.ndarray, w: np.ndarray, n_dims: int) -> np.ndarray:
    m = Phi.shape[1]
    return np.vstack([Phi @ w[d * m : (d + 1) * m] for d in range(n_dims)])


def _design_rows(params: NetworkParams, spec: NetworkSpec, times: np.ndarray) -> np.ndarray:
    if len(times) == 0:
        return np.zeros((0, spec.n_basis + 1))
    return assemble_design(forward(params, spec, np.asarray(times, dtype=float)))


def evaluate_with_solution(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    cs: ConstraintSet,
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
) -> tuple[np.ndarray, QpSolution]:
    """Run the full pipeline for one constraint set: basis evaluation, design
    assembly, constrained QP, regressed trajectory."""
    options = options or SolverOptions()
    cs.validate_domain(dataset.times[0], dataset.times[-1])
    Phi = _design_rows(params, spec, dataset.times)
    P, q, _ = build_cost(Phi, dataset.targets, lambda_w, cost_mode)
    eq_rows = _design_rows(params, spec, np.array([e.t for e in cs.equalities]))
    ineq_rows = _design_rows(params, spec, np.array([iq.t for iq in cs.inequalities]))
    qp = _build_problem(Phi, P, q, eq_rows, ineq_rows, cs, dataset.n_dims)
    try:
        sol = solve(qp, options)
    except CeqlnError as exc:
        exc.details.setdefault("constraint_set", cs.index)
        raise
    return _trajectory(Phi, sol.w, dataset.n_dims), sol


def evaluate(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    cs: ConstraintSet,
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
) -> np.ndarray:
    return evaluate_with_solution(params, spec, dataset, cs, lambda_w, cost_mode, options)[0]


def _half_sse(yhat: np.ndarray, targets: np.ndarray) -> float:
    return float(0.5 * np.sum((yhat - targets) ** 2))


def total_loss(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    constraint_sets: Sequence[ConstraintSet],
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
) -> float:
    """Sum of per-constraint-set half-SSE losses; +inf when any set fails."""

    def one(cs: ConstraintSet) -> float:
        try:
            yhat = evaluate(params, spec, dataset, cs, lambda_w, cost_mode, options)
        except CeqlnError as exc:
            logger.warning("constraint set %d infeasible: %s", cs.index, exc)
            return np.inf
        return _half_sse(yhat, dataset.targets)

    losses = ordered_map(one, list(constraint_sets))
    total = 0.0
    for value in losses:
        total += value
    return total


def loss_and_gradient(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    constraint_sets: Sequence[ConstraintSet],
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
) -> tuple[float, NetworkGrads | None, float]:
    """One full-batch loss/gradient evaluation.

    Evaluates the basis once over the concatenated time stack (data times
    followed by every set's constraint times), then per constraint set:
    solve the QP, pull the trajectory cotangent back through the solution,
    the cost assembly, and the row placement, and accumulate onto the basis
    cotangent. Returns (loss, grads, worst constraint violation), or
    (inf, None, inf) when any set is infeasible.
    """
    options = options or SolverOptions()
    n = dataset.n_points
    n_dims = dataset.n_dims
    segments: list[tuple[slice, slice]] = []
    stack = [dataset.times]
    offset = n
    for cs in constraint_sets:
        cs.validate_domain(dataset.times[0], dataset.times[-1])
        eq_t = np.array([e.t for e in cs.equalities], dtype=float)
        ineq_t = np.array([iq.t for iq in cs.inequalities], dtype=float)
        eq_slice = slice(offset, offset + eq_t.size)
        offset += eq_t.size
        ineq_slice = slice(offset, offset + ineq_t.size)
        offset += ineq_t.size
        segments.append((eq_slice, ineq_slice))
        stack.extend([eq_t, ineq_t])
    all_times = np.concatenate(stack)

    basis, pullback = forward_with_gradients(params, spec, all_times)
    values = basis.values
    d_values = np.zeros_like(values)
    Phi = assemble_design(values[:, :n])
    P, q, _ = build_cost(Phi, dataset.targets, lambda_w, cost_mode)
    m = Phi.shape[1]

    total = 0.0
    worst_violation = 0.0
    for cs, (eq_slice, ineq_slice) in zip(constraint_sets, segments):
        eq_rows = assemble_design(values[:, eq_slice]) if cs.equalities else np.zeros((0, m))
        ineq_rows = assemble_design(values[:, ineq_slice]) if cs.inequalities else np.zeros((0, m))
        qp = _build_problem(Phi, P, q, eq_rows, ineq_rows, cs, n_dims)
        try:
            sol = solve(qp, options)
        except CeqlnError as exc:
            logger.warning("constraint set %d infeasible: %s", cs.index, exc)
            return np.inf, None, np.inf
        if qp.A_eq.shape[0]:
            worst_violation = max(
                worst_violation, float(np.abs(qp.A_eq @ sol.w - qp.b_eq).max())
            )
        if qp.A_ineq.shape[0]:
            vals = qp.A_ineq @ sol.w
            worst_violation = max(
                worst_violation,
                float(np.maximum(qp.lb - vals, 0.0).max(initial=0.0)),
                float(np.maximum(vals - qp.ub, 0.0).max(initial=0.0)),
            )
        yhat = _trajectory(Phi, sol.w, n_dims)
        residual = yhat - dataset.targets  # dL/dyhat for the half-SSE loss
        total += float(0.5 * np.sum(residual**2))

        dw = np.concatenate([Phi.T @ residual[d] for d in range(n_dims)])
        cot = solution_pullback(qp, sol, dw, options)
        des = chain_to_design(
            cot,
            Phi,
            dataset.targets,
            lambda_w,
            eq_dims=np.array([e.dim for e in cs.equalities], dtype=int),
            ineq_dims=np.array([iq.dim for iq in cs.inequalities], dtype=int),
            mode=cost_mode,
        )
        # Direct dependence of yhat = Phi w on Phi, beside the path through w.
        dPhi_direct = np.zeros_like(Phi)
        for d in range(n_dims):
            dPhi_direct += np.outer(residual[d], sol.w[d * m : (d + 1) * m])
        d_values[:, :n] += des.d_basis_data + dPhi_direct[:, 1:].T
        if cs.equalities:
            d_values[:, eq_slice] += des.d_basis_eq
        if cs.inequalities:
            d_values[:, ineq_slice] += des.d_basis_ineq

    return total, pullback(d_values), worst_violation


def fd_gradient(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    constraint_sets: Sequence[ConstraintSet],
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
    step: float = 1e-6,
) -> NetworkGrads:
    """Central finite-difference gradient of the total loss (fallback path)."""
    theta = pack(params)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        lp = total_loss(unpack(plus, params), spec, dataset, constraint_sets, lambda_w, cost_mode, options)
        lm = total_loss(unpack(minus, params), spec, dataset, constraint_sets, lambda_w, cost_mode, options)
        grad[i] = (lp - lm) / (2 * h)
    template = params.copy()
    packed = unpack(grad, template)
    return NetworkGrads(packed.layers, packed.final)


def initialize_stage(
    config: TrainingConfig,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    constraint_sets: Sequence[ConstraintSet],
) -> tuple[NetworkParams, float]:
    """Draw ``beta`` parameter sets, score each by total loss, return the best.

    Draws that fail to solve rank below every feasible draw; if all fail an
    InitializationError suggests widening the ranges.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.beta)

    def one(seed) -> tuple[float, NetworkParams]:
        candidate = init_uniform(spec, config.init_ranges, seed)
        loss = total_loss(
            candidate, spec, dataset, constraint_sets,
            config.lambda_w, config.cost_mode, config.solver,
        )
        return loss, candidate

    scored = ordered_map(one, seeds)
    best_idx = -1
    best_loss = np.inf
    for k, (loss, _) in enumerate(scored):
        if loss < best_loss:
            best_loss, best_idx = loss, k
    if best_idx < 0:
        raise InitializationError(
            f"all {config.beta} restart draws were infeasible; widen the "
            "initialization ranges or revisit the constraint sets"
        )
    return scored[best_idx][1], best_loss


def train(
    config: TrainingConfig,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    constraint_sets: Sequence[ConstraintSet],
) -> FitResult:
    """Restart initialization followed by fixed-step gradient descent."""
    params, init_loss = initialize_stage(config, spec, dataset, constraint_sets)
    theta = params.copy()
    history = np.empty(config.epochs)
    residuals = np.empty(config.epochs)
    best_loss = np.inf
    best_params = theta.copy()
    best_epoch = 0

    for epoch in range(config.epochs):
        try:
            loss, grads, violation = loss_and_gradient(
                theta, spec, dataset, constraint_sets,
                config.lambda_w, config.cost_mode, config.solver,
            )
        except DegenerateGradientError:
            if not config.fd_fallback:
                raise
            loss = total_loss(
                theta, spec, dataset, constraint_sets,
                config.lambda_w, config.cost_mode, config.solver,
            )
            grads = fd_gradient(
                theta, spec, dataset, constraint_sets,
                config.lambda_w, config.cost_mode, config.solver,
            )
            violation = np.nan
        if not np.isfinite(loss):
            raise TrainingAbortedError(
                f"loss became non-finite at epoch {epoch}", epoch=epoch
            )
        history[epoch] = loss
        residuals[epoch] = violation
        if loss < best_loss:
            best_loss = loss
            best_params = theta.copy()
            best_epoch = epoch
        step = config.learning_rate
        if step > 0.0 and grads is not None:
            theta = unpack(pack(theta) - step * pack(grads), theta)

    solutions: dict[int, QpSolution] = {}
    trajectories: dict[int, np.ndarray] = {}
    for cs in constraint_sets:
        yhat, sol = evaluate_with_solution(
            best_params, spec, dataset, cs,
            config.lambda_w, config.cost_mode, config.solver,
        )
        solutions[cs.index] = sol
        trajectories[cs.index] = yhat

    return FitResult(
        params_star=best_params,
        loss_history=history,
        residual_history=residuals,
        init_loss=init_loss,
        best_epoch=best_epoch,
        per_constraint_solutions=solutions,
        trajectories=trajectories,
    )

"""Fixed analytic basis families and the two-parameter sweep study.

Three families are supported:

* ``fourier_toy``:  [t, sin(theta1 t), cos(theta2 t)]
* ``gaussian_toy``: [exp((0.25 - t^2) / (2 theta1)), exp((0.75 - t^2) / (2 theta2))]
* ``poly_trig``:    [t, t^2, sin(k1 t), cos(k1 t), sin(k2 t), cos(k2 t), ...]

The leading constant column is supplied by design assembly, not here. Note
the gaussian_toy exponent is (0.25 - t^2), not a squared offset; the family
is implemented exactly as written, which makes the two columns exactly
proportional whenever theta1 = theta2 (the rank collapse the sweep must
flag).

``sweep`` grids (theta1, theta2) with the fixed rules theta = 0.01 + 0.799 k
(fourier) or theta = 0.1 + 0.07 k (gaussian), k = 0..9, solves the
constrained fit per cell, and records the reproduction MSE or a failure
status per cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .assembly import ConstraintSet, TrajectoryDataset, assemble_design
from .errors import CeqlnError, ConfigurationError, InfeasibleConstraintsError
from .network import BasisEvaluations
from .qp import (
    RANK_COLLAPSE_RTOL,
    SolverOptions,
    build_cost,
    kkt_condition,
    solve,
)
from .training import _build_problem, _trajectory
from .util import format_float, ordered_map

Family = Literal["fourier_toy", "gaussian_toy", "poly_trig"]

FOURIER_GRID_RULE = "0.01 + 0.799k"
GAUSSIAN_GRID_RULE = "0.1 + 0.07k"


@dataclass(frozen=True)
class FixedBasisSpec:
    family: Family
    parameters: tuple[float, ...]

    def __post_init__(self):
        if self.family in ("fourier_toy", "gaussian_toy"):
            if len(self.parameters) != 2:
                raise ConfigurationError(f"{self.family} takes exactly two parameters")
            if self.family == "gaussian_toy" and min(self.parameters) <= 0:
                raise ConfigurationError("gaussian_toy widths must be positive")
        elif self.family == "poly_trig":
            if not self.parameters:
                raise ConfigurationError("poly_trig needs at least one frequency")
        else:
            raise ConfigurationError(f"unknown family {self.family!r}")

    @property
    def n_basis(self) -> int:
        if self.family == "fourier_toy":
            return 3
        if self.family == "gaussian_toy":
            return 2
        return 2 + 2 * len(self.parameters)


def evaluate_fixed(spec: FixedBasisSpec, times: np.ndarray) -> BasisEvaluations:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if spec.family == "fourier_toy":
        th1, th2 = spec.parameters
        rows = np.vstack([t, np.sin(th1 * t), np.cos(th2 * t)])
    elif spec.family == "gaussian_toy":
        th1, th2 = spec.parameters
        rows = np.vstack(
            [np.exp((0.25 - t**2) / (2.0 * th1)), np.exp((0.75 - t**2) / (2.0 * th2))]
        )
    else:
        parts = [t, t**2]
        for k in spec.parameters:
            parts.append(np.sin(k * t))
            parts.append(np.cos(k * t))
        rows = np.vstack(parts)
    return BasisEvaluations(values=rows, times=t)


def grid_values(family: Family) -> np.ndarray:
    if family == "fourier_toy":
        return 0.01 + 0.799 * np.arange(10)
    if family == "gaussian_toy":
        return 0.1 + 0.07 * np.arange(10)
    raise ConfigurationError(f"no sweep grid rule for family {family!r}")


@dataclass
class SweepCell:
    theta1: float
    theta2: float
    mse: float  # NaN when not solved
    status: str  # "ok" | "infeasible" | "ill_conditioned"
    eq_residual: float  # max |A w - y| over equality rows (NaN when not solved)


def _evaluate_cell(
    spec: FixedBasisSpec,
    dataset: TrajectoryDataset,
    cs: ConstraintSet,
    lambda_w: float,
    options: SolverOptions,
    condition_limit: float,
) -> SweepCell:
    th1, th2 = spec.parameters
    Phi = assemble_design(evaluate_fixed(spec, dataset.times))
    eq_rows = (
        assemble_design(evaluate_fixed(spec, np.array([e.t for e in cs.equalities])))
        if cs.equalities
        else np.zeros((0, Phi.shape[1]))
    )
    ineq_rows = (
        assemble_design(evaluate_fixed(spec, np.array([q.t for q in cs.inequalities])))
        if cs.inequalities
        else np.zeros((0, Phi.shape[1]))
    )

    # Numerical rank collapse of the basis itself (exactly collinear columns)
    # is flagged before the regularized QP can paper over it.
    sv = np.linalg.svd(np.vstack([Phi, eq_rows, ineq_rows]), compute_uv=False)
    if sv[-1] <= sv[0] * RANK_COLLAPSE_RTOL:
        return SweepCell(th1, th2, np.nan, "ill_conditioned", np.nan)

    P, q, _ = build_cost(Phi, dataset.targets, lambda_w)
    qp = _build_problem(Phi, P, q, eq_rows, ineq_rows, cs, dataset.n_dims)
    if kkt_condition(P, qp.A_eq) > condition_limit:
        return SweepCell(th1, th2, np.nan, "ill_conditioned", np.nan)
    try:
        sol = solve(qp, options)
    except InfeasibleConstraintsError:
        return SweepCell(th1, th2, np.nan, "infeasible", np.nan)
    except CeqlnError:
        return SweepCell(th1, th2, np.nan, "ill_conditioned", np.nan)
    yhat = _trajectory(Phi, sol.w, dataset.n_dims)
    mse = float(np.mean((yhat - dataset.targets) ** 2))
    eq_res = (
        float(np.abs(qp.A_eq @ sol.w - qp.b_eq).max(initial=0.0)) if cs.equalities else 0.0
    )
    return SweepCell(th1, th2, mse, "ok", eq_res)


def sweep(
    dataset: TrajectoryDataset,
    cs: ConstraintSet,
    family: Family,
    lambda_w: float = 0.01,
    options: SolverOptions | None = None,
) -> list[SweepCell]:
    """Full 10x10 (theta1, theta2) product grid for the given family."""
    options = options or SolverOptions()
    thetas = grid_values(family)
    pairs = [(t1, t2) for t1 in thetas for t2 in thetas]

    def one(pair: tuple[float, float]) -> SweepCell:
        return _evaluate_cell(
            FixedBasisSpec(family, pair), dataset, cs, lambda_w, options,
            options.condition_limit,
        )

    return ordered_map(one, pairs)


def write_sweep_csv(path, cells: Sequence[SweepCell]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["theta1", "theta2", "mse", "status"])
        for cell in cells:
            writer.writerow(
                [
                    format_float(cell.theta1),
                    format_float(cell.theta2),
                    "" if np.isnan(cell.mse) else format_float(cell.mse),
                    cell.status,
                ]
            )

"""Re-solving the constrained fit for new constraint sets with frozen
network parameters.

The quadratic cost depends only on the basis and the data, not on the
constraints, so an adapter built once per (parameters, dataset) pair caches
the design matrix and the assembled (P, q); each adaptation only evaluates
the basis at the new constraint times and re-solves the QP.
"""

from __future__ import annotations

import numpy as np

from .assembly import ConstraintSet, TrajectoryDataset
from .errors import CeqlnError
from .network import NetworkParams, NetworkSpec
from .qp import CostMode, QpSolution, SolverOptions, build_cost, solve
from .training import _build_problem, _design_rows, _trajectory


class TrajectoryAdapter:
    """Holds frozen parameters plus cached constraint-independent factors."""

    def __init__(
        self,
        params: NetworkParams,
        spec: NetworkSpec,
        dataset: TrajectoryDataset,
        lambda_w: float,
        cost_mode: CostMode = "paper",
        options: SolverOptions | None = None,
    ):
        self.params = params
        self.spec = spec
        self.dataset = dataset
        self.lambda_w = lambda_w
        self.cost_mode: CostMode = cost_mode
        self.options = options or SolverOptions()
        self._Phi = _design_rows(params, spec, dataset.times)
        self._P, self._q, _ = build_cost(self._Phi, dataset.targets, lambda_w, cost_mode)

    def adapt(self, cs: ConstraintSet) -> tuple[np.ndarray, QpSolution]:
        """Solve for the given constraint set; parameters are never touched."""
        cs.validate_domain(self.dataset.times[0], self.dataset.times[-1])
        eq_rows = _design_rows(self.params, self.spec, np.array([e.t for e in cs.equalities]))
        ineq_rows = _design_rows(
            self.params, self.spec, np.array([q.t for q in cs.inequalities])
        )
        qp = _build_problem(
            self._Phi, self._P, self._q, eq_rows, ineq_rows, cs, self.dataset.n_dims
        )
        try:
            sol = solve(qp, self.options)
        except CeqlnError as exc:
            exc.details.setdefault("constraint_set", cs.index)
            raise
        return _trajectory(self._Phi, sol.w, self.dataset.n_dims), sol


def adapt(
    params: NetworkParams,
    spec: NetworkSpec,
    dataset: TrajectoryDataset,
    new_cs: ConstraintSet,
    lambda_w: float,
    cost_mode: CostMode = "paper",
    options: SolverOptions | None = None,
) -> tuple[np.ndarray, QpSolution]:
    """One-shot adaptation; see :class:`TrajectoryAdapter` for batched use."""
    adapter = TrajectoryAdapter(params, spec, dataset, lambda_w, cost_mode, options)
    return adapter.adapt(new_cs)

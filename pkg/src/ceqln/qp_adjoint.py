"""Reverse-mode differentiation through the constrained QP solution.

At a solution with a fixed active set, (w, nu) satisfies the KKT system

    [[P, A'], [A, 0]] [w; nu] = [-q; b],

where A stacks the equality rows and the active inequality rows. Treating
the active set as locally constant, the pullback of a loss cotangent dL/dw
solves the (symmetric) system

    [[P, A'], [A, 0]] [dw; dnu] = [dL/dw; 0]

and maps to parameter cotangents with the bilinear rules

    dP = -1/2 (dw w' + w dw'),   dq = -dw,
    dA = -(nu dw' + dnu w'),     db = dnu.

This is exact where strict complementarity holds; active rows whose
multiplier is within ``degeneracy_tol`` of zero raise a DegeneracyWarning
and are kept active.

``chain_to_design`` continues the chain through the cost construction
(G = Phi'Phi, c_d = Phi'y_d, P, q) and the constraint-row placement, landing
on cotangents for the basis evaluations at data, equality, and inequality
times.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyWarning, DegenerateGradientError
from .qp import CostMode, QpProblem, QpSolution, SolverOptions, _SingularKkt, _solve_kkt


@dataclass
class QpCotangents:
    """Cotangents on the pieces of a solved QP."""

    dP: np.ndarray  # (n, n), symmetric
    dq: np.ndarray  # (n,)
    dA_eq: np.ndarray  # (p, n)
    db_eq: np.ndarray  # (p,)
    dA_ineq: np.ndarray  # (m, n), nonzero only on active rows
    dbounds: np.ndarray  # (m,), cotangent on the active-side bound value


def solution_pullback(
    qp: QpProblem,
    sol: QpSolution,
    dL_dw: np.ndarray,
    options: SolverOptions | None = None,
) -> QpCotangents:
    """Map a cotangent on w* to cotangents on (P, q, A_eq, b_eq, A_ineq, bounds)."""
    options = options or SolverOptions()
    dL_dw = np.asarray(dL_dw, dtype=float)
    n = qp.n_vars
    p = qp.A_eq.shape[0]
    m = qp.A_ineq.shape[0]

    for entry in sol.active:
        if abs(entry.multiplier) < options.degeneracy_tol:
            warnings.warn(
                f"active row {entry.row} ({entry.side}) has a near-zero multiplier "
                f"({entry.multiplier:.3e}); gradient is one-sided at this kink",
                DegeneracyWarning,
                stacklevel=2,
            )

    act_rows = sol.active_rows
    A = np.vstack([qp.A_eq] + [qp.A_ineq[r : r + 1] for r in act_rows]) if (
        p or act_rows
    ) else np.zeros((0, n))
    nu_all = np.concatenate(
        [sol.eq_multipliers, np.array([e.multiplier for e in sol.active])]
    )

    try:
        dw, dnu = _solve_kkt(qp.P, -dL_dw, A, np.zeros(A.shape[0]), options)
    except _SingularKkt as exc:
        raise DegenerateGradientError(
            "transposed KKT system is singular; cannot differentiate at this "
            "active set"
        ) from exc

    dP = -0.5 * (np.outer(dw, sol.w) + np.outer(sol.w, dw))
    dq = -dw
    dA_all = -(np.outer(nu_all, dw) + np.outer(dnu, sol.w))
    db_all = dnu

    dA_eq = dA_all[:p]
    db_eq = db_all[:p]
    dA_ineq = np.zeros((m, n))
    dbounds = np.zeros(m)
    for k, entry in enumerate(sol.active):
        dA_ineq[entry.row] += dA_all[p + k]
        dbounds[entry.row] += db_all[p + k]
    return QpCotangents(dP=dP, dq=dq, dA_eq=dA_eq, db_eq=db_eq, dA_ineq=dA_ineq, dbounds=dbounds)


@dataclass
class DesignCotangents:
    """Cotangents on the basis evaluations feeding the three design blocks."""

    d_basis_data: np.ndarray  # (M-1, N)
    d_basis_eq: np.ndarray  # (M-1, P)
    d_basis_ineq: np.ndarray  # (M-1, Q)


def chain_to_design(
    cot: QpCotangents,
    Phi: np.ndarray,
    targets: np.ndarray,
    lambda_w: float,
    eq_dims: np.ndarray,
    ineq_dims: np.ndarray,
    mode: CostMode = "paper",
) -> DesignCotangents:
    """Continue the pullback through cost assembly and row placement.

    ``eq_dims`` / ``ineq_dims`` name the dimension block each constraint row
    was placed in. The returned arrays drop the ones column (its cotangent
    feeds nothing learnable).
    """
    Phi = np.asarray(Phi, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_dims, m = targets.shape[0], Phi.shape[1]

    # Adjoint of P, q construction. Only the diagonal blocks of P are
    # structurally present, so off-block entries of dP are ignored.
    G = Phi.T @ Phi
    dG = np.zeros((m, m))
    dPhi = np.zeros_like(Phi)
    for d in range(n_dims):
        sl = slice(d * m, (d + 1) * m)
        dP_d = cot.dP[sl, sl]
        dq_d = cot.dq[sl]
        c_d = Phi.T @ targets[d]
        if mode == "paper":
            # P_d = 2 G G + 2 lambda I, q_d = -2 G c_d
            dG += 2.0 * (dP_d @ G + G @ dP_d)
            dG += -2.0 * np.outer(dq_d, c_d)
            dc_d = -2.0 * (G @ dq_d)
        else:
            # P_d = 2 G + 2 lambda I, q_d = -2 c_d
            dG += 2.0 * 0.5 * (dP_d + dP_d.T)
            dc_d = -2.0 * dq_d
        dPhi += np.outer(targets[d], dc_d)
    dPhi += Phi @ (dG + dG.T)

    # Adjoint of constraint-row placement: row k of dA lands on the design
    # row at that constraint's time, in its dimension block.
    def rows_back(dA: np.ndarray, dims: np.ndarray) -> np.ndarray:
        out = np.zeros((dA.shape[0], m))
        for k, d in enumerate(np.asarray(dims, dtype=int)):
            out[k] = dA[k, d * m : (d + 1) * m]
        return out

    d_rows_eq = rows_back(cot.dA_eq, eq_dims) if cot.dA_eq.shape[0] else np.zeros((0, m))
    d_rows_ineq = (
        rows_back(cot.dA_ineq, ineq_dims) if cot.dA_ineq.shape[0] else np.zeros((0, m))
    )

    return DesignCotangents(
        d_basis_data=dPhi[:, 1:].T.copy(),
        d_basis_eq=d_rows_eq[:, 1:].T.copy(),
        d_basis_ineq=d_rows_ineq[:, 1:].T.copy(),
    )

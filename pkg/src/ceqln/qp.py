"""Quadratic cost construction and the constrained QP solver.

The fit minimizes 1/2 w'Pw + q'w subject to pinned values (equalities) and
box bounds on selected samples (inequalities). The default cost follows the
Gram-squared construction: with G = Phi'Phi and c = Phi'y per dimension,
M = blkdiag(G, ..., G), c = [c_1; ...; c_D],

    P = 2 M'M + 2 lambda_w I,    q = -2 M'c.

A ``direct`` mode (P = 2M + 2 lambda_w I, q = -2c, i.e. plain ridge least
squares) is available behind a flag; both share the unconstrained minimizer
when lambda_w = 0 and G is nonsingular.

KKT systems are solved dense with a Bunch-Kaufman LDL' factorization,
objective scaling, constraint-row equilibration, and fixed-precision
iterative refinement. Inequalities are handled by a primal active-set
iteration: start from the equality-only solution, add the most violated
bound as an equality, drop active rows whose multiplier has the wrong sign,
repeat until the KKT conditions hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy.linalg import get_lapack_funcs
from scipy.optimize import linprog

from .errors import (
    ConfigurationError,
    IllConditionedError,
    InfeasibleConstraintsError,
    NonconvergenceError,
    RedundantConstraintsError,
)
from .util import format_float

CostMode = Literal["paper", "direct"]

#: Relative singular-value floor below which a matrix counts as rank collapsed.
RANK_COLLAPSE_RTOL = 1e-13


@dataclass(frozen=True)
class SolverOptions:
    eq_tol: float = 1e-8
    ineq_tol: float = 1e-8
    sign_tol: float = 1e-10
    degeneracy_tol: float = 1e-10
    max_iter_factor: int = 50
    refine_steps: int = 2
    condition_limit: float = 1e12


@dataclass
class QpProblem:
    P: np.ndarray  # (n, n) symmetric PSD
    q: np.ndarray  # (n,)
    A_eq: np.ndarray  # (p, n)
    b_eq: np.ndarray  # (p,)
    A_ineq: np.ndarray  # (m, n)
    lb: np.ndarray  # (m,)
    ub: np.ndarray  # (m,)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ConfigurationError(f"P shape {self.P.shape} does not match q length {n}")
        skew = np.abs(self.P - self.P.T).max(initial=0.0)
        if skew > 1e-12 * max(1.0, np.abs(self.P).max(initial=0.0)):
            raise ConfigurationError(f"P is not symmetric (max asymmetry {skew:.3e})")
        for name in ("A_eq", "A_ineq"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(-1, n)
            setattr(self, name, a)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise ConfigurationError("A_eq and b_eq row counts differ")
        if not (self.A_ineq.shape[0] == self.lb.shape[0] == self.ub.shape[0]):
            raise ConfigurationError("A_ineq, lb, ub row counts differ")
        if np.any(self.lb > self.ub):
            raise ConfigurationError("some inequality rows have lower > upper")

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class ActiveBound:
    row: int
    side: Literal["lower", "upper"]
    multiplier: float


@dataclass
class QpSolution:
    w: np.ndarray
    eq_multipliers: np.ndarray
    active: list[ActiveBound]
    objective: float

    def ineq_multipliers(self, n_rows: int) -> np.ndarray:
        """Signed multiplier per inequality row; zero when inactive."""
        out = np.zeros(n_rows)
        for entry in self.active:
            out[entry.row] = entry.multiplier
        return out

    @property
    def active_rows(self) -> list[int]:
        return [entry.row for entry in self.active]


def build_cost(
    Phi: np.ndarray,
    targets: np.ndarray,
    lambda_w: float,
    mode: CostMode = "paper",
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Assemble (P, q) for the stacked D-dimensional weight vector.

    Returns the per-dimension data vectors c_d as the third element; they are
    reused by the cost adjoint.
    """
    if lambda_w < 0:
        raise ConfigurationError("lambda_w must be nonnegative")
    Phi = np.asarray(Phi, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_dims, m = targets.shape[0], Phi.shape[1]
    G = Phi.T @ Phi
    c_blocks = [Phi.T @ targets[d] for d in range(n_dims)]
    if mode == "paper":
        P_block = 2.0 * (G @ G) + 2.0 * lambda_w * np.eye(m)
        q_blocks = [-2.0 * (G @ c) for c in c_blocks]
    elif mode == "direct":
        P_block = 2.0 * G + 2.0 * lambda_w * np.eye(m)
        q_blocks = [-2.0 * c for c in c_blocks]
    else:
        raise ConfigurationError(f"unknown cost mode {mode!r}")
    P_block = 0.5 * (P_block + P_block.T)
    P = np.zeros((n_dims * m, n_dims * m))
    for d in range(n_dims):
        P[d * m : (d + 1) * m, d * m : (d + 1) * m] = P_block
    q = np.concatenate(q_blocks)
    return P, q, c_blocks


class _SingularKkt(Exception):
    pass


def _kkt_pieces(P: np.ndarray, A: np.ndarray):
    """Objective scale and per-row equilibration used by every KKT solve."""
    s_obj = max(1.0, np.abs(P).max(initial=0.0))
    if A.shape[0]:
        row_scale = np.maximum(1.0, np.abs(A).max(axis=1))
    else:
        row_scale = np.zeros(0)
    return s_obj, row_scale


def _build_kkt(P: np.ndarray, A: np.ndarray) -> np.ndarray:
    n, p = P.shape[0], A.shape[0]
    s_obj, row_scale = _kkt_pieces(P, A)
    A_s = A / row_scale[:, None] if p else A
    K = np.zeros((n + p, n + p))
    K[:n, :n] = P / s_obj
    if p:
        K[:n, n:] = A_s.T
        K[n:, :n] = A_s
    return K


def kkt_condition(P: np.ndarray, A: np.ndarray) -> float:
    """2-norm condition estimate of the scaled KKT matrix."""
    K = _build_kkt(P, np.asarray(A, dtype=float).reshape(-1, P.shape[0]))
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] == 0.0:
        return np.inf
    return float(sv[0] / sv[-1])


def _solve_kkt(
    P: np.ndarray,
    q: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    options: SolverOptions,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve [[P, A'], [A, 0]] [w; nu] = [-q; b] by LDL' with refinement.

    Raises the internal ``_SingularKkt`` when the factorization reports a
    singular pivot block; callers translate that into a diagnosed error.
    """
    n, p = P.shape[0], A.shape[0]
    s_obj, row_scale = _kkt_pieces(P, A)
    K = _build_kkt(P, A)
    rhs = np.concatenate([-q / s_obj, b / row_scale if p else b])

    sytrf, sytrs = get_lapack_funcs(("sytrf", "sytrs"), (K,))
    ldu, ipiv, info = sytrf(K, lower=1)
    if info != 0:
        raise _SingularKkt(info)
    x, info = sytrs(ldu, ipiv, rhs, lower=1)
    if info != 0:
        raise _SingularKkt(info)
    norm_K = np.abs(K).max(initial=0.0)
    for _ in range(max(0, options.refine_steps)):
        r = rhs - K @ x
        if np.abs(r).max(initial=0.0) <= 1e-15 * (
            norm_K * np.abs(x).max(initial=0.0) + np.abs(rhs).max(initial=0.0)
        ):
            break
        dx, info = sytrs(ldu, ipiv, r, lower=1)
        if info != 0:
            break
        x = x + dx
    w = x[:n]
    nu = s_obj * (x[n:] / row_scale) if p else np.zeros(0)
    return w, nu


def _drop_duplicate_rows(
    A: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eliminate exact duplicate (row, rhs) pairs, keeping first occurrences.

    Also returns the kept indices so multipliers can be scattered back to
    the caller's row numbering (dropped duplicates carry zero).
    """
    if A.shape[0] <= 1:
        return A, b, np.arange(A.shape[0])
    seen: set[bytes] = set()
    keep: list[int] = []
    for i in range(A.shape[0]):
        key = A[i].tobytes() + b[i : i + 1].tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    idx = np.array(keep, dtype=int)
    return A[idx], b[idx], idx


def _diagnose_equalities(P: np.ndarray, A: np.ndarray, b: np.ndarray) -> None:
    """Raise the most informative error for a failed equality-KKT solve."""
    if A.shape[0]:
        sv = np.linalg.svd(A, compute_uv=False)
        tol = sv[0] * max(A.shape) * np.finfo(float).eps if sv.size else 0.0
        rank = int(np.sum(sv > tol))
        if rank < A.shape[0]:
            lsq = np.linalg.lstsq(A, b, rcond=None)[0]
            gap = np.abs(A @ lsq - b).max(initial=0.0)
            if gap > 1e-8 * max(1.0, np.abs(b).max(initial=0.0)):
                raise InfeasibleConstraintsError(
                    f"equality rows are inconsistent (rank {rank} of {A.shape[0]}, "
                    f"residual {gap:.3e})",
                    kind="inconsistent_rows",
                )
            raise RedundantConstraintsError(
                f"equality rows are redundant (rank {rank} of {A.shape[0]})"
            )
    cond = kkt_condition(P, A)
    raise IllConditionedError(
        f"KKT system is singular or ill conditioned (condition estimate {cond:.3e})",
        condition=cond,
    )


def solve_equality(
    P: np.ndarray,
    q: np.ndarray,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    options: SolverOptions | None = None,
) -> QpSolution:
    """Solve the equality-constrained QP via its KKT linear system."""
    options = options or SolverOptions()
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A_eq, dtype=float).reshape(-1, P.shape[0])
    b = np.asarray(b_eq, dtype=float).reshape(-1)
    A, b = _drop_duplicate_rows(A, b)
    try:
        w, nu = _solve_kkt(P, q, A, b, options)
    except _SingularKkt:
        _diagnose_equalities(P, A, b)
        raise  # unreachable: diagnosis always raises
    if A.shape[0]:
        resid = np.abs(A @ w - b).max(initial=0.0)
        if resid > options.eq_tol * max(1.0, np.abs(b).max(initial=0.0)):
            _diagnose_equalities(P, A, b)
    objective = float(0.5 * w @ P @ w + q @ w)
    return QpSolution(w=w, eq_multipliers=nu, active=[], objective=objective)


def _phase_one(qp: QpProblem, tol: float) -> np.ndarray | None:
    """LP feasibility: a point satisfying all constraints (to ``tol``), or
    None when no such point exists."""
    n, m = qp.n_vars, qp.A_ineq.shape[0]
    A_ub, b_ub = [], []
    for i in range(m):
        if np.isfinite(qp.ub[i]):
            A_ub.append(np.concatenate([qp.A_ineq[i], [-1.0]]))
            b_ub.append(qp.ub[i])
        if np.isfinite(qp.lb[i]):
            A_ub.append(np.concatenate([-qp.A_ineq[i], [-1.0]]))
            b_ub.append(-qp.lb[i])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_eq = None
    b_eq = None
    if qp.A_eq.shape[0]:
        A_eq = np.hstack([qp.A_eq, np.zeros((qp.A_eq.shape[0], 1))])
        b_eq = qp.b_eq
    res = linprog(
        c,
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=[(None, None)] * n + [(0.0, None)],
        method="highs",
    )
    if res.status == 2:  # LP itself infeasible: equalities conflict
        return None
    if not res.success:
        raise NonconvergenceError("phase-one feasibility LP did not converge")
    if res.fun > tol:
        return None
    return np.asarray(res.x[:n], dtype=float)


def _line_search_solve(
    qp: QpProblem,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    w0: np.ndarray,
    options: SolverOptions,
) -> QpSolution:
    """Feasible-point primal active-set iteration with step clipping.

    Safeguard path for problems where the jump iteration cycles: each round
    solves for a step keeping the working set fixed, clips it at the first
    blocking bound (adding that bound), and drops a wrong-signed row when no
    step remains. Terminates on nondegenerate problems.
    """
    m = qp.A_ineq.shape[0]
    p_eq = A_eq.shape[0]
    w = w0.copy()
    vals = qp.A_ineq @ w
    active: list[tuple[int, str]] = []
    for r in range(m):
        if np.isfinite(qp.lb[r]) and abs(vals[r] - qp.lb[r]) <= options.ineq_tol:
            active.append((r, "lower"))
        elif np.isfinite(qp.ub[r]) and abs(vals[r] - qp.ub[r]) <= options.ineq_tol:
            active.append((r, "upper"))

    max_iter = max(100 * (m + 1), 50)
    for _ in range(max_iter):
        A_act = (
            np.vstack([A_eq] + [qp.A_ineq[r : r + 1] for r, _ in active])
            if active
            else A_eq
        )
        grad = qp.P @ w + qp.q
        try:
            d, nu = _solve_kkt(qp.P, grad, A_act, np.zeros(A_act.shape[0]), options)
        except _SingularKkt:
            if active:
                active.pop()
                continue
            _diagnose_equalities(qp.P, A_eq, b_eq)
        step_scale = max(1.0, np.abs(w).max(initial=0.0))
        if np.abs(d).max(initial=0.0) <= 1e-12 * step_scale:
            nu_act = nu[p_eq:]
            wrong = []
            for k, (r, side) in enumerate(active):
                lam = nu_act[k]
                if side == "upper" and lam < -options.sign_tol:
                    wrong.append((abs(lam), r, k))
                elif side == "lower" and lam > options.sign_tol:
                    wrong.append((abs(lam), r, k))
            if wrong:
                wrong.sort(key=lambda t: (-t[0], t[1]))
                del active[wrong[0][2]]
                continue
            entries = [
                ActiveBound(row=r, side=side, multiplier=float(nu_act[k]))
                for k, (r, side) in enumerate(active)
            ]
            objective = float(0.5 * w @ qp.P @ w + qp.q @ w)
            return QpSolution(
                w=w, eq_multipliers=nu[:p_eq], active=entries, objective=objective
            )
        # clip the step at the first blocking bound
        alpha = 1.0
        blocker: tuple[int, str] | None = None
        move = qp.A_ineq @ d
        vals = qp.A_ineq @ w
        for r in range(m):
            if (r, "upper") not in active and np.isfinite(qp.ub[r]) and move[r] > 1e-14:
                a_r = (qp.ub[r] - vals[r]) / move[r]
                if a_r < alpha:
                    alpha, blocker = max(a_r, 0.0), (r, "upper")
            if (r, "lower") not in active and np.isfinite(qp.lb[r]) and move[r] < -1e-14:
                a_r = (qp.lb[r] - vals[r]) / move[r]
                if a_r < alpha:
                    alpha, blocker = max(a_r, 0.0), (r, "lower")
        w = w + alpha * d
        if blocker is not None:
            active.append(blocker)
    raise NonconvergenceError(
        f"safeguarded active-set iteration cap ({max_iter}) exceeded"
    )


def solve(qp: QpProblem, options: SolverOptions | None = None) -> QpSolution:
    """Primal active-set solve of the full equality/inequality QP."""
    options = options or SolverOptions()
    m = qp.A_ineq.shape[0]
    if m == 0:
        return solve_equality(qp.P, qp.q, qp.A_eq, qp.b_eq, options)

    A_eq, b_eq = _drop_duplicate_rows(qp.A_eq, qp.b_eq)
    p_eq = A_eq.shape[0]
    active: list[tuple[int, str]] = []
    # Rows that proved linearly dependent on the current working set; a row
    # dependent on a set stays dependent when the set grows, so the ban is
    # cleared only when a row is dropped.
    banned: set[tuple[int, str]] = set()
    seen: set[frozenset] = set()
    max_iter = max(options.max_iter_factor * m, 20)

    for _ in range(max_iter):
        signature = frozenset(active)
        if signature in seen:
            break  # cycling: fall through to the safeguarded path
        seen.add(signature)
        bound_vals = np.array(
            [qp.lb[r] if side == "lower" else qp.ub[r] for r, side in active]
        )
        A_act = np.vstack([A_eq] + [qp.A_ineq[r : r + 1] for r, _ in active]) if active else A_eq
        b_act = np.concatenate([b_eq, bound_vals]) if active else b_eq
        try:
            w, nu = _solve_kkt(qp.P, qp.q, A_act, b_act, options)
            resid_ok = True
            if A_act.shape[0]:
                resid = np.abs(A_act @ w - b_act).max(initial=0.0)
                resid_ok = resid <= options.eq_tol * max(1.0, np.abs(b_act).max(initial=0.0))
        except _SingularKkt:
            resid_ok = False
        if not resid_ok:
            if not active:
                _diagnose_equalities(qp.P, A_eq, b_eq)
            # Last-added row made the working set dependent or inconsistent;
            # discard it and do not retry until the set shrinks.
            banned.add(active.pop())
            continue

        nu_eq, nu_act = nu[:p_eq], nu[p_eq:]

        # Most violated bound among rows not already active on that side.
        vals = qp.A_ineq @ w
        viol_low = qp.lb - vals
        viol_up = vals - qp.ub
        best = None  # (violation, row, side)
        for r in range(m):
            for side, v in (("lower", viol_low[r]), ("upper", viol_up[r])):
                if (r, side) in active or (r, side) in banned or not np.isfinite(v):
                    continue
                if v > options.ineq_tol and (best is None or v > best[0]):
                    best = (v, r, side)
        if best is not None:
            active.append((best[1], best[2]))
            continue

        # Feasible: check multiplier signs (upper-active needs nu >= 0,
        # lower-active needs nu <= 0 under P w + q + A' nu = 0).
        wrong = []
        for k, (r, side) in enumerate(active):
            lam = nu_act[k]
            if side == "upper" and lam < -options.sign_tol:
                wrong.append((abs(lam), r, k))
            elif side == "lower" and lam > options.sign_tol:
                wrong.append((abs(lam), r, k))
        if wrong:
            wrong.sort(key=lambda t: (-t[0], t[1]))
            del active[wrong[0][2]]
            banned.clear()
            continue

        # A banned row still violated means we stalled short of feasibility.
        worst = max(
            (max(viol_low[r], viol_up[r]) for r, _ in banned), default=-np.inf
        )
        if worst > options.ineq_tol:
            break

        entries = [
            ActiveBound(row=r, side=side, multiplier=float(nu_act[k]))
            for k, (r, side) in enumerate(active)
        ]
        objective = float(0.5 * w @ qp.P @ w + qp.q @ w)
        return QpSolution(w=w, eq_multipliers=nu_eq, active=entries, objective=objective)

    # The jump iteration cycled or ran out of budget: certify feasibility,
    # then fall back to the step-clipped iteration from a feasible point.
    w_feas = _phase_one(qp, tol=options.ineq_tol * 10)
    if w_feas is None:
        raise InfeasibleConstraintsError(
            "no point satisfies the constraint system", kind="no_point"
        )
    sol = _line_search_solve(qp, A_eq, b_eq, w_feas, options)
    return _polish(qp, A_eq, b_eq, sol, options)


def _polish(
    qp: QpProblem,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    sol: QpSolution,
    options: SolverOptions,
) -> QpSolution:
    """Re-solve the KKT system at the final active set to clean residuals.

    The line-search path inherits the phase-one LP's looser feasibility; one
    exact equality solve at the identified active set removes that. Falls
    back to the unpolished solution if polishing breaks an inactive bound.
    """
    if not sol.active:
        return sol
    rows = [qp.A_ineq[e.row : e.row + 1] for e in sol.active]
    bound_vals = np.array(
        [qp.lb[e.row] if e.side == "lower" else qp.ub[e.row] for e in sol.active]
    )
    A_act = np.vstack([A_eq] + rows)
    b_act = np.concatenate([b_eq, bound_vals])
    try:
        w, nu = _solve_kkt(qp.P, qp.q, A_act, b_act, options)
    except _SingularKkt:
        return sol
    vals = qp.A_ineq @ w
    if np.any(vals < qp.lb - options.ineq_tol) or np.any(vals > qp.ub + options.ineq_tol):
        return sol
    p_eq = A_eq.shape[0]
    entries = [
        ActiveBound(row=e.row, side=e.side, multiplier=float(nu[p_eq + k]))
        for k, e in enumerate(sol.active)
    ]
    objective = float(0.5 * w @ qp.P @ w + qp.q @ w)
    return QpSolution(w=w, eq_multipliers=nu[:p_eq], active=entries, objective=objective)


def solution_report(qp: QpProblem, sol: QpSolution) -> dict:
    """Debug dump of the problem and solution for offline inspection."""

    def arr(a: np.ndarray) -> list:
        a = np.asarray(a)
        if a.ndim == 1:
            return [format_float(x) for x in a]
        return [[format_float(x) for x in row] for row in a]

    return {
        "P": arr(qp.P),
        "q": arr(qp.q),
        "A_eq": arr(qp.A_eq),
        "b_eq": arr(qp.b_eq),
        "A_ineq": arr(qp.A_ineq),
        "lb": arr(qp.lb),
        "ub": arr(qp.ub),
        "w_star": arr(sol.w),
        "eq_multipliers": arr(sol.eq_multipliers),
        "active": [
            {"row": e.row, "side": e.side, "multiplier": format_float(e.multiplier)}
            for e in sol.active
        ],
        "objective": format_float(sol.objective),
    }

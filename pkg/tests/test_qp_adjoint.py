import numpy as np
import pytest

from ceqln.errors import DegeneracyWarning
from ceqln.qp import QpProblem, SolverOptions, build_cost, solve, solve_equality
from ceqln.qp_adjoint import chain_to_design, solution_pullback

from conftest import assert_grad_close, central_difference
from test_qp import problem


def test_unconstrained_reduces_to_linear_solve_adjoint(rng):
    n = 4
    B = rng.normal(size=(n, n))
    P = B.T @ B + np.eye(n)
    q = rng.normal(size=n)
    qp = problem(P, q)
    sol = solve(qp)
    dL = rng.normal(size=n)
    cot = solution_pullback(qp, sol, dL)
    np.testing.assert_allclose(cot.dq, -np.linalg.solve(P, dL), rtol=1e-10, atol=1e-12)


def test_equality_rhs_sensitivity_closed_form():
    # minimize ||w||^2 s.t. w1 + w2 = b has w = (b/2, b/2), so dw/db = (1/2, 1/2)
    b = 3.0
    qp = problem(2 * np.eye(2), [0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[b])
    sol = solve(qp)
    dL = np.array([0.7, -0.2])
    cot = solution_pullback(qp, sol, dL)
    assert cot.db_eq[0] == pytest.approx(0.5 * (dL[0] + dL[1]), abs=1e-12)


def test_zero_cotangent_gives_zero():
    qp = problem(2 * np.eye(2), [1.0, -1.0], A_eq=[[1.0, 0.0]], b_eq=[0.5])
    sol = solve(qp)
    cot = solution_pullback(qp, sol, np.zeros(2))
    for arr in (cot.dP, cot.dq, cot.dA_eq, cot.db_eq):
        np.testing.assert_array_equal(arr, 0.0)


def test_degenerate_multiplier_warns():
    # an active row carrying a (numerically) zero multiplier is kept active
    # but the pullback warns that the gradient is one-sided there
    from ceqln.qp import ActiveBound, QpSolution

    qp = problem(2 * np.eye(1), [0.0], A_ineq=[[1.0]], lb=[0.0], ub=[np.inf])
    sol = QpSolution(
        w=np.array([0.0]),
        eq_multipliers=np.zeros(0),
        active=[ActiveBound(row=0, side="lower", multiplier=-1e-13)],
        objective=0.0,
    )
    with pytest.warns(DegeneracyWarning):
        solution_pullback(qp, sol, np.array([1.0]))


def _fd_check_pullback(qp, sol, dL, rng, rel=1e-4, atol=1e-7):
    """Compare pullback cotangents against finite differences of L = dL . w*."""
    cot = solution_pullback(qp, sol, dL)

    def resolve(qp2):
        return float(dL @ solve(qp2).w)

    h = 1e-6
    # dq
    fd_dq = np.zeros_like(qp.q)
    for i in range(qp.q.size):
        qp_p = problem(qp.P, qp.q.copy(), qp.A_eq, qp.b_eq, qp.A_ineq, qp.lb, qp.ub)
        qp_p.q[i] += h
        qp_m = problem(qp.P, qp.q.copy(), qp.A_eq, qp.b_eq, qp.A_ineq, qp.lb, qp.ub)
        qp_m.q[i] -= h
        fd_dq[i] = (resolve(qp_p) - resolve(qp_m)) / (2 * h)
    assert_grad_close(cot.dq, fd_dq, rel=rel, abs_tol=atol)

    # dP (symmetric perturbations; compare against symmetrized cotangent)
    n = qp.n_vars
    fd_dP = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            qp_p = problem(qp.P + h * E, qp.q, qp.A_eq, qp.b_eq, qp.A_ineq, qp.lb, qp.ub)
            qp_m = problem(qp.P - h * E, qp.q, qp.A_eq, qp.b_eq, qp.A_ineq, qp.lb, qp.ub)
            d = (resolve(qp_p) - resolve(qp_m)) / (2 * h)
            # derivative against the symmetric direction E picks up both entries
            expected = cot.dP[i, j] + cot.dP[j, i] if i != j else cot.dP[i, i]
            assert abs(d - expected) <= atol + rel * max(abs(d), abs(expected))

    # db_eq
    for i in range(qp.b_eq.size):
        be_p = qp.b_eq.copy()
        be_p[i] += h
        be_m = qp.b_eq.copy()
        be_m[i] -= h
        d = (
            resolve(problem(qp.P, qp.q, qp.A_eq, be_p, qp.A_ineq, qp.lb, qp.ub))
            - resolve(problem(qp.P, qp.q, qp.A_eq, be_m, qp.A_ineq, qp.lb, qp.ub))
        ) / (2 * h)
        assert abs(d - cot.db_eq[i]) <= atol + rel * max(abs(d), abs(cot.db_eq[i]))

    # dA_eq
    for i in range(qp.A_eq.shape[0]):
        for j in range(n):
            Ae_p = qp.A_eq.copy()
            Ae_p[i, j] += h
            Ae_m = qp.A_eq.copy()
            Ae_m[i, j] -= h
            d = (
                resolve(problem(qp.P, qp.q, Ae_p, qp.b_eq, qp.A_ineq, qp.lb, qp.ub))
                - resolve(problem(qp.P, qp.q, Ae_m, qp.b_eq, qp.A_ineq, qp.lb, qp.ub))
            ) / (2 * h)
            assert abs(d - cot.dA_eq[i, j]) <= atol + rel * max(abs(d), abs(cot.dA_eq[i, j]))


def test_pullback_matches_finite_differences(rng):
    checked = 0
    attempts = 0
    while checked < 8 and attempts < 60:
        attempts += 1
        n = int(rng.integers(2, 5))
        B = rng.normal(size=(n, n))
        P = B.T @ B + np.eye(n)
        q = rng.normal(size=n)
        A_eq = rng.normal(size=(1, n))
        b_eq = rng.normal(size=1)
        A_ineq = rng.normal(size=(2, n))
        w0 = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0]
        mid = A_ineq @ w0
        lb = mid - rng.uniform(0.05, 1.5, size=2)
        ub = mid + rng.uniform(0.05, 1.5, size=2)
        qp = problem(P, q, A_eq, b_eq, A_ineq, lb, ub)
        sol = solve(qp)
        # screen for strict complementarity and comfortable slacks
        mults = [abs(e.multiplier) for e in sol.active]
        vals = qp.A_ineq @ sol.w
        slacks = []
        active_pairs = {(e.row, e.side) for e in sol.active}
        for r in range(2):
            if (r, "lower") not in active_pairs:
                slacks.append(vals[r] - lb[r])
            if (r, "upper") not in active_pairs:
                slacks.append(ub[r] - vals[r])
        if (mults and min(mults) < 1e-3) or (slacks and min(slacks) < 1e-3):
            continue
        dL = rng.normal(size=n)
        _fd_check_pullback(qp, sol, dL, rng)
        checked += 1
    assert checked >= 8


# -- cost-chain adjoint ----------------------------------------------------------


def test_chain_zero_cotangents():
    Phi = np.hstack([np.ones((5, 1)), np.linspace(0, 1, 5)[:, None]])
    targets = np.zeros((2, 5))
    from ceqln.qp_adjoint import QpCotangents

    cot = QpCotangents(
        dP=np.zeros((4, 4)), dq=np.zeros(4),
        dA_eq=np.zeros((1, 4)), db_eq=np.zeros(1),
        dA_ineq=np.zeros((0, 4)), dbounds=np.zeros(0),
    )
    des = chain_to_design(cot, Phi, targets, 0.1, eq_dims=np.array([0]), ineq_dims=np.array([]))
    np.testing.assert_array_equal(des.d_basis_data, 0.0)
    np.testing.assert_array_equal(des.d_basis_eq, 0.0)


@pytest.mark.parametrize("mode", ["paper", "direct"])
def test_chain_matches_finite_differences(rng, mode):
    """FD through build_cost + placement for L = <CP, P> + <Cq, q> + <CA, A_eq>."""
    n_pts, m, n_dims = 6, 3, 2
    basis = rng.normal(size=(m - 1, n_pts))
    targets = rng.normal(size=(n_dims, n_pts))
    lam = 0.2
    eq_times_vals = rng.normal(size=(m - 1, 2))  # basis values at 2 constraint times
    eq_dims = np.array([0, 1])

    CP = rng.normal(size=(n_dims * m, n_dims * m))
    CP = 0.5 * (CP + CP.T)
    Cq = rng.normal(size=n_dims * m)
    CA = rng.normal(size=(2, n_dims * m))

    from ceqln.assembly import assemble_design, place_rows
    from ceqln.qp_adjoint import QpCotangents

    def loss(basis_flat, eq_flat):
        vals = basis_flat.reshape(m - 1, n_pts)
        eqv = eq_flat.reshape(m - 1, 2)
        Phi = assemble_design(vals)
        P, q, _ = build_cost(Phi, targets, lam, mode)
        rows = assemble_design(eqv)
        A = place_rows(rows, eq_dims, n_dims)
        return float(np.sum(CP * P) + Cq @ q + np.sum(CA * A))

    Phi = assemble_design(basis)
    cot = QpCotangents(
        dP=CP, dq=Cq, dA_eq=CA, db_eq=np.zeros(2),
        dA_ineq=np.zeros((0, n_dims * m)), dbounds=np.zeros(0),
    )
    des = chain_to_design(cot, Phi, targets, lam, eq_dims, np.array([]), mode)

    fd_data = central_difference(
        lambda v: loss(v, eq_times_vals.ravel()), basis.ravel().copy()
    ).reshape(m - 1, n_pts)
    fd_eq = central_difference(
        lambda v: loss(basis.ravel(), v), eq_times_vals.ravel().copy()
    ).reshape(m - 1, 2)
    assert_grad_close(des.d_basis_data.ravel(), fd_data.ravel(), rel=1e-5, abs_tol=1e-7)
    assert_grad_close(des.d_basis_eq.ravel(), fd_eq.ravel(), rel=1e-5, abs_tol=1e-7)


def test_chain_d2_blocks_share_design(rng):
    """With D=2, per-block P cotangents both land in the shared design."""
    n_pts, m = 5, 3
    basis = rng.normal(size=(m - 1, n_pts))
    targets = rng.normal(size=(2, n_pts))
    from ceqln.assembly import assemble_design
    from ceqln.qp_adjoint import QpCotangents

    Phi = assemble_design(basis)
    block = rng.normal(size=(m, m))
    block = 0.5 * (block + block.T)
    zeros = np.zeros((m, m))

    def des_for(dP):
        cot = QpCotangents(
            dP=dP, dq=np.zeros(2 * m),
            dA_eq=np.zeros((0, 2 * m)), db_eq=np.zeros(0),
            dA_ineq=np.zeros((0, 2 * m)), dbounds=np.zeros(0),
        )
        return chain_to_design(cot, Phi, targets, 0.0, np.array([]), np.array([]))

    top = des_for(np.block([[block, zeros], [zeros, zeros]]))
    bottom = des_for(np.block([[zeros, zeros], [zeros, block]]))
    both = des_for(np.block([[block, zeros], [zeros, block]]))
    np.testing.assert_allclose(
        both.d_basis_data, top.d_basis_data + bottom.d_basis_data, rtol=1e-12
    )
    # identical targets per dim means identical per-block contributions
    # (the G-path is dim independent; only the c-path differs via targets)

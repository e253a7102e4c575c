import numpy as np
import pytest

from ceqln.assembly import (
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
from ceqln.errors import ConfigurationError, InfeasibleConstraintsError
from ceqln.network import BasisEvaluations


def make_design_at(m):
    """Deterministic toy design row: [1, t, t^2, ...] of width m."""

    def design_at(t):
        row = np.array([t**k for k in range(m)], dtype=float)
        row[0] = 1.0
        return row

    return design_at


def test_design_matrix_shape_and_ones():
    basis = BasisEvaluations(values=np.arange(6.0).reshape(2, 3), times=np.arange(3.0))
    Phi = assemble_design(basis)
    assert Phi.shape == (3, 3)
    np.testing.assert_array_equal(Phi[:, 0], 1.0)
    np.testing.assert_array_equal(Phi[:, 1:], basis.values.T)


def test_design_matrix_zero_basis():
    basis = BasisEvaluations(values=np.zeros((4, 2)), times=np.zeros(2))
    Phi = assemble_design(basis)
    np.testing.assert_array_equal(Phi, np.array([[1, 0, 0, 0, 0], [1, 0, 0, 0, 0]]))


def test_letter_layout_alternating_blocks():
    # rows ordered (t=0,x),(t=0,y),(t=1,x),(t=1,y): blocks alternate down the
    # two block-columns with the same design row repeated per time
    m = 4
    design_at = make_design_at(m)
    cs = ConstraintSet(
        index=1,
        equalities=[
            EqualityRow(0.0, 0, 45.0),
            EqualityRow(0.0, 1, -1.0),
            EqualityRow(1.0, 0, 32.0),
            EqualityRow(1.0, 1, 3.0),
        ],
    )
    A, y = assemble_equality(design_at, cs, n_dims=2, n_columns=m)
    assert A.shape == (4, 2 * m)
    np.testing.assert_array_equal(y, [45.0, -1.0, 32.0, 3.0])
    phi0, phi1 = design_at(0.0), design_at(1.0)
    np.testing.assert_array_equal(A[0, :m], phi0)
    np.testing.assert_array_equal(A[0, m:], 0.0)
    np.testing.assert_array_equal(A[1, m:], phi0)
    np.testing.assert_array_equal(A[1, :m], 0.0)
    np.testing.assert_array_equal(A[2, :m], phi1)
    np.testing.assert_array_equal(A[3, m:], phi1)


def test_cleaning_layout_endpoint_plus_window_rows():
    m, k = 5, 100
    design_at = make_design_at(m)
    window = np.linspace(0.2, 0.8, k)
    eqs = [EqualityRow(0.0, d, 0.1 * d) for d in range(3)]
    eqs += [EqualityRow(1.0, d, 0.1 * d) for d in range(3)]
    eqs += [EqualityRow(float(t), 2, 0.16) for t in window]
    cs = ConstraintSet(index=1, equalities=eqs)
    A, y = assemble_equality(design_at, cs, n_dims=3, n_columns=m)
    assert A.shape == (6 + k, 3 * m)
    # window rows live only in the z block
    np.testing.assert_array_equal(A[6:, : 2 * m], 0.0)
    for i, t in enumerate(window):
        np.testing.assert_array_equal(A[6 + i, 2 * m :], design_at(float(t)))


def test_pickplace_inequality_rows_and_bounds():
    m, k = 4, 80
    design_at = make_design_at(m)
    window = np.linspace(0.3, 0.65, k)
    ineqs = [InequalityRow(float(t), 0, lower=0.55) for t in window]
    ineqs += [InequalityRow(float(t), 2, lower=0.6) for t in window]
    cs = ConstraintSet(index=1, inequalities=ineqs)
    A, lb, ub = assemble_inequality(design_at, cs, n_dims=3, n_columns=m)
    assert A.shape == (2 * k, 3 * m)
    np.testing.assert_array_equal(lb[:k], 0.55)
    np.testing.assert_array_equal(lb[k:], 0.6)
    assert np.all(np.isposinf(ub))
    np.testing.assert_array_equal(A[:k, m:], 0.0)  # x rows only touch block 0
    np.testing.assert_array_equal(A[k:, : 2 * m], 0.0)  # z rows only block 2


def test_single_constraint_d1():
    design_at = make_design_at(3)
    cs = ConstraintSet(index=1, equalities=[EqualityRow(0.5, 0, 2.0)])
    A, y = assemble_equality(design_at, cs, n_dims=1, n_columns=3)
    np.testing.assert_array_equal(A, design_at(0.5)[np.newaxis, :])
    np.testing.assert_array_equal(y, [2.0])


def test_empty_inequalities_zero_rows():
    design_at = make_design_at(3)
    cs = ConstraintSet(index=1, equalities=[EqualityRow(0.0, 0, 1.0)])
    A, lb, ub = assemble_inequality(design_at, cs, n_dims=2, n_columns=3)
    assert A.shape == (0, 6)
    assert lb.shape == (0,) and ub.shape == (0,)


def test_box_row_d1_equals_design_row():
    design_at = make_design_at(3)
    cs = ConstraintSet(index=1, inequalities=[InequalityRow(0.3, 0, 0.0, 1.0)])
    A, lb, ub = assemble_inequality(design_at, cs, n_dims=1, n_columns=3)
    np.testing.assert_array_equal(A, design_at(0.3)[np.newaxis, :])
    np.testing.assert_array_equal(lb, [0.0])
    np.testing.assert_array_equal(ub, [1.0])


def test_block_placement_exactly_one_block(rng):
    design_at = make_design_at(4)
    eqs = [
        EqualityRow(float(t), int(d), float(v))
        for t, d, v in zip(rng.uniform(0, 1, 12), rng.integers(0, 3, 12), rng.normal(size=12))
    ]
    cs = ConstraintSet(index=1, equalities=eqs)
    A, y = assemble_equality(design_at, cs, n_dims=3, n_columns=4)
    for i, e in enumerate(eqs):
        for d in range(3):
            block = A[i, d * 4 : (d + 1) * 4]
            if d == e.dim:
                np.testing.assert_array_equal(block, design_at(e.t))
            else:
                np.testing.assert_array_equal(block, 0.0)


def test_row_order_follows_list_order(rng):
    design_at = make_design_at(3)
    eqs = [
        EqualityRow(float(t), int(d), float(v))
        for t, d, v in zip(rng.uniform(0, 1, 8), rng.integers(0, 2, 8), rng.normal(size=8))
    ]
    cs = ConstraintSet(index=1, equalities=eqs)
    A, y = assemble_equality(design_at, cs, n_dims=2, n_columns=3)
    perm = rng.permutation(8)
    cs_shuffled = ConstraintSet(index=1, equalities=[eqs[i] for i in perm])
    A2, y2 = assemble_equality(design_at, cs_shuffled, n_dims=2, n_columns=3)
    np.testing.assert_array_equal(A2, A[perm])
    np.testing.assert_array_equal(y2, y[perm])


def test_conflicting_duplicate_pins_rejected():
    design_at = make_design_at(3)
    cs = ConstraintSet(
        index=2,
        equalities=[EqualityRow(0.0, 0, 1.0), EqualityRow(0.0, 0, 2.0)],
    )
    with pytest.raises(InfeasibleConstraintsError) as err:
        assemble_equality(design_at, cs, n_dims=1, n_columns=3)
    assert err.value.details["constraint_set"] == 2


def test_dim_out_of_range_rejected():
    design_at = make_design_at(3)
    cs = ConstraintSet(index=1, equalities=[EqualityRow(0.0, 3, 1.0)])
    with pytest.raises(ConfigurationError):
        assemble_equality(design_at, cs, n_dims=2, n_columns=3)


def test_inverted_bounds_rejected():
    with pytest.raises(ConfigurationError):
        InequalityRow(0.0, 0, lower=1.0, upper=0.0)


# -- serialization -------------------------------------------------------------


def test_constraint_set_json_round_trip(tmp_path):
    cs = ConstraintSet(
        index=3,
        equalities=[EqualityRow(0.0, 0, 0.46), EqualityRow(1.0, 0, 0.31)],
        inequalities=[
            InequalityRow(0.3, 2, lower=0.6),
            InequalityRow(0.4, 0, upper=1.5),
            InequalityRow(0.5, 1, lower=-1.0, upper=1.0),
        ],
    )
    path = tmp_path / "cs.json"
    save_constraint_sets(path, [cs])
    text = path.read_text()
    assert '"inf"' in text and '"-inf"' in text
    (restored,) = load_constraint_sets(path)
    assert restored.index == 3
    assert restored.equalities == cs.equalities
    assert restored.inequalities == cs.inequalities


def test_dataset_csv_round_trip(tmp_path, rng):
    ds = TrajectoryDataset(
        times=np.sort(rng.uniform(0, 1, 20)),
        targets=rng.normal(size=(3, 20)),
    )
    path = tmp_path / "data.csv"
    ds.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,y0,y1,y2"
    back = TrajectoryDataset.read_csv(path)
    np.testing.assert_array_equal(back.times, ds.times)
    np.testing.assert_array_equal(back.targets, ds.targets)


def test_dataset_requires_sorted_times():
    with pytest.raises(ConfigurationError):
        TrajectoryDataset(times=np.array([0.2, 0.1]), targets=np.zeros((1, 2)))


def test_domain_validation():
    cs = ConstraintSet(index=1, equalities=[EqualityRow(1.5, 0, 0.0)])
    with pytest.raises(ConfigurationError, match="outside model domain"):
        cs.validate_domain(0.0, 1.0)

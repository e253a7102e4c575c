"""Design-matrix and constraint-matrix assembly for D-dimensional targets.

The fitted model for each target dimension d is y_d(t) = w_d . [1, basis(t)],
so the weight vector for a D-dimensional problem stacks D blocks of width M
(M = 1 + number of basis functions). Constraint rows are per (time,
dimension): each row places the design row [1, basis(t)] in its dimension's
block and zeros elsewhere, which reproduces the block layouts used by all
the tasks (endpoint pinning, single-axis contact windows, plane bounds).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InfeasibleConstraintsError
from .network import BasisEvaluations
from .util import format_float


@dataclass
class TrajectoryDataset:
    """Paired time vector and D-dimensional targets."""

    times: np.ndarray  # (N,)
    targets: np.ndarray  # (D, N)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.times.ndim != 1:
            raise ConfigurationError("times must be one-dimensional")
        if self.targets.shape[1] != self.times.shape[0]:
            raise ConfigurationError(
                f"targets have {self.targets.shape[1]} samples but times has {self.times.shape[0]}"
            )
        if np.any(np.diff(self.times) < 0):
            raise ConfigurationError("times must be sorted nondecreasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.targets))):
            raise ConfigurationError("dataset contains non-finite entries")

    @property
    def n_dims(self) -> int:
        return self.targets.shape[0]

    @property
    def n_points(self) -> int:
        return self.times.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"y{d}" for d in range(self.n_dims)])
            for n in range(self.n_points):
                writer.writerow(
                    [format_float(self.times[n])]
                    + [format_float(self.targets[d, n]) for d in range(self.n_dims)]
                )

    @classmethod
    def read_csv(cls, path) -> "TrajectoryDataset":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "t":
                raise ConfigurationError(f"{path}: expected header starting with 't'")
            rows = [[float(x) for x in row] for row in reader if row]
        if not rows:
            raise ConfigurationError(f"{path}: no data rows")
        arr = np.array(rows, dtype=float)
        return cls(times=arr[:, 0], targets=arr[:, 1:].T)


@dataclass(frozen=True)
class EqualityRow:
    t: float
    dim: int
    value: float


@dataclass(frozen=True)
class InequalityRow:
    t: float
    dim: int
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigurationError(
                f"inequality at t={self.t}, dim={self.dim}: lower {self.lower} > upper {self.upper}"
            )
        if np.isinf(self.lower) and np.isinf(self.upper):
            raise ConfigurationError(
                f"inequality at t={self.t}, dim={self.dim}: both bounds infinite"
            )


@dataclass
class ConstraintSet:
    """One task adaptation: value pins (equalities) and bounds (inequalities)."""

    index: int
    equalities: list[EqualityRow] = field(default_factory=list)
    inequalities: list[InequalityRow] = field(default_factory=list)

    def __post_init__(self):
        if self.index < 1:
            raise ConfigurationError("constraint set index must be a positive integer")

    def validate_domain(self, t_min: float, t_max: float, atol: float = 1e-9) -> None:
        for row in list(self.equalities) + list(self.inequalities):
            if row.t < t_min - atol or row.t > t_max + atol:
                raise ConfigurationError(
                    f"constraint set {self.index}: time {row.t} outside model domain "
                    f"[{t_min}, {t_max}]"
                )

    def to_json(self) -> dict:
        def bound(x: float) -> object:
            if np.isposinf(x):
                return "inf"
            if np.isneginf(x):
                return "-inf"
            return x

        return {
            "r": self.index,
            "equalities": [{"t": e.t, "dim": e.dim, "value": e.value} for e in self.equalities],
            "inequalities": [
                {"t": q.t, "dim": q.dim, "lower": bound(q.lower), "upper": bound(q.upper)}
                for q in self.inequalities
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConstraintSet":
        def bound(x) -> float:
            if x == "inf":
                return np.inf
            if x == "-inf":
                return -np.inf
            return float(x)

        return cls(
            index=int(doc["r"]),
            equalities=[
                EqualityRow(float(e["t"]), int(e["dim"]), float(e["value"]))
                for e in doc.get("equalities", [])
            ],
            inequalities=[
                InequalityRow(float(q["t"]), int(q["dim"]), bound(q["lower"]), bound(q["upper"]))
                for q in doc.get("inequalities", [])
            ],
        )


def save_constraint_sets(path, sets: Sequence[ConstraintSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([cs.to_json() for cs in sets], fh, indent=1)
        fh.write("\n")


def load_constraint_sets(path) -> list[ConstraintSet]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = [doc]
    return [ConstraintSet.from_json(entry) for entry in doc]


def assemble_design(basis: BasisEvaluations | np.ndarray) -> np.ndarray:
    """Prepend the ones column: row n is [1, basis values at time n]."""
    values = basis.values if isinstance(basis, BasisEvaluations) else np.asarray(basis)
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("basis evaluations contain non-finite entries")
    n = values.shape[1]
    return np.hstack([np.ones((n, 1)), values.T])


def place_rows(rows: np.ndarray, dims: Sequence[int], n_dims: int) -> np.ndarray:
    """Place each design row into its dimension's block of a (..., D*M) row.

    Row k of the result has ``rows[k]`` in block ``dims[k]`` and zeros in
    every other block.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    k, m = rows.shape
    out = np.zeros((k, n_dims * m))
    for i, d in enumerate(dims):
        if not 0 <= d < n_dims:
            raise ConfigurationError(f"constraint dimension {d} out of range for D={n_dims}")
        out[i, d * m : (d + 1) * m] = rows[i]
    return out


def check_equality_conflicts(cs: ConstraintSet) -> None:
    """Reject duplicate (t, dim) pins with conflicting values up front."""
    seen: dict[tuple[float, int], float] = {}
    for e in cs.equalities:
        key = (e.t, e.dim)
        if key in seen and seen[key] != e.value:
            raise InfeasibleConstraintsError(
                f"conflicting pins at t={e.t}, dim={e.dim}: {seen[key]} vs {e.value}",
                constraint_set=cs.index,
                kind="inconsistent_rows",
            )
        seen[key] = e.value


def assemble_equality(
    design_at: Callable[[float], np.ndarray],
    cs: ConstraintSet,
    n_dims: int,
    n_columns: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Build the pinned-value system (A, y): one row per equality entry,
    stacked in list order."""
    check_equality_conflicts(cs)
    if not cs.equalities:
        return np.zeros((0, n_dims * n_columns)), np.zeros(0)
    rows = np.vstack([np.asarray(design_at(e.t), dtype=float) for e in cs.equalities])
    if rows.shape[1] != n_columns:
        raise ConfigurationError(
            f"design rows have {rows.shape[1]} columns, expected {n_columns}"
        )
    A = place_rows(rows, [e.dim for e in cs.equalities], n_dims)
    y = np.array([e.value for e in cs.equalities], dtype=float)
    return A, y


def assemble_inequality(
    design_at: Callable[[float], np.ndarray],
    cs: ConstraintSet,
    n_dims: int,
    n_columns: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build the bounded system (A, lb, ub); one-sided bounds carry +/-inf."""
    if not cs.inequalities:
        return np.zeros((0, n_dims * n_columns)), np.zeros(0), np.zeros(0)
    rows = np.vstack([np.asarray(design_at(q.t), dtype=float) for q in cs.inequalities])
    if rows.shape[1] != n_columns:
        raise ConfigurationError(
            f"design rows have {rows.shape[1]} columns, expected {n_columns}"
        )
    A = place_rows(rows, [q.dim for q in cs.inequalities], n_dims)
    lb = np.array([q.lower for q in cs.inequalities], dtype=float)
    ub = np.array([q.upper for q in cs.inequalities], dtype=float)
    return A, lb, ub

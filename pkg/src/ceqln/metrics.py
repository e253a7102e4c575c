"""Evaluation metrics: shape distortion, constraint deviation, and the
four-part suite for the pick-and-place task.

Constraint times are resolved to the nearest dataset sample (ties take the
earlier index) since regressed trajectories live on the dataset grid.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .assembly import ConstraintSet, TrajectoryDataset
from .errors import ConfigurationError


def nearest_index(times: np.ndarray, t: float) -> int:
    """Index of the sample closest to t; equidistant ties pick the earlier."""
    return int(np.argmin(np.abs(np.asarray(times) - t)))


def mse_shape(yhat: np.ndarray, dataset: TrajectoryDataset) -> float:
    """Mean squared error between the regressed trajectory and the targets."""
    yhat = np.atleast_2d(np.asarray(yhat, dtype=float))
    if yhat.shape != dataset.targets.shape:
        raise ConfigurationError(
            f"trajectory shape {yhat.shape} does not match targets {dataset.targets.shape}"
        )
    return float(np.mean((yhat - dataset.targets) ** 2))


def mse_const(yhat: np.ndarray, cs: ConstraintSet, times: np.ndarray) -> float:
    """Mean squared deviation at the pinned points of the constraint set."""
    yhat = np.atleast_2d(np.asarray(yhat, dtype=float))
    times = np.asarray(times, dtype=float)
    if not cs.equalities:
        return 0.0
    errors = []
    for e in cs.equalities:
        idx = nearest_index(times, e.t)
        errors.append(yhat[e.dim, idx] - e.value)
    return float(np.mean(np.square(errors)))


def _hinge_sq_sum(values: np.ndarray, bound: float) -> float:
    """Sum of squared one-sided violations of a lower bound."""
    gap = bound - values
    return float(np.sum(np.square(gap[gap > 0])))


def mse_suite_pickplace(
    trajectories: Mapping[int, np.ndarray],
    dataset: TrajectoryDataset,
    goals: Mapping[int, Sequence[float]],
    window: tuple[float, float] = (0.3, 0.65),
    x_plane: float = 0.55,
    z_plane: float = 0.6,
    x_dim: int = 0,
    z_dim: int = 2,
) -> dict[str, float]:
    """Four-part metric block for the obstacle-avoidance task.

    * mse1: distortion over samples outside the window,
    * mse2 / mse3: one-sided squared violations of the x / z planes inside
      the window (zero when the bound holds),
    * mse4: squared gap between the final sample and the goal.

    Each is reported both as the raw sum over constraint sets (``*_sum``)
    and as a mean over the counted samples, for scale comparability.
    """
    times = dataset.times
    in_window = (times >= window[0]) & (times <= window[1])
    outside = ~in_window
    n_r = len(trajectories)
    if n_r == 0:
        raise ConfigurationError("no trajectories given")

    sums = {"mse1": 0.0, "mse2": 0.0, "mse3": 0.0, "mse4": 0.0}
    for r, yhat in trajectories.items():
        yhat = np.atleast_2d(np.asarray(yhat, dtype=float))
        if yhat.shape != dataset.targets.shape:
            raise ConfigurationError(
                f"trajectory r={r} shape {yhat.shape} does not match targets"
            )
        sums["mse1"] += float(
            np.sum((yhat[:, outside] - dataset.targets[:, outside]) ** 2)
        )
        sums["mse2"] += _hinge_sq_sum(yhat[x_dim, in_window], x_plane)
        sums["mse3"] += _hinge_sq_sum(yhat[z_dim, in_window], z_plane)
        goal = np.asarray(goals[r], dtype=float)
        sums["mse4"] += float(np.sum((yhat[:, -1] - goal) ** 2))

    n_dims = dataset.n_dims
    counts = {
        "mse1": n_r * int(outside.sum()) * n_dims,
        "mse2": n_r * int(in_window.sum()),
        "mse3": n_r * int(in_window.sum()),
        "mse4": n_r * n_dims,
    }
    out: dict[str, float] = {}
    for key, total in sums.items():
        out[key] = total / counts[key] if counts[key] else 0.0
        out[f"{key}_sum"] = total
    return out

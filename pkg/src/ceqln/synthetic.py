"""Synthetic demonstration data for the desk-scale tasks.

Each generator produces one smooth parametric trajectory (closed forms
below) plus the task's constraint sets; the geometry matches the constraint
values, so noiseless data satisfies every set's geometry with margin.
Gaussian noise of the requested level is added per sample from a seeded
generator, keeping runs byte-reproducible.

Closed forms (S is the C1 smoothstep 3u^2 - 2u^3, clipped to [0, 1]):

* letter2d:   x = 43.1 - 9.7 t + 2.4 sin(2 pi t) + 1.1 sin(4 pi t)
              y = -1.2 + 5.0 t + 2.8 sin(2 pi t) - 1.3 sin(4 pi t)
* cleaning3d: x = 0.46 - 0.40 t (1 - t), y = 0.72 t (1 - t) cos(4 pi t),
              z = 0.09 + 0.07 plateau(t) with plateau rising on [0, 0.2],
              flat 1 on [0.2, 0.8], falling on [0.8, 1]; the t (1 - t)
              windows vanish exactly at both endpoints
* assembly3d: x, y reach the goal by t = 0.7 (S(t / 0.7)) and hold; z rises
              as S(t)^2
* pickplace3d: straight S(t) blends pick -> place plus an obstacle bump
              0.28 (x) / 0.50 (z) high, flat across the avoidance window
* toy1d:      y = 0.46 + c t + 0.12 sin(5.6 t) - 0.08 sin(2.3 t) with c
              chosen so y(1) = 0.31
"""

from __future__ import annotations

import numpy as np

from .assembly import ConstraintSet, EqualityRow, InequalityRow, TrajectoryDataset
from .errors import ConfigurationError

TASKS = ("letter2d", "cleaning3d", "assembly3d", "pickplace3d", "toy1d")

LETTER_ENDPOINTS = {
    1: ([46.0, 0.0], [30.0, 4.0]),
    2: ([42.0, -4.0], [35.0, 2.0]),
    3: ([44.0, -3.0], [33.0, 7.0]),
    4: ([43.1, -1.2], [33.4, 3.8]),
}

CLEANING_POINT = [0.46, 0.0, 0.09]
CLEANING_HEIGHTS = {1: 0.16, 2: 0.21, 3: 0.26, 4: 0.30}
CLEANING_WINDOW = (0.2, 0.8)
CLEANING_ROWS = 12

ASSEMBLY_CASES = {
    1: ([0.50, 0.14, 0.12], [0.33, -0.37, 0.42]),
    2: ([0.42, 0.15, 0.12], [0.39, -0.43, 0.42]),
    3: ([0.42, 0.11, 0.12], [0.40, -0.32, 0.42]),
    4: ([0.46, 0.07, 0.12], [0.24, -0.45, 0.42]),
    5: ([0.45, 0.13, 0.12], [0.25, -0.28, 0.42]),
}
# Window sample counts are config, not physics: smooth bases sampled densely
# on a short window have exponentially clustered design rows, so large counts
# make the pinned system numerically rank deficient.
ASSEMBLY_WINDOW_START = 0.7
ASSEMBLY_ROWS = 4

PICKPLACE_CASES = {
    1: ([0.40, 0.40, 0.21], [0.31, -0.34, 0.13]),
    2: ([0.26, 0.35, 0.21], [0.31, -0.43, 0.13]),
    3: ([0.31, 0.33, 0.21], [0.31, -0.53, 0.13]),
    4: ([0.35, 0.34, 0.21], [0.31, -0.62, 0.13]),
}
PICKPLACE_WINDOW = (0.3, 0.65)
PICKPLACE_X_PLANE = 0.55
PICKPLACE_Z_PLANE = 0.6

TOY_CONSTRAINTS = (0.46, 0.31)

_DEFAULT_POINTS = {
    "letter2d": 400,
    "cleaning3d": 500,
    "assembly3d": 500,
    "pickplace3d": 250,
    "toy1d": 3500,
}


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 3.0 * u**2 - 2.0 * u**3


def _endpoint_rows(t: float, point) -> list[EqualityRow]:
    return [EqualityRow(t=t, dim=d, value=float(v)) for d, v in enumerate(point)]


def _letter2d(times: np.ndarray):
    x = 43.1 - 9.7 * times + 2.4 * np.sin(2 * np.pi * times) + 1.1 * np.sin(4 * np.pi * times)
    y = -1.2 + 5.0 * times + 2.8 * np.sin(2 * np.pi * times) - 1.3 * np.sin(4 * np.pi * times)
    targets = np.vstack([x, y])
    sets = []
    for r, (start, end) in LETTER_ENDPOINTS.items():
        sets.append(
            ConstraintSet(index=r, equalities=_endpoint_rows(0.0, start) + _endpoint_rows(1.0, end))
        )
    return targets, sets


def _cleaning3d(times: np.ndarray):
    t0, t1 = CLEANING_WINDOW
    plateau = np.where(
        times < t0,
        _smoothstep(times / t0),
        np.where(times > t1, _smoothstep((1.0 - times) / (1.0 - t1)), 1.0),
    )
    x = 0.46 - 0.40 * times * (1.0 - times)
    y = 0.72 * times * (1.0 - times) * np.cos(4 * np.pi * times)
    z = 0.09 + (CLEANING_HEIGHTS[1] - 0.09) * plateau
    targets = np.vstack([x, y, z])
    window_times = np.linspace(t0, t1, CLEANING_ROWS)
    sets = []
    for r, height in CLEANING_HEIGHTS.items():
        eqs = _endpoint_rows(0.0, CLEANING_POINT) + _endpoint_rows(1.0, CLEANING_POINT)
        eqs += [EqualityRow(t=float(t), dim=2, value=height) for t in window_times]
        sets.append(ConstraintSet(index=r, equalities=eqs))
    return targets, sets


def _assembly3d(times: np.ndarray):
    start, goal = ASSEMBLY_CASES[1]
    reach = _smoothstep(times / ASSEMBLY_WINDOW_START)
    x = start[0] + (goal[0] - start[0]) * reach
    y = start[1] + (goal[1] - start[1]) * reach
    z = start[2] + (goal[2] - start[2]) * _smoothstep(times) ** 2
    targets = np.vstack([x, y, z])
    window_times = np.linspace(ASSEMBLY_WINDOW_START, 1.0, ASSEMBLY_ROWS, endpoint=False)
    sets = []
    for r, (s, g) in ASSEMBLY_CASES.items():
        eqs = _endpoint_rows(0.0, s) + _endpoint_rows(1.0, g)
        eqs += [EqualityRow(t=float(t), dim=0, value=g[0]) for t in window_times]
        eqs += [EqualityRow(t=float(t), dim=1, value=g[1]) for t in window_times]
        sets.append(ConstraintSet(index=r, equalities=eqs))
    return targets, sets


def _pickplace3d(times: np.ndarray):
    pick, place = PICKPLACE_CASES[1]
    blend = _smoothstep(times)
    bump = _smoothstep((times - 0.05) / 0.25) * (1.0 - _smoothstep((times - 0.70) / 0.25))
    x = pick[0] + (place[0] - pick[0]) * blend + 0.28 * bump
    y = pick[1] + (place[1] - pick[1]) * blend
    z = pick[2] + (place[2] - pick[2]) * blend + 0.50 * bump
    targets = np.vstack([x, y, z])
    t0, t1 = PICKPLACE_WINDOW
    window_times = times[(times >= t0) & (times <= t1)]
    sets = []
    for r, (p, q) in PICKPLACE_CASES.items():
        eqs = _endpoint_rows(0.0, p) + _endpoint_rows(1.0, q)
        ineqs = [
            InequalityRow(t=float(t), dim=0, lower=PICKPLACE_X_PLANE) for t in window_times
        ]
        ineqs += [
            InequalityRow(t=float(t), dim=2, lower=PICKPLACE_Z_PLANE) for t in window_times
        ]
        sets.append(ConstraintSet(index=r, equalities=eqs, inequalities=ineqs))
    return targets, sets


def _toy1d(times: np.ndarray):
    y0, y1 = TOY_CONSTRAINTS
    c = (y1 - y0) - 0.12 * np.sin(5.6) + 0.08 * np.sin(2.3)
    y = y0 + c * times + 0.12 * np.sin(5.6 * times) - 0.08 * np.sin(2.3 * times)
    targets = y[np.newaxis, :]
    cs = ConstraintSet(
        index=1,
        equalities=[EqualityRow(0.0, 0, y0), EqualityRow(1.0, 0, y1)],
    )
    return targets, [cs]


_BUILDERS = {
    "letter2d": _letter2d,
    "cleaning3d": _cleaning3d,
    "assembly3d": _assembly3d,
    "pickplace3d": _pickplace3d,
    "toy1d": _toy1d,
}


def generate_synthetic(
    task: str,
    noise_level: float = 0.0,
    seed: int = 0,
    n_points: int | None = None,
) -> tuple[TrajectoryDataset, list[ConstraintSet]]:
    """Build the named task's dataset and constraint sets."""
    if task not in _BUILDERS:
        raise ConfigurationError(f"unknown task {task!r}; choose one of {TASKS}")
    n = n_points or _DEFAULT_POINTS[task]
    times = np.linspace(0.0, 1.0, n)
    targets, sets = _BUILDERS[task](times)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=targets.shape)
    targets = targets + noise_level * noise
    return TrajectoryDataset(times=times, targets=targets), sets

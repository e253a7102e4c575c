"""Command-line surface.

Exit codes: 0 success, 1 verification failure, 2 input error, 3
infeasibility / initialization failure, 4 numerical failure. Nonzero exits
write a machine-readable error JSON to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adaptation import TrajectoryAdapter
from .assembly import (
    ConstraintSet,
    TrajectoryDataset,
    load_constraint_sets,
    save_constraint_sets,
)
from .errors import (
    CeqlnError,
    ConfigurationError,
    DegenerateGradientError,
    IllConditionedError,
    InfeasibleConstraintsError,
    InitializationError,
    NonconvergenceError,
    RedundantConstraintsError,
    TrainingAbortedError,
)
from .fixed_basis import sweep, write_sweep_csv
from .metrics import mse_const, mse_shape, mse_suite_pickplace
from .network import load_model, save_model
from .symbolic import (
    export_expressions,
    load_reference_model,
    verify_model_constraints,
)
from .synthetic import (
    PICKPLACE_WINDOW,
    PICKPLACE_X_PLANE,
    PICKPLACE_Z_PLANE,
    TASKS,
    generate_synthetic,
)
from .training import _design_rows, config_from_json, train
from .util import format_float

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class InputError(CeqlnError):
    """File-level parse or schema problem."""


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc}", file=str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}",
            file=str(path),
            byte_offset=exc.pos,
        ) from exc


def _load_dataset(path: Path) -> TrajectoryDataset:
    try:
        return TrajectoryDataset.read_csv(path)
    except (OSError, ValueError, ConfigurationError) as exc:
        raise InputError(f"{path}: {exc}", file=str(path)) from exc


def _load_constraints(path: Path) -> list[ConstraintSet]:
    try:
        return load_constraint_sets(path)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}",
            file=str(path),
            byte_offset=exc.pos,
        ) from exc
    except (OSError, KeyError, ValueError, ConfigurationError) as exc:
        raise InputError(f"{path}: {exc}", file=str(path)) from exc


def _load_model_file(path: Path):
    try:
        return load_model(path)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}",
            file=str(path),
            byte_offset=exc.pos,
        ) from exc
    except (OSError, KeyError, ValueError, ConfigurationError) as exc:
        raise InputError(f"{path}: {exc}", file=str(path)) from exc


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _write_metrics_csv(path: Path, values: dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for key, value in values.items():
            writer.writerow([key, format_float(value)])


def _trajectory_dataset(dataset: TrajectoryDataset, yhat: np.ndarray) -> TrajectoryDataset:
    return TrajectoryDataset(times=dataset.times.copy(), targets=np.asarray(yhat))


def _goal_from_set(cs: ConstraintSet, n_dims: int) -> list[float]:
    goal = [np.nan] * n_dims
    for e in cs.equalities:
        if e.t == 1.0:
            goal[e.dim] = e.value
    if any(np.isnan(g) for g in goal):
        raise InputError(
            f"constraint set {cs.index} does not pin every dimension at t=1; "
            "cannot derive the goal point"
        )
    return goal


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, sets = generate_synthetic(
        args.task, noise_level=args.noise, seed=args.seed, n_points=args.points
    )
    dataset.write_csv(out / "dataset.csv")
    save_constraint_sets(out / "constraints.json", sets)
    print(f"wrote {out / 'dataset.csv'} ({dataset.n_points} points, D={dataset.n_dims}) "
          f"and {len(sets)} constraint sets")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_json(Path(args.config))
    try:
        config, spec = config_from_json(doc)
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        field = exc.args[0] if isinstance(exc, KeyError) else exc
        raise InputError(f"{args.config}: bad config field: {field}", file=args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.cost_mode is not None:
        config.cost_mode = args.cost_mode
    if args.fd_fallback:
        config.fd_fallback = True
    dataset = _load_dataset(Path(args.dataset))
    sets = _load_constraints(Path(args.constraints))

    result = train(config, spec, dataset, sets)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.json", result.params_star, spec)
    with open(out / "loss.csv", "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(result.loss_history):
            writer.writerow([epoch, format_float(loss)])
    metric_values: dict[str, float] = {
        "init_loss": result.init_loss,
        "best_loss": float(result.loss_history.min()),
        "best_epoch": result.best_epoch,
    }
    for cs in sets:
        yhat = result.trajectories[cs.index]
        _trajectory_dataset(dataset, yhat).write_csv(out / f"trajectory_r{cs.index}.csv")
        metric_values[f"mse_shape_r{cs.index}"] = mse_shape(yhat, dataset)
        metric_values[f"mse_const_r{cs.index}"] = mse_const(yhat, cs, dataset.times)
    _write_json(out / "metrics.json", metric_values)
    _write_metrics_csv(out / "metrics.csv", metric_values)
    print(f"trained {config.epochs} epochs; best loss {metric_values['best_loss']:.6g} "
          f"at epoch {result.best_epoch}; artifacts in {out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    params, spec = _load_model_file(Path(args.model))
    dataset = _load_dataset(Path(args.dataset))
    sets = _load_constraints(Path(args.constraints))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adapter = TrajectoryAdapter(
        params, spec, dataset, lambda_w=args.lambda_w, cost_mode=args.cost_mode or "paper"
    )
    m = spec.n_basis + 1
    reports = []
    for cs in sets:
        yhat, sol = adapter.adapt(cs)
        _trajectory_dataset(dataset, yhat).write_csv(out / f"adapted_r{cs.index}.csv")

        def value_at(t: float, dim: int) -> float:
            row = _design_rows(params, spec, np.array([t]))[0]
            return float(row @ sol.w[dim * m : (dim + 1) * m])

        rows = []
        ok_all = True
        for e in cs.equalities:
            achieved = value_at(e.t, e.dim)
            residual = achieved - e.value
            ok = abs(residual) <= args.tolerance
            ok_all &= ok
            rows.append(
                {"kind": "equality", "t": e.t, "dim": e.dim, "target": e.value,
                 "achieved": achieved, "residual": residual, "ok": ok}
            )
        for q in cs.inequalities:
            achieved = value_at(q.t, q.dim)
            violation = max(0.0, q.lower - achieved, achieved - q.upper)
            ok = violation <= args.tolerance
            ok_all &= ok
            rows.append(
                {"kind": "inequality", "t": q.t, "dim": q.dim,
                 "lower": None if np.isneginf(q.lower) else q.lower,
                 "upper": None if np.isposinf(q.upper) else q.upper,
                 "achieved": achieved, "violation": violation, "ok": ok}
            )
        reports.append({"r": cs.index, "passed": ok_all, "rows": rows})
    _write_json(out / "residuals.json", {"tolerance": args.tolerance, "sets": reports})
    n_fail = sum(not rep["passed"] for rep in reports)
    print(f"adapted {len(sets)} constraint set(s); {n_fail} failed residual check; "
          f"artifacts in {out}")
    return EXIT_OK if n_fail == 0 else EXIT_CHECK_FAILED


def cmd_sweep(args) -> int:
    dataset = _load_dataset(Path(args.dataset))
    sets = _load_constraints(Path(args.constraints))
    if len(sets) != 1:
        raise InputError("sweep expects exactly one constraint set")
    family = {"fourier": "fourier_toy", "gaussian": "gaussian_toy"}[args.family]
    cells = sweep(dataset, sets[0], family, lambda_w=args.lambda_w)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out, cells)
    n_bad = sum(c.status != "ok" for c in cells)
    print(f"swept {len(cells)} cells ({n_bad} not solvable); wrote {out}")
    return EXIT_OK


def cmd_export_equations(args) -> int:
    params, spec = _load_model_file(Path(args.model))
    rendered = export_expressions(params, spec, digits=args.digits)
    lines = [f"f{i} = {expr}" for i, expr in enumerate(rendered["units"])]
    lines += [f"phi{m} = {expr}" for m, expr in enumerate(rendered["basis"])]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify_reference(args) -> int:
    params, spec, w_star, cs = load_reference_model()
    report = verify_model_constraints(params, spec, w_star, cs, tolerance=args.tolerance)
    for row in report.rows:
        status = "ok" if abs(row.residual) <= args.tolerance else "FAIL"
        print(
            f"t={row.t:g} dim={row.dim} target={row.target:g} "
            f"achieved={row.achieved:.4f} residual={row.residual:+.4f} [{status}]"
        )
    if report.passed:
        print(f"all {len(report.rows)} rows within {args.tolerance}")
        return EXIT_OK
    print(f"max |residual| = {report.max_abs_residual:.4f} exceeds {args.tolerance}")
    return EXIT_CHECK_FAILED


def cmd_metrics(args) -> int:
    dataset = _load_dataset(Path(args.dataset))
    if args.task == "pickplace":
        sets = _load_constraints(Path(args.constraints))
        trajectories = {}
        shape_values = []
        goals = {}
        for cs in sets:
            path = Path(args.trajectories) / f"trajectory_r{cs.index}.csv"
            if not path.exists():
                path = Path(args.trajectories) / f"adapted_r{cs.index}.csv"
            traj = _load_dataset(path)
            trajectories[cs.index] = traj.targets
            shape_values.append(mse_shape(traj.targets, dataset))
            goals[cs.index] = _goal_from_set(cs, dataset.n_dims)
        suite = mse_suite_pickplace(
            trajectories, dataset, goals,
            window=PICKPLACE_WINDOW, x_plane=PICKPLACE_X_PLANE, z_plane=PICKPLACE_Z_PLANE,
        )
        values = {
            "mse_shape": float(np.mean(shape_values)),
            "mse1": suite["mse1"],
            "mse2": suite["mse2"],
            "mse3": suite["mse3"],
            "mse4": suite["mse4"],
            "sums": {k: suite[k] for k in ("mse1_sum", "mse2_sum", "mse3_sum", "mse4_sum")},
        }
    else:
        traj = _load_dataset(Path(args.trajectory))
        values = {"mse_shape": mse_shape(traj.targets, dataset)}
        if args.constraints:
            sets = _load_constraints(Path(args.constraints))
            cs = _select_set(sets, args.r)
            values["mse_const"] = mse_const(traj.targets, cs, dataset.times)
    if args.out:
        _write_json(Path(args.out), values)
        flat = {k: v for k, v in values.items() if isinstance(v, (int, float))}
        _write_metrics_csv(Path(args.out).with_suffix(".csv"), flat)
        print(f"wrote {args.out}")
    else:
        json.dump(values, sys.stdout, indent=1)
        sys.stdout.write("\n")
    return EXIT_OK


def _select_set(sets: list[ConstraintSet], r: int | None) -> ConstraintSet:
    if r is None:
        if len(sets) == 1:
            return sets[0]
        raise InputError("constraint file holds multiple sets; pass --r to pick one")
    for cs in sets:
        if cs.index == r:
            return cs
    raise InputError(f"no constraint set with r={r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ceqln",
        description="Constrained basis-function regression toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic task dataset")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit basis functions to a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--cost-mode", choices=["paper", "direct"], default=None)
    p.add_argument("--fd-fallback", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="re-solve a trained model for new constraints")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lambda-w", type=float, default=0.01, dest="lambda_w")
    p.add_argument("--cost-mode", choices=["paper", "direct"], default=None)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("sweep", help="two-parameter fixed-basis sweep")
    p.add_argument("--family", required=True, choices=["fourier", "gaussian"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--lambda-w", type=float, default=0.01, dest="lambda_w")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-equations", help="render a model as expressions")
    p.add_argument("--model", required=True)
    p.add_argument("--digits", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_equations)

    p = sub.add_parser(
        "verify-reference",
        help="check the bundled reference model against its pinned endpoints",
    )
    p.add_argument("--tolerance", type=float, default=1.0)
    p.set_defaults(func=cmd_verify_reference)

    p = sub.add_parser("metrics", help="compute evaluation metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--trajectory", default=None, help="regressed trajectory CSV")
    p.add_argument("--trajectories", default=None, help="directory of per-set CSVs")
    p.add_argument("--constraints", default=None)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--task", choices=["generic", "pickplace"], default="generic")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _emit_error(exc)
        return EXIT_INPUT
    except (InfeasibleConstraintsError, InitializationError) as exc:
        _emit_error(exc)
        return EXIT_INFEASIBLE
    except (
        IllConditionedError,
        NonconvergenceError,
        RedundantConstraintsError,
        DegenerateGradientError,
        TrainingAbortedError,
    ) as exc:
        _emit_error(exc)
        return EXIT_NUMERICAL
    except ConfigurationError as exc:
        _emit_error(exc)
        return EXIT_INPUT


def _emit_error(exc: CeqlnError) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    doc.update({k: v for k, v in exc.details.items() if _json_safe(v)})
    json.dump(doc, sys.stderr)
    sys.stderr.write("\n")


def _json_safe(v) -> bool:
    return isinstance(v, (str, int, float, bool)) or v is None


if __name__ == "__main__":
    sys.exit(main())

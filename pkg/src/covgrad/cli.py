"""Command-line interface: plan, simulate, gradcheck, and bench subcommands.

All numeric CSV output is written with round-trippable float formatting, so
re-reading a file reproduces the values exactly.

Exit codes: 0 success, 1 input or configuration error, 2 infeasible
controls or line-search failure, 3 gradient check above tolerance.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .backprop import gradient_of_loss
from .errors import ConfigError, CovgradError
from .gradcheck import MatrixRule, fd_gradient_controls, verify_matrix_rule
from .losses import LossSpec
from .models import LinearModel
from .montecarlo import aggregate, run_trials
from .planner import (
    PlanProblem,
    Termination,
    first_violation,
    optimize,
    sample_initial_controls,
)

STATE_COLUMNS = ("theta", "px", "py", "lx", "ly")
CONTROL_COLUMNS = ("mu", "nu")


def _fmt(value):
    return repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else _fmt(cell) for cell in row])


def _read_controls_csv(path):
    if not os.path.exists(path):
        raise ConfigError(f"controls file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["step"] + list(CONTROL_COLUMNS):
            raise ConfigError(f"{path}: expected header step,{','.join(CONTROL_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + len(CONTROL_COLUMNS):
                raise ConfigError(f"{path}: row {lineno}: expected {1 + len(CONTROL_COLUMNS)} fields")
            try:
                rows.append([float(cell) for cell in row[1:]])
            except ValueError as exc:
                raise ConfigError(f"{path}: row {lineno}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no control rows")
    return np.array(rows)


def _load_config(args):
    if getattr(args, "json_config", None):
        cfg = cfgmod.load_json_config(args.json_config)
    else:
        cfg = cfgmod.load_config(args.config)
    cfgmod.apply_seed_overrides(cfg, getattr(args, "seed", None))
    if getattr(args, "loss", None):
        cfg.loss.kind = args.loss
    if getattr(args, "schatten_power", None) is not None:
        cfg.loss.schatten_power = args.schatten_power
    if getattr(args, "horizon", None) is not None:
        cfg.planner.horizon = args.horizon
    if getattr(args, "trials", None) is not None:
        cfg.simulate.trials = args.trials
    if getattr(args, "base_seed", None) is not None:
        cfg.simulate.base_seed = args.base_seed
    if getattr(args, "output_dir", None):
        cfg.output.directory = args.output_dir
    cfgmod.validate_config(cfg)
    return cfg


def _out_dir(cfg):
    os.makedirs(cfg.output.directory, exist_ok=True)
    return cfg.output.directory


def _formats(cfg):
    return {f.strip() for f in cfg.output.formats.split(",") if f.strip()}


def cmd_plan(args):
    cfg = _load_config(args)
    problem = cfgmod.build_plan_problem(cfg)
    initial_controls = sample_initial_controls(problem, cfg.planner.seed)
    result = optimize(problem, initial_controls)

    out = _out_dir(cfg)
    formats = _formats(cfg)
    if "csv" in formats:
        _write_csv(
            os.path.join(out, "controls.csv"),
            ["step"] + list(CONTROL_COLUMNS),
            [[str(n + 1), *row] for n, row in enumerate(result.controls)],
        )
        _write_csv(
            os.path.join(out, "states.csv"),
            ["step"] + list(STATE_COLUMNS),
            [[str(n), *row] for n, row in enumerate(result.states)],
        )
        _write_csv(
            os.path.join(out, "loss_history.csv"),
            ["iter", "loss"],
            [[str(i), value] for i, value in enumerate(result.loss_history)],
        )
    if "json" in formats:
        summary = {
            "final_loss": result.final_loss,
            "initial_loss": result.loss_history[0],
            "final_covariance_loss": result.final_covariance_loss,
            "iterations": result.iterations,
            "termination": result.termination.value,
            "feasible": result.feasible,
            "corridor_violation": result.corridor_violation,
            "horizon": cfg.planner.horizon,
            "seed": cfg.planner.seed,
        }
        with open(os.path.join(out, "plan_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")

    print(
        f"plan: {result.termination.value} after {result.iterations} iterations, "
        f"loss {result.loss_history[0]:.6g} -> {result.final_loss:.6g}"
    )
    return 2 if result.termination == Termination.LINE_SEARCH_FAILED else 0


def cmd_simulate(args):
    cfg = _load_config(args)
    controls = _read_controls_csv(args.controls)
    problem = cfgmod.build_plan_problem(cfg)
    if controls.shape[0] != cfg.planner.horizon:
        problem.horizon = controls.shape[0]
    violation = first_violation(controls, problem)
    if violation is not None:
        step, kind = violation
        print(f"simulate: controls infeasible at step {step + 1}: {kind} violated", file=sys.stderr)
        return 2

    true_initial = cfgmod.true_initial_state(cfg)
    trials = run_trials(
        problem,
        controls,
        true_initial,
        n_trials=cfg.simulate.trials,
        base_seed=cfg.simulate.base_seed,
        max_workers=cfg.simulate.workers,
        sim_model=cfgmod.build_sim_model(cfg),
    )
    summary = aggregate(trials)
    mean_trace = np.mean(np.stack([t.trace_history for t in trials]), axis=0)

    out = _out_dir(cfg)
    header = (
        ["step"]
        + [f"mean_{c}" for c in STATE_COLUMNS]
        + [f"std_{c}" for c in STATE_COLUMNS]
    )
    rows = [
        [str(n), *summary.mean_abs_error[n], *summary.std_abs_error[n]]
        for n in range(summary.mean_abs_error.shape[0])
    ]
    _write_csv(os.path.join(out, "error_summary.csv"), header, rows)
    _write_csv(
        os.path.join(out, "trace_history.csv"),
        ["step", "mean_trace"],
        [[str(n + 1), value] for n, value in enumerate(mean_trace)],
    )
    print(
        f"simulate: {summary.trials} trials, mean final position error "
        f"{summary.mean_final_position_error:.6g} m"
    )
    return 0


def cmd_gradcheck(args):
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.planner.seed)
    tol = args.tol
    checks = []
    for rule in MatrixRule:
        err = max(verify_matrix_rule(rule, dim=4, rng=rng) for _ in range(args.rule_draws))
        checks.append((f"rule {rule.value}", err, ""))

    if args.model == "linear":
        model = LinearModel.default()
        from .ekf import BeliefState

        initial = BeliefState(np.zeros(model.state_dim), np.eye(model.state_dim))
        problem = PlanProblem(
            initial=initial,
            model=model,
            loss=LossSpec.trace(),
            horizon=args.horizon or 10,
            u_min=-np.ones(model.control_dim),
            u_max=np.ones(model.control_dim),
            du_max=np.full(model.control_dim, np.inf),
        )
        spec = LossSpec.trace()
    else:
        problem = cfgmod.build_plan_problem(cfg)
        problem.horizon = args.horizon or 10
        spec = problem.loss

    controls = sample_initial_controls(problem, cfg.planner.seed)
    _, grads = gradient_of_loss(problem.initial, controls, problem.model, spec)
    fd = fd_gradient_controls(problem.initial, controls, problem.model, spec)
    err = np.abs(grads.dL_du - fd)
    denom = np.maximum(np.maximum(np.abs(grads.dL_du), np.abs(fd)), 1e-8)
    rel = err / denom
    n, k = np.unravel_index(int(np.argmax(rel)), rel.shape)
    checks.append(("control gradient vs finite differences", float(rel.max()), f"(n={n + 1}, k={k})"))

    width = max(len(name) for name, _, _ in checks)
    failed = False
    for name, value, detail in checks:
        status = "ok" if value < tol else "FAIL"
        if value >= tol:
            failed = True
        print(f"{name:<{width}}  max rel err {value:.3e}  {status} {detail}")
    if failed:
        print(f"gradcheck: at least one check at or above tolerance {tol:g}", file=sys.stderr)
        return 3
    return 0


def cmd_bench(args):
    cfg = _load_config(args)
    problem = cfgmod.build_plan_problem(cfg)
    if args.horizon is not None:
        problem.horizon = args.horizon
    controls = sample_initial_controls(problem, cfg.planner.seed)

    analytic_times = []
    fd_times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        gradient_of_loss(problem.initial, controls, problem.model, problem.loss)
        analytic_times.append(time.perf_counter() - t0)
    for _ in range(args.reps):
        t0 = time.perf_counter()
        fd_gradient_controls(
            problem.initial, controls, problem.model, problem.loss, scheme="forward"
        )
        fd_times.append(time.perf_counter() - t0)

    analytic_times = np.array(analytic_times)
    fd_times = np.array(fd_times)
    out = _out_dir(cfg)
    _write_csv(
        os.path.join(out, "bench.csv"),
        ["method", "mean_seconds", "std_seconds", "N", "d", "d_u"],
        [
            [
                "analytical",
                analytic_times.mean(),
                analytic_times.std(),
                str(problem.horizon),
                str(problem.model.state_dim),
                str(problem.model.control_dim),
            ],
            [
                "finite_difference",
                fd_times.mean(),
                fd_times.std(),
                str(problem.horizon),
                str(problem.model.state_dim),
                str(problem.model.control_dim),
            ],
        ],
    )
    ratio = fd_times.mean() / max(analytic_times.mean(), 1e-12)
    print(
        f"bench: N={problem.horizon} analytical {analytic_times.mean():.4f}s "
        f"+/- {analytic_times.std():.4f}s, finite differences {fd_times.mean():.4f}s "
        f"+/- {fd_times.std():.4f}s, speedup {ratio:.1f}x"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="covgrad",
        description="Covariance-gradient planning and validation tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="sectioned key=value config file")
        p.add_argument("--json-config", default=None, help="JSON mirror of the config")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--output-dir", default=None, help="override output directory")

    p_plan = sub.add_parser("plan", help="optimize a control sequence")
    add_common(p_plan)
    p_plan.add_argument("--loss", choices=["trace", "normalized_trace", "schatten"], default=None)
    p_plan.add_argument("--schatten-power", type=float, default=None)
    p_plan.add_argument("--horizon", type=int, default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_sim = sub.add_parser("simulate", help="Monte Carlo error study for a control file")
    add_common(p_sim)
    p_sim.add_argument("--controls", required=True, help="controls.csv produced by plan")
    p_sim.add_argument("--trials", type=int, default=None)
    p_sim.add_argument("--base-seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_grad = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    add_common(p_grad)
    p_grad.add_argument("--model", choices=["bicycle", "linear"], default="bicycle")
    p_grad.add_argument("--horizon", type=int, default=None)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.add_argument("--rule-draws", type=int, default=20)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="time analytical vs finite-difference gradients")
    add_common(p_bench)
    p_bench.add_argument("--horizon", type=int, default=None)
    p_bench.add_argument("--reps", type=int, default=20)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None and args.json_config is None:
        print("error: --config or --json-config is required", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CovgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point ``tvp``.

Subcommands::

    tvp run <scenario> -o <dir>
    tvp sweep <scenario> --lambdas 1e-1,1e-2,1e-3 -o <dir>
    tvp check <scenario>
    tvp oracle <scenario> -o <dir>
    tvp lifting <scenario> -o <dir>

``<scenario>`` is a scenario file or the name of a shipped scenario. Every
float is written with 17 significant digits so outputs round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from tvp import diagnostics, oracle0d
from tvp.scenario import ScenarioError, load_scenario, shipped_scenarios
from tvp.stepper import StepFailure, Stepper, run
from tvp.mesh import strain_of

TENSOR_SUFFIXES = ("xx", "yy", "zz", "xy", "yz", "xz")
FIELD_COLUMNS = (
    ("kind", "id", "x", "y", "ux", "uy", "theta_hat")
    + tuple(f"eps_p_{s}" for s in TENSOR_SUFFIXES)
    + tuple(f"T_{s}" for s in TENSOR_SUFFIXES)
)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_fields(path: Path, stepper: Stepper, state, level: int) -> None:
    mesh = stepper.mesh
    theta_hat = state.theta + stepper.lifting.theta[level]
    blank6 = ("",) * 6
    rows = []
    for i, (x, y) in enumerate(mesh.nodes):
        rows.append(("node", i, x, y, state.u[i, 0], state.u[i, 1], theta_hat[i]) + blank6 + blank6)
    for e, (x, y) in enumerate(mesh.centroids()):
        rows.append(("elem", e, x, y, "", "", "") + tuple(state.eps_p[e]) + tuple(state.T[e]))
    _write_csv(path, FIELD_COLUMNS, rows)


def write_diagnostics(path: Path, report) -> None:
    _write_csv(path, diagnostics.CSV_COLUMNS, (r.csv_values() for r in report.rows))


def _print_checks(checks) -> bool:
    for c in checks:
        print(c.line())
    return all(c.passed for c in checks)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    return out


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _outdir(args.output)
    stepper = Stepper(scenario)
    try:
        trajectory, report = run(scenario, stepper)
        failure = None
    except StepFailure as exc:
        trajectory, report, failure = exc.trajectory, exc.report, str(exc)
    for level, state in enumerate(trajectory):
        if level % args.every == 0 or level == len(trajectory) - 1:
            write_fields(out / f"fields_{level:04d}.csv", stepper, state, level)
    write_diagnostics(out / "diagnostics.csv", report)
    if failure is not None:
        (out / "FAILED").write_text(failure + "\n")
        print(f"FAILED {failure}", file=sys.stderr)
        return 1
    print(f"{scenario.name}: {len(trajectory) - 1} steps written to {out}")
    return 0


def _lambdas(args, scenario) -> list:
    if args.lambdas:
        return [float(v) for v in args.lambdas.split(",") if v.strip()]
    if scenario.check_lambdas:
        return list(scenario.check_lambdas)
    return [scenario.material.yosida_lambda]


def write_sweep(path: Path, table) -> None:
    n = len(table.rows)
    header = list(diagnostics.SWEEP_COLUMNS)
    if n > 1:
        header += [f"sup_diff_T_lam_{j}" for j in range(n)]
    rows = []
    for i, r in enumerate(table.rows):
        row = [getattr(r, c) for c in diagnostics.SWEEP_COLUMNS]
        if n > 1:
            row += list(table.pairwise[i])
        rows.append(row)
    _write_csv(path, header, rows)


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _outdir(args.output)
    table = diagnostics.sweep_lambda(scenario, _lambdas(args, scenario))
    write_sweep(out / "sweep.csv", table)
    ok = _print_checks(table.evaluate())
    if not ok:
        (out / "FAILED").write_text("sweep checks failed\n")
    return 0 if ok else 1


def uniqueness_probe(stepper: Stepper, state_n, level: int) -> list:
    """Re-solve one step from different initial guesses of both fixed points."""
    tol = stepper.params.picard_tol
    ops = stepper.ops
    ref, _ = stepper.picard_R(state_n, level)
    alt, _ = stepper.picard_R(state_n, level, theta_star0=np.zeros_like(state_n.theta))
    gap_R = ops.l2_norm_nodal(ref.theta - alt.theta) / (1.0 + ops.l2_norm_nodal(ref.theta))
    inner_a = stepper.picard_P(ref.theta, state_n, level)
    inner_b = stepper.picard_P(ref.theta, state_n, level, eps_star0=np.zeros_like(state_n.T))
    eps_a, eps_b = strain_of(stepper.mesh, inner_a.u), strain_of(stepper.mesh, inner_b.u)
    gap_P = ops.l2_norm_elem(eps_a - eps_b) / (1.0 + ops.l2_norm_elem(eps_a))
    return [
        diagnostics.Check("unique_R", gap_R < 10 * tol, f"relative gap {gap_R:.3e} at step {level}"),
        diagnostics.Check("unique_P", gap_P < 10 * tol, f"relative gap {gap_P:.3e} at step {level}"),
    ]


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    stepper = Stepper(scenario)
    checks = []
    try:
        trajectory, report = run(scenario, stepper)
    except StepFailure as exc:
        trajectory, report = exc.trajectory, exc.report
    checks += report.evaluate()
    if report.failure is None and len(trajectory) > 1:
        level = len(trajectory) // 2
        checks += uniqueness_probe(stepper, trajectory[level - 1], level)
    if scenario.check_lambdas and not args.no_sweep:
        table = diagnostics.sweep_lambda(scenario, scenario.check_lambdas)
        checks += [diagnostics.Check(f"sweep {c.name}", c.passed, c.detail) for c in table.evaluate()]
    ok = _print_checks(checks)
    print(f"{scenario.name}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _outdir(args.output)
    material = scenario.material
    if args.lam is not None:
        from dataclasses import replace

        material = replace(material, yosida_lambda=args.lam)
    history = oracle0d.history_from_scenario(scenario)
    theta0 = float(scenario.theta0.at(np.zeros((1, 2)), 0.0)[0])
    n = args.steps
    every = max(1, n // args.samples)
    while n % every:
        every -= 1
    traj = oracle0d.integrate_point(material, history, theta0, scenario.t_final, n, scenario.eps_p0, every)
    header = (
        ["t"]
        + [f"eps_{s}" for s in TENSOR_SUFFIXES]
        + [f"eps_p_{s}" for s in TENSOR_SUFFIXES]
        + [f"T_{s}" for s in TENSOR_SUFFIXES]
        + ["theta"]
    )
    rows = (
        [t, *e, *ep, *T, th]
        for t, e, ep, T, th in zip(traj.times, traj.strain, traj.eps_p, traj.T, traj.theta)
    )
    _write_csv(out / "oracle_trajectory.csv", header, rows)
    try:
        table = oracle0d.compare_with_stepper(scenario, halvings=args.halvings, oracle_steps=n)
    except oracle0d.OracleError as exc:
        print(f"comparison skipped: {exc}")
        return 0
    _write_csv(out / "oracle_comparison.csv", ("dt", "error", "ratio"), ((r.dt, r.error, r.ratio) for r in table))
    for r in table:
        print(f"dt={fmt(r.dt)} error={r.error:.6e} ratio={r.ratio:.4f}")
    return 0


def cmd_lifting(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _outdir(args.output)
    stepper = Stepper(scenario)
    lift, mesh = stepper.lifting, stepper.mesh
    rows = []
    for n, t in enumerate(lift.times):
        for i, (x, y) in enumerate(mesh.nodes):
            rows.append((n, t, i, x, y, lift.theta[n, i], lift.theta_t[n, i]))
    _write_csv(out / "lifting.csv", ("step", "t", "node", "x", "y", "theta", "theta_t"), rows)
    _write_csv(
        out / "lifting_summary.csv",
        ("max_h1", "sum_dt_theta_t_sq"),
        [(lift.max_h1, lift.sum_dt_theta_t_sq)],
    )
    print(f"max_n |w_n|_H1 = {lift.max_h1:.6e}; sum dt |w_t|^2 = {lift.sum_dt_theta_t_sq:.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvp", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    scen_help = "scenario file or shipped name (" + ", ".join(shipped_scenarios()) + ")"

    p = sub.add_parser("run", help="march a scenario and write fields and diagnostics")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--every", type=int, default=1, help="write fields every N steps (last always written)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a lambda ladder and compare stresses")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--lambdas", help="comma separated ladder; defaults to check.lambdas")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the invariant suite; exit 1 on any failure")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--no-sweep", action="store_true", help="skip the lambda ladder")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("oracle", help="point reference under the scenario's strain history")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--samples", type=int, default=1000, help="approximate number of written samples")
    p.add_argument("--halvings", type=int, default=3)
    p.add_argument("--lam", type=float, help="override yosida_lambda (0 selects the exact flow rule)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("lifting", help="solve and write the boundary-flux lifting")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_lifting)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Batch front end: validate | solve | sweep | check.

Everything a run needs except paths, seed, thread cap and output format
lives in a JSON config file, so studies re-run byte-identically from the
same config.  Commands write CSV surfaces, plot-ready data and JSON reports;
plotting itself happens elsewhere.

Exit codes: 0 success, 1 domain failure (assumption violated, solve or
check failed), 2 usage / IO / parse failure.

Config file shape (see the shipped problems for coefficient syntax):

    {
      "problem": "switch_2x2_jump" | "/path/to/problem.json" | {...inline...},
      "grid":   {"x_min": -2.0, "x_max": 2.0, "n_nodes": 101},
      "time":   {"n_steps": 50},
      "quadrature": {"n_atoms": 64, "radius": 1.0},
      "scheme": {"mode": "explicit", "cfl_factor": 1.0, "max_sweeps": 500},
      "solve":  {"system": "minmax", "mode": "direct",
                 "n": 4, "m": 4,                  # penalized only
                 "schedule": [1, 2, 4, 8]},       # limit modes only
      "sweep":  {"n_schedule": [1, 2, 4, 8], "m_schedule": [1, 2, 4, 8]},
      "check":  {"paths": 10000, "x0": 0.0, "n": 4, "m": 4,
                 "basis_degree": 3, "n_steps": 50},
      "output": {"levels": [0]}
    }
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import export, mc, oracle, pde_solver
from .discretization import SpatialGrid, TimeGrid, build_levy_quadrature
from .exprdsl import ExprError
from .model import (
    MalformedSpecError,
    ProblemSpec,
    load_builtin_problem,
    load_problem,
    validate_coefficient_bounds,
    validate_non_free_loop,
    validate_terminal_consistency,
)
from .pde_solver import (
    AssumptionViolationError,
    CflViolationError,
    SchemeConfig,
    ScheduleNonConvergenceError,
    SweepNonConvergenceError,
    solve_maxmin,
    solve_minmax,
    solve_penalized,
)

__all__ = ["main", "DEFAULT_SEED"]

DEFAULT_SEED = 20240901  # used when --seed is not given; documented for reproducibility

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

MAX_CHECK_STATES = 10_000


class UsageError(Exception):
    pass


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc


def _load_spec(cfg: dict, config_dir: Path) -> ProblemSpec:
    prob = cfg.get("problem")
    if prob is None:
        raise UsageError("config is missing 'problem'")
    if isinstance(prob, dict):
        return ProblemSpec.from_dict(prob)
    text = str(prob)
    candidate = (config_dir / text) if not Path(text).is_absolute() else Path(text)
    if candidate.exists():
        return load_problem(str(candidate))
    if Path(text).exists():
        return load_problem(text)
    try:
        return load_builtin_problem(text)
    except FileNotFoundError as exc:
        raise UsageError(f"problem '{text}' is neither a file nor a shipped instance") from exc


def _grids(cfg: dict, spec: ProblemSpec) -> tuple[SpatialGrid, TimeGrid]:
    g = cfg.get("grid", {})
    grid = SpatialGrid.line(float(g.get("x_min", -2.0)), float(g.get("x_max", 2.0)), int(g.get("n_nodes", 101)))
    t = cfg.get("time", {})
    tgrid = TimeGrid(horizon=spec.horizon, n_steps=int(t.get("n_steps", 50)))
    return grid, tgrid


def _quadrature(cfg: dict, spec: ProblemSpec):
    q = cfg.get("quadrature", {})
    return build_levy_quadrature(spec.levy, n_atoms=int(q.get("n_atoms", 64)), radius=q.get("radius"))


def _scheme(cfg: dict, override_a4: bool) -> SchemeConfig:
    s = cfg.get("scheme", {})
    return SchemeConfig(
        mode=s.get("mode", "explicit"),
        cfl_factor=float(s.get("cfl_factor", 1.0)),
        sweep_tol=float(s.get("sweep_tol", 0.0)),
        max_sweeps=int(s.get("max_sweeps", 500)),
        allow_terminal_inconsistency=override_a4,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory is not writable: {exc}") from exc
    return out


def cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    spec = _load_spec(cfg, Path(args.config).resolve().parent)
    grid, tgrid = _grids(cfg, spec)
    x = grid.axis()
    xs = [float(v) for v in x[:: max(1, len(x) // 16)]]
    ts = [0.0, 0.5 * spec.horizon, spec.horizon]
    points = [(t, xx) for t in ts for xx in xs]

    reports = [
        validate_non_free_loop(spec, points),
        validate_terminal_consistency(spec, x),
        validate_coefficient_bounds(spec, ts, x),
    ]
    payload = {"problem": spec.name, "reports": [r.to_dict() for r in reports], "passed": all(r.passed for r in reports)}
    out = _out_dir(args)
    export.write_json(payload, out / "validation.json")
    for r in reports:
        print(f"{r.name}: {'pass' if r.passed else 'FAIL'}")
        for v in r.violations[:3]:
            print(f"  violation: {v}")
        for w in r.warnings[:3]:
            print(f"  warning: {w}")
    return EXIT_OK if payload["passed"] else EXIT_DOMAIN


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    spec = _load_spec(cfg, Path(args.config).resolve().parent)
    grid, tgrid = _grids(cfg, spec)
    quad = _quadrature(cfg, spec)
    scheme = _scheme(cfg, args.override_a4)
    out = _out_dir(args)
    solve = cfg.get("solve", {})
    system = solve.get("system", "minmax")
    mode = solve.get("mode", "direct")

    t0 = time.perf_counter()
    if system == "penalized":
        traj, report = solve_penalized(spec, grid, tgrid, quad, float(solve.get("n", 1)), float(solve.get("m", 1)), scheme)
    elif system == "minmax":
        traj, report = solve_minmax(spec, grid, tgrid, quad, mode=mode, config=scheme, schedule=solve.get("schedule", pde_solver.DEFAULT_PENALTY_SCHEDULE))
    elif system == "maxmin":
        traj, report = solve_maxmin(spec, grid, tgrid, quad, mode=mode, config=scheme, schedule=solve.get("schedule", pde_solver.DEFAULT_PENALTY_SCHEDULE))
    else:
        raise UsageError(f"unknown system '{system}'")
    elapsed = time.perf_counter() - t0

    levels = cfg.get("output", {}).get("levels")
    files = export.trajectory_csv_files(traj, out, stem=f"{system}", levels=levels)
    (out / "plotdata.csv").write_text(export.plotdata_csv(traj, spec, level=0), encoding="utf-8")
    if args.format == "bin":
        export.write_binary_snapshot(traj, out / f"{system}.bin")
    elif args.format == "json":
        export.write_json(
            {"times": [float(t) for t in traj.times], "values": traj.values.tolist()},
            out / f"{system}_trajectory.json",
        )
    export.write_json({"report": report.to_dict(), "elapsed_s": elapsed, "files": [f.name for f in files]}, out / "solve_report.json")
    print(f"solved {system} ({mode}) in {elapsed:.2f}s; wrote {len(files)} level files to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    spec = _load_spec(cfg, Path(args.config).resolve().parent)
    grid, tgrid = _grids(cfg, spec)
    quad = _quadrature(cfg, spec)
    scheme = _scheme(cfg, args.override_a4)
    out = _out_dir(args)
    sw = cfg.get("sweep", {})
    n_sched = [float(v) for v in sw.get("n_schedule", [])]
    m_sched = [float(v) for v in sw.get("m_schedule", [])]
    if not n_sched or not m_sched:
        raise UsageError("sweep requires non-empty n_schedule and m_schedule")

    solves: dict[tuple[float, float], np.ndarray] = {}
    for n in n_sched:
        for m in m_sched:
            traj, _ = solve_penalized(spec, grid, tgrid, quad, n, m, scheme)
            solves[(n, m)] = traj.values

    violations = 0
    tol = 1e-10
    gap_rows = []
    for m in m_sched:
        for a, b in zip(n_sched[:-1], n_sched[1:]):
            diff = solves[(a, m)] - solves[(b, m)]  # should be <= 0
            violations += int(np.max(diff) > tol)
            gap_rows.append({"fixed": f"m={m}", "from": a, "to": b, "sup_gap": float(np.max(np.abs(diff)))})
    for n in n_sched:
        for a, b in zip(m_sched[:-1], m_sched[1:]):
            diff = solves[(n, b)] - solves[(n, a)]  # larger m -> smaller values
            violations += int(np.max(diff) > tol)
            gap_rows.append({"fixed": f"n={n}", "from": a, "to": b, "sup_gap": float(np.max(np.abs(diff)))})

    payload = {
        "n_schedule": n_sched,
        "m_schedule": m_sched,
        "monotonicity_violations": violations,
        "gaps": gap_rows,
    }
    export.write_json(payload, out / "sweep_report.json")
    lines = ["fixed,from,to,sup_gap"] + [f"{r['fixed']},{r['from']},{r['to']},{export.fmt_float(r['sup_gap'])}" for r in gap_rows]
    (out / "sweep_gaps.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sweep over {len(n_sched)}x{len(m_sched)} penalties: {violations} monotonicity violations")
    return EXIT_OK if violations == 0 else EXIT_DOMAIN


def cmd_check(args) -> int:
    cfg = _load_config(args.config)
    spec = _load_spec(cfg, Path(args.config).resolve().parent)
    grid, tgrid = _grids(cfg, spec)
    quad = _quadrature(cfg, spec)
    scheme = _scheme(cfg, args.override_a4)
    out = _out_dir(args)
    ck = cfg.get("check", {})
    n_states = grid.n_nodes[0] * spec.modes.m1 * spec.modes.m2
    if n_states > MAX_CHECK_STATES:
        raise UsageError(f"instance has {n_states} states; the cross-check caps at {MAX_CHECK_STATES}")

    seed = args.seed if args.seed is not None else DEFAULT_SEED
    results: dict = {"seed": seed}
    ok = True

    # dynamic-programming equivalence on both bilateral systems
    perturb = ck.get("stencil_perturbation")  # test hook: [step, row, col, amount]
    game = oracle.build_discrete_game(
        spec, grid, tgrid, quad, scheme, stencil_perturbation=tuple(perturb) if perturb else None
    )
    for order, solver in (("minmax", solve_minmax), ("maxmin", solve_maxmin)):
        traj, _ = solver(spec, grid, tgrid, quad, mode="direct", config=scheme)
        ind = oracle.backward_induction(game, order=order)
        diff = float(np.max(np.abs(traj.values - ind.values)))
        passed = diff <= 1e-10
        ok = ok and passed
        results[f"oracle_{order}"] = {"max_abs_diff": diff, "passed": passed}

    # Feynman-Kac cross-check on the penalized system
    n_pen = float(ck.get("n", 4))
    m_pen = float(ck.get("m", 4))
    x0 = float(ck.get("x0", 0.0))
    n_paths = int(ck.get("paths", 10_000))
    mc_tgrid = TimeGrid(horizon=spec.horizon, n_steps=int(ck.get("n_steps", tgrid.n_steps)))
    traj, _ = solve_penalized(spec, grid, tgrid, quad, n_pen, m_pen, scheme)
    batch = mc.simulate_paths(spec, quad, x0, n_paths, mc_tgrid, seed)
    estimate = mc.solve_bsde_regression(batch, spec, n_pen, m_pen, mc.RegressionBasis(int(ck.get("basis_degree", 3))))
    fk = mc.feynman_kac_check(traj, estimate, x0)
    ok = ok and fk.passed
    results["feynman_kac"] = fk.to_dict()

    results["passed"] = ok
    export.write_json(results, out / "check_report.json")
    for key in ("oracle_minmax", "oracle_maxmin"):
        print(f"{key}: {'pass' if results[key]['passed'] else 'FAIL'} (max diff {results[key]['max_abs_diff']:.2e})")
    print(f"feynman_kac: {'pass' if fk.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_DOMAIN


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchvi", description="Switching-game variational inequality solvers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("validate", cmd_validate), ("solve", cmd_solve), ("sweep", cmd_sweep), ("check", cmd_check)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
        p.add_argument("--threads", type=int, default=None, help="worker cap; the solvers are vectorized single-process, so any cap is honored")
        p.add_argument("--format", choices=("csv", "json", "bin"), default="csv")
        p.add_argument("--override-a4", action="store_true", help="proceed despite inconsistent terminal data (the report records the magnitude)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExprError, MalformedSpecError, json.JSONDecodeError) as exc:
        print(f"problem definition error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AssumptionViolationError, CflViolationError, SweepNonConvergenceError, ScheduleNonConvergenceError) as exc:
        print(f"domain failure: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

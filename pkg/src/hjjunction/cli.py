"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 CFL violation,
3 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from . import density_scheme as ds
from . import hj_scheme as hj
from . import verify as vf
from .density_scheme import GammaMode
from .junction import GridSpec, densities_from_labels
from .scenario import Scenario, ScenarioError, fmt, load_scenario, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_CFL, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("hjjunction")


class InvariantFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals[0], vals[1]


def _dt(text: str) -> float | None:
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dt must be 'auto' or seconds, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"dt must be positive, got {v}")
    return v


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if hasattr(args, "dt"):
        sc = dataclasses.replace(sc, grid=sc.grid.with_dt(args.dt))
    return sc


def _out_dir(args, sc: Scenario) -> Path:
    return Path(args.out or sc.outputs.out_dir)


def _require_fixed(sc: Scenario, what: str):
    if sc.gamma_policy.mode is not GammaMode.FIXED:
        raise ScenarioError(f"{what} needs fixed distribution coefficients; use run-density for '{sc.gamma_policy.mode.value}'")


def _run_hj(sc: Scenario, *, strict: bool, grid: GridSpec | None = None, **kw) -> hj.HJRun:
    grid = grid or sc.grid
    labels0, ghosts = hj.initial_state(sc.junction, grid, sc.initial)
    return hj.run(sc.junction, grid, labels0, ghosts, strict=strict, **kw)


def _branch_index(sc: Scenario, key: str) -> int:
    names = [b.name for b in sc.junction.branches]
    if key in names:
        return names.index(key)
    try:
        i = int(key)
    except ValueError:
        i = -1
    if not 0 <= i < len(names):
        raise ScenarioError(f"unknown branch {key!r}; branches are {names}")
    return i


# -- commands ---------------------------------------------------------------------

def cmd_run_hj(args) -> int:
    sc = _scenario(args)
    _require_fixed(sc, "the label scheme")
    run = _run_hj(sc, strict=args.strict, snapshot_times=sc.outputs.snapshot_times_s)
    files = write_outputs(run, sc, _out_dir(args, sc))
    print(f"label scheme: {run.n_steps} steps, dt={run.dt_s:.6g} s (max {run.cfl.dt_max_s:.6g} s), "
          f"{len(files)} files in {_out_dir(args, sc)}")
    if run.tracker.violations:
        print(f"{len(run.tracker.violations)} estimate violation(s); first: {run.tracker.violations[0]}")
    return EXIT_OK


def cmd_run_density(args) -> int:
    sc = _scenario(args)
    rho0, inflow = ds.initial_densities(sc.junction, sc.grid, sc.initial)
    run = ds.run_density(sc.junction, sc.grid, rho0, inflow, sc.gamma_policy,
                         snapshot_times=sc.outputs.snapshot_times_s)
    files = write_outputs(run, sc, _out_dir(args, sc))
    print(f"density scheme: {run.n_steps} steps, dt={run.dt_s:.6g} s (max {run.cfl.dt_max_s:.6g} s), "
          f"{len(files)} files in {_out_dir(args, sc)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    sc = _scenario(args)
    _require_fixed(sc, "verification")
    pr = vf.paired_runs(sc.junction, sc.grid, sc.initial, strict=False)
    est = vf.estimate_check(pr.hj)
    bracket = vf.bracket_check(sc.junction, sc.grid, sc.initial)
    n_b = min(sc.grid.n_cells(b) for b in sc.junction.branches)
    steps = args.steps or max(1, n_b // 2)
    mono = vf.monotonicity_trials(np.random.default_rng(args.seed), pairs=args.pairs, steps=steps,
                                  dx_m=sc.grid.dx_m, junction=sc.junction)
    checks = {
        "equivalence": (pr.discrepancy <= args.equiv_tol, f"max |rho_labels - rho_direct| = {pr.discrepancy:.3g} veh/km"),
        "conservation": (vf.conservation_defect(pr.density) <= 1e-10,
                         f"relative defect {vf.conservation_defect(pr.density):.3g}"),
        "m_nondecreasing": (est.m_nondecreasing, f"worst drop {est.worst_m_drop:.3g}"),
        "M_nonincreasing": (est.M_nonincreasing, f"worst rise {est.worst_M_rise:.3g}"),
        "gradient_bounds": (est.gradients_in_bounds, f"worst excess {est.worst_gradient_excess:.3g}"),
        "continuous_bracket": (bracket.ok, f"m00={bracket.m00:.6g} <= m0={bracket.m0:.6g}, "
                                           f"M0={bracket.M0:.6g} <= M00={bracket.M00:.6g}"),
        "monotonicity": (mono.violations == 0, f"{mono.violations} violation(s) over {mono.pairs} pairs x {mono.steps} steps "
                                                f"({mono.boundary_layer_violations} in the boundary layer, not checked)"),
    }
    failed = [k for k, (ok, _) in checks.items() if not ok]
    for k, (ok, msg) in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {k}: {msg}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = {k: {"ok": bool(ok), "detail": msg} for k, (ok, msg) in checks.items()}
        report["seed"] = args.seed
        (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    if args.strict and pr.hj.tracker.violations:
        raise hj.EstimateViolation(pr.hj.tracker.violations[0])
    if failed:
        raise InvariantFailure(f"failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_refine(args) -> int:
    sc = _scenario(args)
    _require_fixed(sc, "the refinement study")
    times = args.times or [t for t in sc.outputs.snapshot_times_s if t > 0]
    if not times:
        raise ScenarioError("no positive snapshot times to compare; pass --times")
    rep = analysis.refinement_study(sc.junction, sc.initial, args.levels, times, sc.grid.dt_s)
    rows = []
    for lv in rep.levels[:-1]:
        for t, du, dr in zip(rep.times_s, lv.label_diff, lv.density_diff):
            rows.append([fmt(lv.dx_m), fmt(t), fmt(du), fmt(dr)])
            print(f"dx={lv.dx_m:g} m vs next, t={t:g} s: labels {du:.6g}, densities {dr:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "refinement.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dx_m", "time_s", "label_diff", "density_diff"])
            w.writerows(rows)
    return EXIT_OK


def cmd_shock(args) -> int:
    sc = _scenario(args)
    _require_fixed(sc, "shock tracking")
    a = _branch_index(sc, args.branch)
    t0, t1 = args.window
    if not 0 <= t0 < t1:
        raise ScenarioError(f"window must satisfy 0 <= t0 < t1, got {t0}, {t1}")
    dt = sc.grid.dt_s
    if args.dx and not hasattr(args, "dt"):
        dt = None  # a fixed step tuned for the scenario's grid may break the CFL at a finer one
    grid = GridSpec(args.dx or sc.grid.dx_m, t1, dt)
    labels0, ghosts = hj.initial_state(sc.junction, grid, sc.initial)
    step = hj.resolve_dt(hj.compute_cfl_restrictive(sc.junction, grid, labels0, ghosts), grid.dt_s)
    # about 400 samples across the window
    every = max(1, int((t1 - t0) / step / 400))
    run = hj.run(sc.junction, grid, labels0, ghosts, record_every=every, strict=args.strict)
    fields = [ds.DensityField(densities_from_labels(sc.junction, run.grid, s.values), s.step, s.time_s)
              for s in run.snapshots.values() if t0 <= s.time_s <= t1]
    states = args.states
    if states is None and args.threshold is None:
        r = fields[0].values[a]
        states = (float(np.min(r)), float(np.max(r)))
    tr = analysis.track_shock(fields, sc.junction, run.grid.dx_m, a, threshold=args.threshold,
                              states=states, window=(t0, t1))
    print(f"branch {sc.junction.branches[a].name}: front speed {tr.speed_kmh:.6g} km/h "
          f"({len(tr.times_s)} samples, fit residual {tr.residual_m:.3g} m)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"shock_{sc.junction.branches[a].name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "x_m"])
            w.writerows([fmt(t), fmt(x)] for t, x in zip(tr.times_s, tr.positions_m))
    return EXIT_OK


def cmd_trajectories(args) -> int:
    sc = _scenario(args)
    _require_fixed(sc, "trajectory extraction")
    run = _run_hj(sc, strict=args.strict, record_every=args.every)
    paths = analysis.vehicle_trajectories(run.snapshots.values(), sc.junction, run.grid.dx_m, args.labels)
    names = [b.name for b in sc.junction.branches]
    out = _out_dir(args, sc)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "branch_in", "branch_out", "time_s", "x_m"])
        for p in paths:
            bi = names[p.branch_in] if p.branch_in is not None else ""
            bo = names[p.branch_out] if p.branch_out is not None else ""
            w.writerows([fmt(p.label), bi, bo, fmt(t), fmt(x)] for t, x in zip(p.times_s, p.x_m))
    print(f"{len(paths)} path(s) for {len(args.labels)} label(s) written to {out / 'trajectories.csv'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario file, or the name of a bundled one (e.g. table1.scenario)")
    common.add_argument("--out", help="output directory (default: the scenario's out_dir)")
    common.add_argument("--dt", type=_dt, default=argparse.SUPPRESS,
                        help="time step: 'auto' or seconds (default: as in the scenario)")
    common.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                        help="treat estimate violations as fatal (default) or only warn")

    p = _Parser(prog="hjjunction", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("run-hj", parents=[common], help="label scheme plus derived densities")
    s.set_defaults(func=cmd_run_hj)
    s = sub.add_parser("run-density", parents=[common], help="direct Godunov density scheme")
    s.set_defaults(func=cmd_run_density)

    s = sub.add_parser("verify", parents=[common], help="equivalence, invariants and monotonicity")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, default=20, help="ordered pairs for the monotonicity test")
    s.add_argument("--steps", type=int, default=None, help="steps per pair (default: half the shortest branch)")
    s.add_argument("--equiv-tol", type=float, default=1e-8)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("refine", parents=[common], help="grid refinement study")
    s.add_argument("--levels", type=_floats, default=[5.0, 2.5, 1.25], help="dx levels in m, coarse to fine")
    s.add_argument("--times", type=_floats, default=None, help="comparison times in s")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("shock", parents=[common], help="track a density front")
    s.add_argument("--branch", required=True, help="branch name or index")
    s.add_argument("--window", type=_pair, required=True, help="t0,t1 in s")
    s.add_argument("--states", type=_pair, default=None, help="left,right densities of the front")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--dx", type=float, default=None, help="space step override in m")
    s.set_defaults(func=cmd_shock)

    s = sub.add_parser("trajectories", parents=[common], help="iso-label vehicle paths")
    s.add_argument("--labels", type=_floats, required=True)
    s.add_argument("--every", type=int, default=1, help="sample every n steps")
    s.set_defaults(func=cmd_trajectories)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except hj.CFLViolation as exc:
        print(f"CFL violation: {exc}", file=sys.stderr)
        return EXIT_CFL
    except (hj.EstimateViolation, InvariantFailure) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

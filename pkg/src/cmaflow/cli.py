"""Command line: ``cmaflow check|run|continuity|verify``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import continuity as cont
from . import verify as vf
from .flow import (FlowConfig, extract_b, fit_w_bound, normalize_hat, run, snapshot_write,
                   write_csv)
from .functionals import (fit_decay_trajectory, harnack_series,
                          oscillation_contraction_trajectory)
from .grid import set_fft_workers
from .hermitian import cone_condition
from .operator import admissible, chi_u, density_ratio, invariant_c
from .scenario import ScenarioError, load

log = logging.getLogger("cmaflow")

REPORT_SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# nested dicts with a fixed key set; lists of such dicts use the same mechanism
REPORT_KEYS = {
    "": {"schema_version", "scenario", "reason", "converged", "message", "steps", "rejections",
         "t_final", "b", "residual", "invariant_c", "decay_fit", "contraction", "harnack",
         "w_bound", "checks"},
    "decay_fit": {"C", "c0", "r_squared", "window"},
    "harnack": {"xi", "eta"},
    "harnack.entry": {"m", "t1", "t2", "sup_at_t1", "inf_at_t2", "implied_constant"},
    "w_bound": {"C", "A"},
    "checks": {"max_principle", "j_monotone", "u_monotone", "sup_u_hat_nonnegative"},
    "check": {"applicable", "passed", "worst"},
}


class ReportError(ValueError):
    pass


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _check(applicable, passed, worst):
    return {"applicable": bool(applicable), "passed": bool(passed) if applicable else None,
            "worst": _finite(worst) if applicable else None}


def flow_checks(traj, data, slack: float = 1e-8) -> dict:
    st = traj.steps
    up = float(np.max(np.diff(st["sup_F"]), initial=-np.inf))
    down = float(np.max(-np.diff(st["inf_F"]), initial=-np.inf))
    worst_mp = max(up, down)
    checks = {"max_principle": _check(True, worst_mp <= slack, worst_mp)}

    c = invariant_c(data)
    kahler_ge_c = data.is_kahler and bool(np.all(data.psi >= c))
    t = traj.column("t")
    J = traj.column("J_alpha")
    if kahler_ge_c and len(t) > 1 and np.all(np.isfinite(J)):
        rate = float(np.max(np.diff(J) / np.diff(t)))
        after = float(np.max(J[1:]))
        checks["j_monotone"] = _check(True, rate <= slack and after <= slack, max(rate, after))
    else:
        checks["j_monotone"] = _check(False, None, None)

    ratio0 = density_ratio(data, chi_u(data, data.grid.zeros()))
    if bool(np.all(ratio0 <= data.psi)) and len(t) > 1:
        su, iu = traj.column("sup_u"), traj.column("inf_u")
        worst = float(max(np.max(np.diff(su)), np.max(np.diff(iu))))
        checks["u_monotone"] = _check(True, worst <= slack, worst)
    else:
        checks["u_monotone"] = _check(False, None, None)

    if data.is_kahler:
        sup_hat = float(np.max(normalize_hat(traj.final_state.u, data)))
        checks["sup_u_hat_nonnegative"] = _check(True, sup_hat >= -slack, sup_hat)
    else:
        checks["sup_u_hat_nonnegative"] = _check(False, None, None)
    return checks


def build_report(traj, data, name: str = "") -> dict:
    b = residual = None
    if traj.converged:
        b, residual = extract_b(traj, data)
    try:
        fit = fit_decay_trajectory(traj)
        decay = {"C": fit.C, "c0": fit.c0, "r_squared": fit.r_squared, "window": list(fit.window)}
    except ValueError:
        decay = None
    try:
        contraction = [[m, r] for m, r in oscillation_contraction_trajectory(traj)]
    except ValueError:
        contraction = []
    harnack = {}
    for kind in ("xi", "eta"):
        harnack[kind] = [{"m": m, "t1": r.t1, "t2": r.t2, "sup_at_t1": r.sup_at_t1,
                          "inf_at_t2": r.inf_at_t2, "implied_constant": r.implied_constant}
                         for m, r in harnack_series(traj, kind)]
    C, A = fit_w_bound(traj)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": name,
        "reason": traj.reason,
        "converged": traj.converged,
        "message": traj.message,
        "steps": int(len(traj.steps["t"]) - 1),
        "rejections": int(traj.rejections),
        "t_final": float(traj.final_state.t),
        "b": b,
        "residual": residual,
        "invariant_c": invariant_c(data),
        "decay_fit": decay,
        "contraction": contraction,
        "harnack": harnack,
        "w_bound": {"C": C, "A": A},
        "checks": flow_checks(traj, data),
    }


def _validate(obj, key: str):
    if not isinstance(obj, dict):
        raise ReportError(f"report section '{key or 'top'}' is not an object")
    expected = REPORT_KEYS[key]
    unknown = set(obj) - expected
    missing = expected - set(obj)
    if unknown:
        raise ReportError(f"unknown report fields in '{key or 'top'}': {sorted(unknown)}")
    if missing:
        raise ReportError(f"missing report fields in '{key or 'top'}': {sorted(missing)}")


def validate_report(rep: dict) -> dict:
    _validate(rep, "")
    if rep["schema_version"] != REPORT_SCHEMA_VERSION:
        raise ReportError(f"unsupported report schema version {rep['schema_version']!r}")
    if rep["decay_fit"] is not None:
        _validate(rep["decay_fit"], "decay_fit")
    _validate(rep["harnack"], "harnack")
    for kind in ("xi", "eta"):
        for entry in rep["harnack"][kind]:
            _validate(entry, "harnack.entry")
    _validate(rep["w_bound"], "w_bound")
    _validate(rep["checks"], "checks")
    for v in rep["checks"].values():
        _validate(v, "check")
    return rep


def write_report(rep: dict, path) -> None:
    validate_report(rep)
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, allow_nan=False)


def read_report(path) -> dict:
    with open(path) as fh:
        return validate_report(json.load(fh))


# -- commands

def _subsolution_form(sc, data):
    u_sub = sc.subsolution()
    return (data.chi if u_sub is None else chi_u(data, u_sub)), u_sub


def cmd_check(sc, out=None) -> int:
    out = out or sys.stdout
    data = sc.build()
    chip, _ = _subsolution_form(sc, data)
    cone = cone_condition(chip, data.omega, data.psi, data.alpha, Linv=data.Linv)
    c = invariant_c(data)
    psi_ge_c = bool(np.all(data.psi >= c))
    ratio0 = density_ratio(data, chi_u(data, data.grid.zeros()))
    ratio_le = bool(np.all(ratio0 <= data.psi))
    adm, least = admissible(data, data.grid.zeros())
    results = {"cone": cone.satisfied, "admissible": adm, "psi_ge_c": psi_ge_c,
               "ratio_le_psi": ratio_le}
    print(f"cone condition      : {'satisfied' if cone.satisfied else 'violated'} "
          f"(margin {cone.margin:.6g} at {cone.worst_point})", file=out)
    print(f"invariant c         : {c:.12g}", file=out)
    print(f"psi >= c            : {psi_ge_c} (inf psi = {float(data.psi.min()):.12g})", file=out)
    print(f"ratio(u=0) <= psi   : {ratio_le}", file=out)
    print(f"u = 0 admissible    : {adm} (least eigenvalue {least:.6g})", file=out)
    failed = [k for k in sc.checks if not results[k]]
    print(f"required            : {', '.join(sc.checks) or '-'} -> "
          f"{'ok' if not failed else 'FAILED: ' + ', '.join(failed)}", file=out)
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_run(sc, out_dir, skip_cone_check=False, out=None) -> int:
    out = out or sys.stdout
    data = sc.build()
    os.makedirs(out_dir, exist_ok=True)
    if not skip_cone_check:
        chip, _ = _subsolution_form(sc, data)
        cone = cone_condition(chip, data.omega, data.psi, data.alpha, Linv=data.Linv)
        if not cone.satisfied:
            print(f"cone condition violated (margin {cone.margin:.6g}); "
                  f"use --skip-cone-check to run anyway", file=out)
            return EXIT_FAIL
    traj = run(data, sc.flow)
    write_csv(traj, os.path.join(out_dir, "diagnostics.csv"))
    if traj.snapshots:
        snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for k, state in enumerate(traj.snapshots):
            snapshot_write(state, data, os.path.join(snap_dir, f"snap_{k:04d}.bin"))
    rep = build_report(traj, data, sc.name)
    write_report(rep, os.path.join(out_dir, "report.json"))
    print(f"{traj.reason}: t = {traj.final_state.t:.6g}, rows = {len(traj.rows)}", file=out)
    if rep["b"] is not None:
        print(f"b = {rep['b']:.12g}, residual = {rep['residual']:.3e}", file=out)
    return EXIT_OK if traj.converged else EXIT_FAIL


def _print_path(path, out):
    print(f"delta = {path.delta:.6g}, kappa = {path.kappa:.12g}, eps = {path.eps:.6g}, "
          f"b0 = {path.b0:.12g}", file=out)
    for nd in path.nodes:
        print(f"  s = {nd.s:.6f}  b_s = {nd.b: .12g}  residual = {nd.residual:.3e}", file=out)
    print(f"{path.reason}{': ' + path.message if path.message else ''}", file=out)


def cmd_continuity(sc, out_dir=None, resume=None, out=None) -> int:
    out = out or sys.stdout
    data = sc.build()
    iters = int(sc.continuity.get("delta_bisection_iters", 40))
    if resume:
        path = cont.load_path(resume)
        out_dir = out_dir or os.path.dirname(os.path.abspath(resume))
    elif out_dir is None:
        raise ScenarioError("continuity needs --out or --resume")
    else:
        path = None

    def checkpoint(p):
        cont.save_path(p, data.grid, out_dir)

    try:
        if path is None:
            _, u_sub = _subsolution_form(sc, data)
            path = cont.start_path(data, sc.flow, u_sub=u_sub, iters=iters)
            checkpoint(path)
        path = cont.march(data, path, sc.flow, checkpoint=checkpoint)
    except cont.ContinuityError as exc:
        print(f"continuity failed: {exc}", file=out)
        if path is not None:
            path.reason = path.reason if path.reason != "running" else "failed"
            checkpoint(path)
        return EXIT_FAIL
    checkpoint(path)
    _print_path(path, out)
    return EXIT_OK if path.complete else EXIT_FAIL


def cmd_verify(seed=None, quick=False, out=None) -> int:
    out = out or sys.stdout
    results = vf.run_suites(quick=quick) if seed is None else _seeded_suites(seed, quick)
    print(vf.format_table(results), file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _seeded_suites(seed, quick):
    k = 1_000 if quick else 10_000
    return [vf.suite_symmetric(k, seed), vf.suite_mixed_discriminant(k, seed + 1),
            vf.suite_wedge_multilinear(k // 5, seed + 2), vf.suite_cone_reduction(k, seed + 3),
            vf.suite_eigenvalues(k, seed + 4), vf.suite_hessian(seed=seed + 5),
            vf.suite_ratio_derivative(seed=seed + 6), vf.suite_path_independence(seed=seed + 7)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cmaflow",
                                description="Parabolic Monge-Ampere type flow on flat complex tori.")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("check", parents=[common], help="check the hypotheses of a scenario")
    c.add_argument("scenario")
    r = sub.add_parser("run", parents=[common], help="run the flow to convergence")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    r.add_argument("--skip-cone-check", action="store_true")
    m = sub.add_parser("continuity", parents=[common], help="method of continuity solve")
    m.add_argument("scenario")
    m.add_argument("--out")
    m.add_argument("--resume", metavar="MANIFEST")
    v = sub.add_parser("verify", parents=[common], help="run the oracle suites")
    v.add_argument("--quick", action="store_true", help="1e3 instances instead of 1e4")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_fft_workers(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "verify":
        return cmd_verify(args.seed, args.quick)
    try:
        sc = load(args.scenario)
        if args.seed is not None:
            sc.seed = args.seed
        if args.command == "check":
            return cmd_check(sc)
        if args.command == "run":
            return cmd_run(sc, args.out, args.skip_cone_check)
        return cmd_continuity(sc, args.out, args.resume)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Method of continuity through the family psi^s psi0^{1-s} e^{b_s}, solved stage by stage with the flow."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowConfig, extract_b, normalize_tilde, run
from .grid import lowpass
from .hermitian import cone_condition
from .io import read_fields, write_fields
from .operator import ProblemData, chi_u, density_ratio, operator_value

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class ContinuityError(RuntimeError):
    pass


@dataclass
class ContinuityNode:
    s: float
    u: np.ndarray = field(repr=False)
    b: float
    residual: float
    dt: float = 0.0


@dataclass
class ContinuityPath:
    psi0: np.ndarray = field(repr=False)
    delta: float
    kappa: float
    eps: float
    b0: float = math.nan
    nodes: list = field(default_factory=list)
    reason: str = "running"
    message: str = ""

    @property
    def complete(self) -> bool:
        return bool(self.nodes) and self.nodes[-1].s == 1.0

    @property
    def s_values(self):
        return [nd.s for nd in self.nodes]


def _max_cone_shift(chip, data: ProblemData, base, iters: int) -> float:
    """Largest d (by bisection) with the cone condition holding at base + d."""
    def ok(d):
        return cone_condition(chip, data.omega, base + d, data.alpha, Linv=data.Linv).satisfied

    if not ok(0.0):
        rep = cone_condition(chip, data.omega, base, data.alpha, Linv=data.Linv)
        raise ContinuityError(f"cone condition fails at max(psi, phi_sub): margin {rep.margin:.3e} "
                              f"at {rep.worst_point}")
    hi = float(np.max(base))
    cap = 1e8 * (1.0 + hi)
    while ok(hi):
        # alpha = n never binds; cap the bracket
        if hi >= cap:
            return cap
        hi *= 2.0
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def build_psi0(data: ProblemData, chip=None, iters: int = 40):
    """(psi0, delta) with max(psi, phi_sub) <= psi0 <= max(psi, phi_sub) + delta.

    ``chip`` is the subsolution form chi' (default chi). delta is half of
    the largest shift keeping the cone condition at max(psi, phi_sub).
    psi0 is a low-passed copy of max(psi, phi_sub) + delta/2; the filter
    starts strong and is relaxed until the result stays inside the bracket.
    """
    chip = data.chi if chip is None else chip
    grid = data.grid
    phi_sub = np.broadcast_to(density_ratio(data, chip), grid.shape)
    base = np.maximum(data.psi, phi_sub)
    delta = 0.5 * _max_cone_shift(chip, data, base, iters)
    if not delta > 0:
        raise ContinuityError("cone margin too small: delta = 0")
    lo, hi = base, base + delta
    k_unit = 2 * np.pi / max(grid.periods)
    k_max = math.pi / min(grid.spacing)
    cutoff = k_unit
    while cutoff <= 4 * k_max:
        cand = lowpass(grid, base, cutoff) + 0.5 * delta
        if np.all(cand >= lo) and np.all(cand <= hi):
            return np.clip(cand, lo, hi), delta
        cutoff *= 2.0
    raise ContinuityError("smoothed psi0 leaves the bracket for every filter cutoff")


def _stage_config(config: FlowConfig, dt_init=None) -> FlowConfig:
    return dataclasses.replace(config, with_j=False, mark_spacing=None, snapshot_every=0,
                               dt_init=dt_init)


def _solve(data: ProblemData, config: FlowConfig, u_start, dt_init=None):
    traj = run(data, _stage_config(config, dt_init), u_start)
    if not traj.converged:
        raise ContinuityError(f"flow did not converge ({traj.reason}) {traj.message}".strip())
    b, _ = extract_b(traj, data)
    state = traj.final_state
    return normalize_tilde(state.u, data), b, state.dt_last


def node_residual(data: ProblemData, u, s: float, psi0, b: float) -> float:
    """max |ln(chi_u^n / chi_u^{n-a} ^ omega^a) - ln(psi^s psi0^{1-s}) - b|."""
    target = np.exp(s * data.log_psi + (1 - s) * np.log(psi0))
    F = operator_value(data.with_psi(target), u).F
    return float(np.max(np.abs(F - b)))


def solve_stage0(data: ProblemData, psi0, config: FlowConfig | None = None, u_start=None):
    """(u0, b0, dt) solving chi_u^n = psi0 e^{b0} chi_u^{n-a} ^ omega^a, u0 mean-normalised."""
    cfg = config or FlowConfig()
    u_start = data.grid.zeros() if u_start is None else np.asarray(u_start, dtype=float)
    start_ratio = density_ratio(data, chi_u(data, u_start))
    if np.any(start_ratio > psi0 * (1 + 1e-12)):
        raise ContinuityError("starting density exceeds psi0 somewhere")
    u0, b0, dt = _solve(data.with_psi(psi0), cfg, u_start)
    if b0 > 1e-8:
        raise ContinuityError(f"stage 0 constant b0 = {b0:.3e} is positive")
    return u0, b0, dt


def step_rule(data: ProblemData, psi0, delta: float):
    """(kappa, eps): kappa = 1 + delta/(2 sup psi0), eps = -ln kappa / inf(ln psi - ln psi0)."""
    kappa = 1.0 + delta / (2.0 * float(np.max(psi0)))
    gap = float(np.min(data.log_psi - np.log(psi0)))
    eps = math.inf if gap >= -1e-14 else -math.log(kappa) / gap
    return kappa, eps


def start_path(data: ProblemData, config: FlowConfig | None = None, chip=None, u_sub=None,
               psi0=None, iters: int = 40) -> ContinuityPath:
    """Build psi0, fix (kappa, eps) and solve the s = 0 stage."""
    cfg = config or FlowConfig()
    if u_sub is not None and chip is None:
        chip = chi_u(data, u_sub)
    if psi0 is None:
        psi0, delta = build_psi0(data, chip, iters)
    else:
        psi0 = np.broadcast_to(np.asarray(psi0, dtype=float), data.grid.shape).copy()
        base = np.maximum(data.psi, np.broadcast_to(
            density_ratio(data, data.chi if chip is None else chip), data.grid.shape))
        delta = 0.5 * _max_cone_shift(data.chi if chip is None else chip, data, base, iters)
    kappa, eps = step_rule(data, psi0, delta)
    path = ContinuityPath(psi0, delta, kappa, eps)
    u0, b0, dt = solve_stage0(data, psi0, cfg, u_sub)
    path.b0 = b0
    # psi == psi0: the s = 0 and s = 1 equations coincide
    s = 1.0 if math.isinf(eps) else 0.0
    path.nodes.append(ContinuityNode(s, u0, b0, node_residual(data, u0, s, psi0, b0), dt))
    if s == 1.0:
        path.reason = "complete"
    return path


def lower_bound(path: ContinuityPath, s: float, gap: float) -> float:
    """b_0 + s inf(ln psi0 - ln psi), from comparing u_s with u_0 at the minimum of u_s - u_0."""
    return path.b0 + s * gap


def march(data: ProblemData, path: ContinuityPath, config: FlowConfig | None = None,
          slack: float | None = None, checkpoint=None, max_nodes: int | None = None) -> ContinuityPath:
    """Advance s by eps until s = 1, one converged flow per node.

    Each stage runs the flow towards kappa psi^s psi0^{1-s} from the previous
    node's solution; the recorded b_s absorbs ln kappa. A flow failure ends
    the march with a partial path. ``checkpoint(path)`` is called after
    every accepted node; ``max_nodes`` stops early (used to test resuming).
    """
    cfg = config or FlowConfig()
    slack = 10 * cfg.tol_osc if slack is None else slack
    gap = float(np.min(np.log(path.psi0) - data.log_psi))
    added = 0
    while not path.complete:
        if max_nodes is not None and added >= max_nodes:
            path.reason = "paused"
            return path
        prev = path.nodes[-1]
        s = min(1.0, prev.s + path.eps)
        target = path.kappa * np.exp(s * data.log_psi + (1 - s) * np.log(path.psi0))
        try:
            u, b_flow, dt = _solve(data.with_psi(target), cfg, prev.u, dt_init=prev.dt)
        except ContinuityError as exc:
            path.reason, path.message = "flow_failure", f"at s={s:.6g}: {exc}"
            log.warning("continuity stopped %s", path.message)
            return path
        b = b_flow + math.log(path.kappa)
        if b > slack:
            path.reason = "bound_violation"
            path.message = f"b_s = {b:.3e} > 0 at s={s:.6g}"
            raise ContinuityError(path.message)
        lower = lower_bound(path, s, gap)
        if b < lower - slack:
            log.warning("b_s = %.3e below the lower bound %.3e at s=%.6g", b, lower, s)
        path.nodes.append(ContinuityNode(s, u, b, node_residual(data, u, s, path.psi0, b), dt))
        added += 1
        if checkpoint is not None:
            checkpoint(path)
    path.reason = "complete"
    return path


def solve(data: ProblemData, config: FlowConfig | None = None, chip=None, u_sub=None,
          psi0=None, checkpoint=None) -> ContinuityPath:
    path = start_path(data, config, chip, u_sub, psi0)
    if checkpoint is not None:
        checkpoint(path)
    return march(data, path, config, checkpoint=checkpoint)


# -- checkpoints: one snapshot per node plus a JSON manifest

def save_path(path: ContinuityPath, grid, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    write_fields(os.path.join(out_dir, "psi0.bin"), grid, 0.0, {"psi0": path.psi0})
    nodes = []
    for k, nd in enumerate(path.nodes):
        name = f"node_{k:04d}.bin"
        write_fields(os.path.join(out_dir, name), grid, nd.s, {"u": nd.u})
        nodes.append({"s": nd.s, "b": nd.b, "residual": nd.residual, "dt": nd.dt,
                      "snapshot": name})
    manifest = {"version": MANIFEST_VERSION, "kappa": path.kappa,
                "eps": None if math.isinf(path.eps) else path.eps,
                "delta": path.delta, "b0": path.b0, "psi0": "psi0.bin",
                "reason": path.reason, "nodes": nodes}
    mpath = os.path.join(out_dir, "manifest.json")
    tmp = mpath + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2)
    os.replace(tmp, mpath)
    return mpath


def load_path(manifest_path) -> ContinuityPath:
    with open(manifest_path) as fh:
        m = json.load(fh)
    if m.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {m.get('version')!r}")
    root = os.path.dirname(os.path.abspath(manifest_path))
    _, _, f, _ = read_fields(os.path.join(root, m["psi0"]))
    eps = math.inf if m["eps"] is None else m["eps"]
    path = ContinuityPath(f["psi0"], m["delta"], m["kappa"], eps, m["b0"], reason=m["reason"])
    for nd in m["nodes"]:
        _, _, g, _ = read_fields(os.path.join(root, nd["snapshot"]))
        path.nodes.append(ContinuityNode(nd["s"], g["u"], nd["b"], nd["residual"], nd["dt"]))
    return path

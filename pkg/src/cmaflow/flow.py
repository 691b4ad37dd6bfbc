"""Explicit time integration of du/dt = ln(chi_u^n / (chi_u^{n-a} ^ omega^a)) - ln psi."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .grid import integrate
from .io import read_fields, write_fields
from .operator import ProblemData, OperatorValue, chi_u, diffusion_matrix, operator_value
from .functionals import j_alpha_closed, mixed_volume

log = logging.getLogger(__name__)

MAX_REJECTIONS = 20


class FlowError(RuntimeError):
    reason = "failure"


class ConeExitError(FlowError):
    reason = "cone_exit"


class InstabilityError(FlowError):
    reason = "instability"


@dataclass
class FlowState:
    """One instant of the flow; ``X`` = chi_u is filled on demand by :func:`ensure_X`."""

    u: np.ndarray
    t: float
    F: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    dt_last: float = 0.0
    rejected: int = 0
    X: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_value(cls, u, t, ov: OperatorValue, dt_last=0.0, rejected=0):
        return cls(u, float(t), ov.F, ov.eigenvalues, float(dt_last), rejected)


def ensure_X(state: FlowState, data: ProblemData) -> np.ndarray:
    if state.X is None:
        state.X = chi_u(data, state.u)
    return state.X


def initial_state(data: ProblemData, u0=None, t: float = 0.0) -> FlowState:
    u = data.grid.zeros() if u0 is None else np.array(u0, dtype=float)
    ov = operator_value(data, u)
    return FlowState.from_value(u, t, ov)


def _rk4(state: FlowState, data: ProblemData, dt: float):
    k1 = state.F
    ov2 = operator_value(data, state.u + 0.5 * dt * k1, strict=False)
    if not ov2.admissible:
        return None
    ov3 = operator_value(data, state.u + 0.5 * dt * ov2.F, strict=False)
    if not ov3.admissible:
        return None
    ov4 = operator_value(data, state.u + dt * ov3.F, strict=False)
    if not ov4.admissible:
        return None
    u_new = state.u + (dt / 6.0) * (k1 + 2.0 * ov2.F + 2.0 * ov3.F + ov4.F)
    if not np.all(np.isfinite(u_new)):
        raise InstabilityError(f"non-finite values at t={state.t + dt:.6g}")
    ov = operator_value(data, u_new, strict=False)
    if not ov.admissible:
        return None
    if not np.all(np.isfinite(ov.F)):
        raise InstabilityError(f"non-finite operator value at t={state.t + dt:.6g}")
    return u_new, ov


def step(state: FlowState, data: ProblemData, dt: float) -> FlowState:
    """One classical RK4 step; halves dt on leaving the cone (at most 20 times)."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    for attempt in range(MAX_REJECTIONS + 1):
        out = _rk4(state, data, dt)
        if out is not None:
            u_new, ov = out
            return FlowState.from_value(u_new, state.t + dt, ov, dt_last=dt, rejected=attempt)
        dt *= 0.5
    raise ConeExitError(f"step from t={state.t:.6g} left the admissible cone "
                        f"after {MAX_REJECTIONS} halvings")


def stable_dt(state: FlowState, data: ProblemData, safety: float = 0.2) -> float:
    """safety * h_min^2 / (4 n Lambda) with Lambda the largest eigenvalue of G^{i jbar}."""
    if not safety > 0:
        raise ValueError("safety factor must be positive")
    P = diffusion_matrix(data, state.u)
    lam_max = float(np.linalg.eigvalsh(P)[..., -1].max())
    return safety * data.grid.h_min ** 2 / (4 * data.n * lam_max)


def normalize_tilde(u, data: ProblemData) -> np.ndarray:
    """u minus its omega^n-weighted mean."""
    g = data.grid
    return u - integrate(g, u, data.vol) / integrate(g, np.ones(g.shape), data.vol)


def normalize_hat(u, data: ProblemData) -> np.ndarray:
    """u - J_alpha(u) / int chi^{n-a} ^ omega^a."""
    return u - j_alpha_closed(u, data) / mixed_volume(data)


def w_field(state: FlowState) -> np.ndarray:
    """Delta_omega u + tr_omega chi = tr_omega chi_u."""
    return state.eigenvalues.sum(axis=-1)


def monitor_w(state: FlowState, data: ProblemData = None) -> float:
    return float(w_field(state).max())


def mean_F(state: FlowState, data: ProblemData) -> float:
    g = data.grid
    return integrate(g, state.F, data.vol) / integrate(g, np.ones(g.shape), data.vol)


CSV_HEADER = ("t", "sup_F", "inf_F", "osc_F", "J_alpha", "sup_u", "inf_u",
              "osc_u", "w_max", "b_estimate", "dt")


@dataclass
class DiagnosticsRow:
    t: float
    sup_F: float
    inf_F: float
    osc_F: float
    J_alpha: float
    sup_u: float
    inf_u: float
    osc_u: float
    w_max: float
    b_estimate: float
    dt: float

    def values(self):
        return tuple(getattr(self, f.name) for f in fields(self))


def diagnostics(state: FlowState, data: ProblemData, dt: float, with_j: bool = True) -> DiagnosticsRow:
    sF, iF = float(state.F.max()), float(state.F.min())
    su, iu = float(state.u.max()), float(state.u.min())
    J = j_alpha_closed(state.u, data) if with_j else math.nan
    return DiagnosticsRow(state.t, sF, iF, sF - iF, J, su, iu, su - iu,
                          monitor_w(state), mean_F(state, data), float(dt))


@dataclass
class FlowConfig:
    dt_safety: float = 0.2
    t_max: float = 50.0
    tol_osc: float = 1e-8
    sample_every: int = 10
    snapshot_every: int = 0
    converge_samples: int = 3
    dt0: float | None = None
    dt_init: float | None = None
    mark_spacing: float | None = 0.5
    with_j: bool = True
    w_samples: int = 2048


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    reason: str = "running"
    message: str = ""
    steps: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    marks: dict = field(default_factory=dict)
    w_samples: list = field(default_factory=list)
    final_state: FlowState | None = None
    rejections: int = 0

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def run(data: ProblemData, config: FlowConfig | None = None, u0=None) -> Trajectory:
    """Integrate from ``u0`` (default 0) until osc F < tol for a few samples or t_max.

    Flow failures end the run with ``reason`` set to ``cone_exit`` or
    ``instability``; the partial trajectory is returned.
    """
    cfg = config or FlowConfig()
    state = initial_state(data, u0)
    traj = Trajectory()
    dt_cap = cfg.dt0 if cfg.dt0 else stable_dt(state, data, cfg.dt_safety)
    dt = min(dt_cap, cfg.dt_init) if cfg.dt_init else dt_cap
    st = {"t": [state.t], "sup_F": [float(state.F.max())], "inf_F": [float(state.F.min())],
          "dt": [0.0], "rejected": [0]}
    running_inf = float(state.u.min())
    stride = max(1, state.u.size // cfg.w_samples)

    def record(s, dt_used):
        nonlocal running_inf
        running_inf = min(running_inf, float(s.u.min()))
        traj.rows.append(diagnostics(s, data, dt_used, cfg.with_j))
        w = w_field(s).ravel()[::stride]
        d = s.u.ravel()[::stride] - running_inf
        traj.w_samples.append((s.t, d.copy(), np.log(w)))
        if cfg.snapshot_every and (len(traj.rows) - 1) % cfg.snapshot_every == 0:
            traj.snapshots.append(s)

    marks = []
    if cfg.mark_spacing:
        marks = list(np.arange(0.0, cfg.t_max + 1e-12, cfg.mark_spacing))
    next_mark = 0

    def visit_marks(s):
        nonlocal next_mark
        while next_mark < len(marks) and s.t >= marks[next_mark] - 1e-12:
            traj.marks[float(marks[next_mark])] = (s.t, s.F.copy())
            next_mark += 1

    record(state, dt)
    visit_marks(state)
    streak = 1 if traj.rows[-1].osc_F < cfg.tol_osc else 0
    nsteps = 0
    while True:
        if streak >= cfg.converge_samples:
            traj.reason = "converged"
            break
        if state.t >= cfg.t_max - 1e-12:
            traj.reason = "t_max"
            break
        h = min(dt, cfg.t_max - state.t)
        try:
            new = step(state, data, h)
        except FlowError as exc:
            traj.reason, traj.message = exc.reason, str(exc)
            log.warning("flow stopped: %s", exc)
            break
        nsteps += 1
        traj.rejections += new.rejected
        if new.rejected:
            dt = new.dt_last
        st["t"].append(new.t)
        st["sup_F"].append(float(new.F.max()))
        st["inf_F"].append(float(new.F.min()))
        st["dt"].append(new.dt_last)
        st["rejected"].append(new.rejected)
        state = new
        visit_marks(state)
        if nsteps % cfg.sample_every == 0:
            record(state, state.dt_last)
            streak = streak + 1 if traj.rows[-1].osc_F < cfg.tol_osc else 0
            if not cfg.dt0:
                dt = min(stable_dt(state, data, cfg.dt_safety), max(dt, dt_cap))
    if traj.rows[-1].t != state.t:
        record(state, state.dt_last)
    traj.steps = {k: np.asarray(v) for k, v in st.items()}
    traj.final_state = state
    return traj


def extract_b(traj: Trajectory, data: ProblemData, require_converged: bool = True):
    """(b, residual): the omega^n-mean of F at the final state and max |F - b|."""
    if require_converged and not traj.converged:
        raise ValueError(f"trajectory did not converge (reason: {traj.reason})")
    state = traj.final_state
    b = mean_F(state, data)
    return b, float(np.max(np.abs(state.F - b)))


def fit_w_bound(traj: Trajectory, tail: float = 0.5):
    """Smallest (C, A) on the tail with w <= C exp(A (u - running inf u)).

    A comes from a least-squares line of ln w against u - inf u; C is then
    raised until the bound covers every sample.
    """
    samples = traj.w_samples[int(len(traj.w_samples) * (1 - tail)):] or traj.w_samples
    d = np.concatenate([s[1] for s in samples])
    lw = np.concatenate([s[2] for s in samples])
    if np.ptp(d) > 0:
        A = max(float(np.polyfit(d, lw, 1)[0]), 0.0)
    else:
        A = 0.0
    C = float(np.exp(np.max(lw - A * d)))
    return C, A


def write_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in traj.rows:
            w.writerow([repr(float(v)) for v in r.values()])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected diagnostics header {header}")
        return [DiagnosticsRow(*map(float, row)) for row in rd]


def snapshot_write(state: FlowState, data: ProblemData, path) -> None:
    X = ensure_X(state, data)
    write_fields(path, data.grid, state.t,
                 {"u": state.u, "X": X, "F": state.F, "eigenvalues": state.eigenvalues},
                 meta={"dt_last": state.dt_last, "rejected": state.rejected})


def snapshot_read(path):
    """Return ``(grid, FlowState)``."""
    grid, t, f, meta = read_fields(path)
    missing = {"u", "X", "F", "eigenvalues"} - set(f)
    if missing:
        from .io import SnapshotError
        raise SnapshotError(f"snapshot lacks fields {sorted(missing)}")
    state = FlowState(f["u"], t, f["F"], f["eigenvalues"],
                      float(meta.get("dt_last", 0.0)), int(meta.get("rejected", 0)), X=f["X"])
    return grid, state

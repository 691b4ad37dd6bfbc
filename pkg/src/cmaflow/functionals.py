"""J_alpha functional, oscillation decay and Harnack measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import integrate, spectral_derivative
from .hermitian import wedge_ratio
from .operator import ProblemData, chi_u, diffusion_matrix, mixed_volume_density

EPS = np.finfo(float).eps


def j_alpha_closed(u, data: ProblemData) -> float:
    """J_alpha(u) along the straight line s -> s u, in closed form.

    J = 1/(n-a+1) * sum_{i=0}^{n-a} int u chi_u^i ^ chi^{n-a-i} ^ omega^a.
    The sum is algebraic in u, so no positivity along the segment is needed.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != data.grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {data.grid.shape}")
    n, a = data.n, data.alpha
    X = chi_u(data, u)
    total = 0.0
    for i in range(n - a + 1):
        ratio = wedge_ratio([(X, i), (data.chi, n - a - i), (data.omega, a)], Linv=data.Linv)
        total += integrate(data.grid, u * np.broadcast_to(ratio * data.vol, u.shape))
    return total / (n - a + 1)


def mixed_volume(data: ProblemData) -> float:
    """int chi^{n-a} ^ omega^a."""
    return integrate(data.grid, mixed_volume_density(data, data.chi))


def _gauss_legendre_panels(panels: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for p in range(panels):
        a, b = p / panels, (p + 1) / panels
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def j_alpha_path(path, data: ProblemData, panels: int = 4, order: int = 4, ds: float = 1e-3) -> float:
    """int_0^1 int dv/ds chi_v^{n-a} ^ omega^a ds along ``path(s)``.

    ``path`` maps s in [0, 1] to a scalar field with ``path(0) = 0``.
    Composite Gauss-Legendre in s (``panels * order`` nodes); dv/ds by
    fourth-order central differences with step ``ds``.
    """
    if panels * order < 3:
        raise ValueError("path quadrature needs at least 3 nodes")
    start = np.asarray(path(0.0), dtype=float)
    if np.max(np.abs(start)) > 0:
        raise ValueError("path must start at u = 0")
    s_nodes, weights = _gauss_legendre_panels(panels, order)
    total = 0.0
    for s, w in zip(s_nodes, weights):
        v = np.asarray(path(s), dtype=float)
        dv = (8 * (path(s + ds) - path(s - ds)) - (path(s + 2 * ds) - path(s - 2 * ds))) / (12 * ds)
        dens = mixed_volume_density(data, chi_u(data, v))
        total += w * integrate(data.grid, dv * dens)
    return total


def oscillation(f) -> float:
    f = np.asarray(f)
    return float(f.max() - f.min())


@dataclass
class DecayFit:
    C: float
    c0: float
    r_squared: float
    window: tuple


def noise_floor(F0_sup: float) -> float:
    """Oscillations below this are rounding noise and are excluded from fits."""
    return 1e3 * EPS * (1.0 + abs(F0_sup))


def fit_decay(t, theta, floor: float = 0.0, min_rows: int = 10) -> DecayFit:
    """Least squares of ln theta against t on the last half of the usable rows."""
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    usable = (theta > 0) & (theta > floor)
    t, theta = t[usable], theta[usable]
    tail = slice(len(t) // 2, None)
    t, y = t[tail], np.log(theta[tail])
    if len(t) < min_rows:
        raise ValueError(f"need >= {min_rows} usable rows in the tail window, have {len(t)}")
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(C=math.exp(coef[0]), c0=-float(coef[1]), r_squared=r2,
                    window=(float(t[0]), float(t[-1])))


def fit_decay_trajectory(traj, min_rows: int = 10) -> DecayFit:
    rows = traj.rows
    floor = noise_floor(max(abs(rows[0].sup_F), abs(rows[0].inf_F)))
    return fit_decay([r.t for r in rows], [r.osc_F for r in rows], floor=floor, min_rows=min_rows)


def oscillation_contraction(t, theta, floor: float = 0.0):
    """[(m, theta(m)/theta(m-1))] at unit-time marks, theta interpolated linearly in t."""
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if t[-1] - t[0] < 2:
        raise ValueError("need a span of at least 3 unit-time marks")
    marks = np.arange(math.ceil(t[0]), math.floor(t[-1]) + 1)
    vals = np.interp(marks, t, theta)
    out = []
    for m, prev, cur in zip(marks[1:], vals[:-1], vals[1:]):
        if prev <= floor or cur <= floor:
            continue
        out.append((int(m), float(cur / prev)))
    return out


def oscillation_contraction_trajectory(traj):
    steps = traj.steps
    floor = noise_floor(max(abs(steps["sup_F"][0]), abs(steps["inf_F"][0])))
    theta = steps["sup_F"] - steps["inf_F"]
    return oscillation_contraction(steps["t"], theta, floor=floor)


@dataclass
class HarnackReport:
    t1: float
    t2: float
    sup_at_t1: float
    inf_at_t2: float
    rhs: float
    satisfied_for_some_constants: bool
    satisfied: bool
    implied_constant: float


def harnack_check(phi1, phi2, t1: float, t2: float, constants=(0.0, 0.0, 0.0)) -> HarnackReport:
    """Compare sup phi(t1) with inf phi(t2) (t2/t1)^C2 exp(C3/(t2-t1) + C1 (t2-t1))."""
    if not 0 < t1 < t2:
        raise ValueError("need 0 < t1 < t2")
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if phi1.min() <= 0 or phi2.min() <= 0:
        raise ValueError("Harnack comparison needs a positive field")
    C1, C2, C3 = constants
    sup1, inf2 = float(phi1.max()), float(phi2.min())
    rhs = inf2 * (t2 / t1) ** C2 * math.exp(C3 / (t2 - t1) + C1 * (t2 - t1))
    return HarnackReport(t1, t2, sup1, inf2, rhs, True, sup1 <= rhs, sup1 / inf2)


def harnack_series(traj, kind: str = "xi", constants=(0.0, 0.0, 0.0)):
    """Harnack reports on unit intervals [m-1, m] from the stored half-unit marks.

    ``kind`` is ``"xi"`` (sup phi(m-1) - phi), ``"eta"`` (phi - inf phi(m-1))
    or ``"phi"`` (phi shifted to be positive on each interval).
    """
    marks = traj.marks
    out = []
    m = 1
    while (m - 1.0) in marks and (m - 0.5) in marks and float(m) in marks:
        t0, f0 = marks[m - 1.0]
        th, fh = marks[m - 0.5]
        t1, f1 = marks[float(m)]
        if kind == "xi":
            a, b = f0.max() - fh, f0.max() - f1
        elif kind == "eta":
            a, b = fh - f0.min(), f1 - f0.min()
        elif kind == "phi":
            shift = 1.0 - min(fh.min(), f1.min())
            a, b = fh + shift, f1 + shift
        else:
            raise ValueError(f"unknown kind {kind!r}")
        if min(a.min(), b.min()) > 0:
            out.append((m, harnack_check(a, b, th - t0, t1 - t0, constants)))
        m += 1
    return out


def gradient_monitor(data: ProblemData, u, phi, dphi_dt, beta: float = 1.5) -> float:
    """max |d f|_G^2 - beta d_t f for f = ln phi, with G the linearised metric."""
    phi = np.asarray(phi, dtype=float)
    if phi.min() <= 0:
        raise ValueError("phi must be positive")
    f = np.log(phi)
    grid = data.grid
    df = np.stack([0.5 * (spectral_derivative(grid, f, 2 * i) - 1j * spectral_derivative(grid, f, 2 * i + 1))
                   for i in range(data.n)], axis=-1)
    upper = diffusion_matrix(data, u)
    grad2 = np.einsum("...ij,...i,...j->...", upper, df, np.conj(df)).real
    return float(np.max(grad2 - beta * np.asarray(dphi_dt) / phi))


def sup_hat_bounds(u_hat, data: ProblemData):
    """sup u_hat (should be >= 0) and the constants of sup <= -C1 inf + C2.

    C1 is the smallest constant with omega^n <= C1 chi^{n-a} ^ omega^a;
    C2 is then the least value making the bound hold for this sample.
    """
    dens = mixed_volume_density(data, data.chi)
    C1 = float(np.max(data.vol / dens))
    sup, inf = float(np.max(u_hat)), float(np.min(u_hat))
    return sup, C1, sup + C1 * inf

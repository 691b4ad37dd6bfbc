import dataclasses
import math

import numpy as np
import pytest

from cmaflow.flow import (CSV_HEADER, FlowConfig, extract_b, initial_state, monitor_w,
                          normalize_hat, normalize_tilde, read_csv, run, stable_dt, step,
                          write_csv)
from cmaflow.functionals import j_alpha_closed
from cmaflow.grid import PeriodicGrid, integrate
from cmaflow.operator import ProblemData, chi_u, density_ratio
from cmaflow.verify import TrigField, fd_complex_hessian

from conftest import flat_data, manufactured_data

FAST = FlowConfig(dt_safety=1.0, t_max=40.0, tol_osc=1e-9, sample_every=5, w_samples=64)


def varying_chi_data(grid, amp=0.3, psi=None):
    x = grid.coords()
    w = np.broadcast_to(np.cos(2 * np.pi * x[0]), grid.shape)
    chi = 2.0 * np.eye(grid.n) + amp * w[..., None, None] * np.array([[1.0, 0.5j], [-0.5j, 0.0]])
    data = ProblemData(grid, 1, grid.constant_matrix(np.eye(2)), chi, 1.0)
    if psi is None:
        psi = density_ratio(data, data.chi)
    return data.with_psi(psi)


# stepping

@pytest.mark.parametrize("dt", [1e-3, 0.1, 1.0, 7.5])
def test_constant_solution_exact(grid2d, dt):
    data = flat_data(grid2d)
    s = step(initial_state(data), data, dt)
    assert np.max(np.abs(s.u - dt * math.log(2))) <= 1e-14 * max(1.0, dt)
    s = step(s, data, dt)
    assert np.max(np.abs(s.u - 2 * dt * math.log(2))) <= 1e-14 * max(1.0, dt)
    assert s.t == 2 * dt


def test_manufactured_stationary(grid2d):
    data = varying_chi_data(grid2d)
    cfg = dataclasses.replace(FAST, t_max=1.0, tol_osc=1e-300, sample_every=1000)
    traj = run(data, cfg)
    assert traj.reason == "t_max" and traj.final_state.t == pytest.approx(1.0)
    assert np.max(np.abs(traj.final_state.u)) <= 1e-12


def test_step_rejects_nonpositive_dt(grid2d):
    data = flat_data(grid2d)
    with pytest.raises(ValueError):
        step(initial_state(data), data, 0.0)


def test_step_halves_on_cone_exit():
    # an enormous step leaves the cone; the accepted step is a halving of it
    grid = PeriodicGrid(2, (16, 1, 16, 1), (1.0,) * 4)
    data, _ = manufactured_data(grid, amp=1.2)
    s = step(initial_state(data), data, 50.0)
    assert s.rejected > 0 and s.dt_last == 50.0 / 2 ** s.rejected


def _max_principle_worst(traj):
    sup, inf = traj.steps["sup_F"], traj.steps["inf_F"]
    return max(float(np.max(np.diff(sup))), float(np.max(-np.diff(inf))))


@pytest.mark.parametrize("amp", [0.3, 0.9])
def test_maximum_principle(grid2d, amp):
    data, _ = manufactured_data(grid2d, amp)
    traj = run(data, dataclasses.replace(FAST, t_max=2.0))
    assert _max_principle_worst(traj) <= 1e-8


def test_maximum_principle_variable_coefficients(rng):
    grid = PeriodicGrid(2, (8, 1, 8, 1), (1.0,) * 4)
    psi = np.exp(0.3 * TrigField(grid, rng, kmax=1).on_grid())
    traj = run(varying_chi_data(grid, psi=psi), dataclasses.replace(FAST, t_max=2.0))
    assert _max_principle_worst(traj) <= 1e-8


# stable time step

def test_stable_dt_identity_example():
    grid = PeriodicGrid(2, (16, 1, 16, 1), (1.0,) * 4)
    data = flat_data(grid, chi_scale=1.0)
    # lam = (1, 1): F = 1/2, dF/dlam = 1/4, so G^{i jbar} = I/2
    dt = stable_dt(initial_state(data), data, 0.2)
    assert dt == pytest.approx(0.2 * (1 / 256) / (8 * 0.5), rel=1e-14)


def test_stable_dt_eigenvalue_scan(grid2d, rng):
    data = flat_data(grid2d)
    u = TrigField(grid2d, rng, kmax=1, amp=0.01).on_grid()
    state = initial_state(data, u)
    # n = 2, a = 1, omega = I: eigenvalues of G^{i jbar} are 1/lam_i - 1/(lam_1 + lam_2)
    lam = np.linalg.eigvalsh(chi_u(data, u))
    scan = np.max(1 / lam - 1 / lam.sum(axis=-1, keepdims=True))
    assert stable_dt(state, data, 0.3) == pytest.approx(0.3 * grid2d.h_min ** 2 / (8 * scan), rel=1e-12)


def test_stable_dt_resolution_ratio():
    coarse, fine = PeriodicGrid.uniform(2, 4), PeriodicGrid.uniform(2, 8)
    d1, d2 = flat_data(coarse), flat_data(fine)
    r = stable_dt(initial_state(d1), d1) / stable_dt(initial_state(d2), d2)
    assert abs(r - 4.0) <= 1e-12


@pytest.mark.parametrize("safety", [0.0, -1.0])
def test_stable_dt_rejects_nonpositive_safety(grid2d, safety):
    data = flat_data(grid2d)
    with pytest.raises(ValueError):
        stable_dt(initial_state(data), data, safety)


# normalisations

def _variable_omega_data(grid, rng):
    x = grid.coords()
    w = np.broadcast_to(np.sin(2 * np.pi * x[2]), grid.shape)
    omega = np.eye(2) + 0.3 * w[..., None, None] * np.diag([1.0, -0.5])
    return ProblemData(grid, 1, omega, 3.0 * grid.constant_matrix(np.eye(2)), 1.0)


def test_normalize_tilde(grid2d, rng):
    data = _variable_omega_data(grid2d, rng)
    assert np.max(np.abs(normalize_tilde(np.full(grid2d.shape, 4.2), data))) <= 1e-14
    u = rng.normal(size=grid2d.shape)
    ut = normalize_tilde(u, data)
    # weighted quadrature oracle: rectangle rule with det(omega) weights
    weights = np.linalg.det(data.omega).real
    assert abs(np.sum(ut * weights)) <= 1e-12 * np.sum(np.abs(u) * weights)
    assert np.allclose(normalize_tilde(ut, data), ut, atol=1e-15)


def test_normalize_hat_constants(grid2d):
    data = flat_data(grid2d)
    assert np.max(np.abs(normalize_hat(grid2d.zeros(), data))) == 0.0
    assert np.max(np.abs(normalize_hat(np.full(grid2d.shape, 2.5), data))) <= 1e-13


def test_normalize_hat_on_flow_states(grid2d):
    data, _ = manufactured_data(grid2d, 0.5)
    traj = run(data, dataclasses.replace(FAST, t_max=1.0, snapshot_every=2))
    for s in traj.snapshots[1:]:
        uh = normalize_hat(s.u, data)
        scale = integrate(grid2d, np.abs(s.u)) + 1e-300
        assert abs(j_alpha_closed(uh, data)) <= 1e-8 * scale


# b extraction

@pytest.mark.parametrize("a,lam0", [(1, 2.0), (2, 1.5), (1, 0.6)])
def test_extract_b_constant(grid2d, a, lam0):
    data = flat_data(grid2d, chi_scale=lam0, alpha=a)
    traj = run(data, FAST)
    b, res = extract_b(traj, data)
    assert traj.converged
    assert b == pytest.approx(a * math.log(lam0), abs=1e-13) and res <= 1e-13


def test_extract_b_manufactured_and_shift(grid2d):
    data, _ = manufactured_data(grid2d, 0.6)
    traj = run(data, FAST)
    b, res = extract_b(traj, data)
    assert traj.converged and abs(b) <= 1e-8 and res <= 1e-8
    sigma = 0.37
    shifted = data.with_psi(math.exp(sigma) * data.psi)
    bs, _ = extract_b(run(shifted, FAST), shifted)
    assert bs == pytest.approx(b - sigma, abs=1e-8)


def test_extract_b_requires_convergence(grid2d):
    data, _ = manufactured_data(grid2d, 0.6)
    traj = run(data, dataclasses.replace(FAST, t_max=0.05))
    assert traj.reason == "t_max"
    with pytest.raises(ValueError, match="did not converge"):
        extract_b(traj, data)
    b, _ = extract_b(traj, data, require_converged=False)
    assert math.isfinite(b)


# monitors

def test_monitor_w_constant(grid2d):
    data = flat_data(grid2d)
    assert monitor_w(initial_state(data), data) == pytest.approx(4.0, abs=1e-14)


def test_monitor_w_fd_laplacian(rng):
    grid = PeriodicGrid(2, (8, 8, 8, 8), (1.0,) * 4)
    data = flat_data(grid)
    f = TrigField(grid, rng, modes=1, kmax=1, amp=0.01)
    state = initial_state(data, f.on_grid())
    pts = np.stack(np.meshgrid(*[np.arange(8) / 8] * 4, indexing="ij"), axis=-1)
    H = fd_complex_hessian(f, pts, 2)
    ref = np.max(np.trace(H, axis1=-2, axis2=-1).real) + 4.0
    assert monitor_w(state, data) == pytest.approx(ref, abs=1e-6)


def test_monitor_w_positive_along_flow(grid2d):
    data, _ = manufactured_data(grid2d, 0.9)
    traj = run(data, dataclasses.replace(FAST, t_max=1.0))
    assert min(r.w_max for r in traj.rows) > 0
    assert all(np.all(np.exp(lw) > 0) for _, _, lw in traj.w_samples)


# trajectories

def test_run_monotone_sup_inf_u_when_ratio_below_psi(grid2d):
    base = varying_chi_data(grid2d)
    x = grid2d.coords()
    psi = base.psi * (1.1 + 0.1 * np.cos(2 * np.pi * x[2]))
    data = base.with_psi(psi)
    assert np.all(density_ratio(data, data.chi) <= data.psi)
    traj = run(data, dataclasses.replace(FAST, t_max=3.0, sample_every=1))
    assert np.all(np.diff(traj.column("sup_u")) <= 1e-12)
    assert np.all(np.diff(traj.column("inf_u")) <= 1e-12)


def test_run_j_nonincreasing_kahler(grid2d):
    x = grid2d.coords()
    psi = np.broadcast_to(2.1 + 0.1 * np.cos(2 * np.pi * x[0]), grid2d.shape)
    data = flat_data(grid2d, psi=psi)   # c = 2 <= psi
    traj = run(data, dataclasses.replace(FAST, t_max=3.0, sample_every=1))
    J = traj.column("J_alpha")
    assert np.all(np.diff(J) <= 1e-8) and np.all(J[1:] <= 1e-8)


def test_trajectory_rows_strictly_increasing(grid2d):
    data, _ = manufactured_data(grid2d, 0.5)
    traj = run(data, dataclasses.replace(FAST, t_max=0.7, sample_every=3))
    t = traj.column("t")
    assert np.all(np.diff(t) > 0) and t[-1] == pytest.approx(0.7)
    assert all(all(math.isfinite(v) for v in r.values()) for r in traj.rows)


def test_dt_init_caps_first_step(grid2d):
    data, _ = manufactured_data(grid2d, 0.5)
    traj = run(data, dataclasses.replace(FAST, t_max=0.1, dt_init=1e-4))
    assert traj.steps["dt"][1] == 1e-4


def test_csv_round_trip(tmp_path, grid2d):
    data, _ = manufactured_data(grid2d, 0.5)
    traj = run(data, dataclasses.replace(FAST, t_max=0.5))
    write_csv(traj, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = read_csv(tmp_path / "d.csv")
    assert [r.values() for r in back] == [r.values() for r in traj.rows]


def test_csv_rejects_wrong_header(tmp_path):
    (tmp_path / "bad.csv").write_text("t,x\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(tmp_path / "bad.csv")

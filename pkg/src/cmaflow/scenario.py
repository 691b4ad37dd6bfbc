"""TOML scenarios: problem data, grid, flow and continuity settings.

Complex matrix entries are written as ``[re, im]`` pairs (a bare number is
read as real). Coefficient fields are a constant matrix plus cosine/sine
modes with integer wave vectors::

    [omega]
    constant = [[1, 0], [0, 1]]
    [[omega.modes]]
    k = [1, 0, 0, 0]
    coeff = [[0.1, 0], [0, 0.1]]
    fn = "cos"

A mode contributes ``coeff * fn(2 pi sum_j k_j x_j / L_j)``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .flow import FlowConfig
from .grid import PeriodicGrid
from .operator import ProblemData, chi_u, density_ratio


class ScenarioError(ValueError):
    pass


PSI_KINDS = ("constant", "modes", "random_modes", "manufactured", "scaled")
CHECKS = ("cone", "admissible", "psi_ge_c", "ratio_le_psi")
FLOW_KEYS = ("dt_safety", "t_max", "tol_osc", "sample_every", "snapshot_every", "converge_samples")


def _only(table: dict, allowed, where: str):
    extra = set(table) - set(allowed)
    if extra:
        raise ScenarioError(f"unknown keys in {where}: {sorted(extra)}")


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"missing '{key}' in {where}")
    return table[key]


def _complex(v, where):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(p, (int, float)) for p in v):
        return complex(v[0], v[1])
    raise ScenarioError(f"{where}: expected a number or [re, im], got {v!r}")


def _matrix(rows, n: int, where: str) -> np.ndarray:
    if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise ScenarioError(f"{where}: expected an {n}x{n} matrix")
    M = np.array([[_complex(v, where) for v in r] for r in rows])
    if np.max(np.abs(M - M.conj().T)) > 1e-13:
        raise ScenarioError(f"{where}: matrix is not Hermitian")
    return M


def _phase(grid: PeriodicGrid, k, where: str):
    if not isinstance(k, list) or len(k) != grid.ndim or any(not isinstance(v, int) for v in k):
        raise ScenarioError(f"{where}: wave vector must be {grid.ndim} integers")
    x = grid.coords()
    return sum(2 * np.pi * kk * xx / L for kk, xx, L in zip(k, x, grid.periods))


def _trig(name: str, where: str):
    if name not in ("cos", "sin"):
        raise ScenarioError(f"{where}: fn must be 'cos' or 'sin'")
    return np.cos if name == "cos" else np.sin


def matrix_field(spec: dict, grid: PeriodicGrid, where: str) -> np.ndarray:
    """Constant matrix (broadcastable) or constant plus modes (full field)."""
    _only(spec, ("constant", "modes"), where)
    M = _matrix(_need(spec, "constant", where), grid.n, f"{where}.constant")
    modes = spec.get("modes", [])
    if not modes:
        return grid.constant_matrix(M)
    A = grid.full_matrix_field(grid.constant_matrix(M))
    for j, mode in enumerate(modes):
        w = f"{where}.modes[{j}]"
        _only(mode, ("k", "coeff", "fn"), w)
        C = _matrix(_need(mode, "coeff", w), grid.n, f"{w}.coeff")
        wave = _trig(mode.get("fn", "cos"), w)(_phase(grid, _need(mode, "k", w), w))
        A = A + np.broadcast_to(wave, grid.shape)[..., None, None] * C
    return A


def scalar_modes(modes, grid: PeriodicGrid, where: str) -> np.ndarray:
    f = grid.zeros()
    for j, mode in enumerate(modes):
        w = f"{where}[{j}]"
        _only(mode, ("k", "amp", "fn"), w)
        amp = _need(mode, "amp", w)
        f = f + amp * _trig(mode.get("fn", "cos"), w)(_phase(grid, _need(mode, "k", w), w))
    return f


def scalar_field(spec: dict, grid: PeriodicGrid, where: str) -> np.ndarray:
    _only(spec, ("mean", "modes"), where)
    return float(spec.get("mean", 0.0)) + scalar_modes(spec.get("modes", []), grid, f"{where}.modes")


@dataclass
class Scenario:
    n: int
    alpha: int
    grid: PeriodicGrid
    omega: dict
    chi: dict
    psi: dict
    flow: FlowConfig = field(default_factory=FlowConfig)
    continuity: dict = field(default_factory=dict)
    checks: tuple = ("cone", "admissible")
    seed: int = 0
    name: str = ""

    def omega_field(self):
        return matrix_field(self.omega, self.grid, "omega")

    def chi_field(self):
        return matrix_field(self.chi, self.grid, "chi")

    def u_star(self):
        if self.psi.get("kind") != "manufactured":
            return None
        return scalar_field(self.psi["u_star"], self.grid, "psi.u_star")

    def subsolution(self):
        spec = self.continuity.get("subsolution")
        return None if spec is None else scalar_field(spec, self.grid, "continuity.subsolution")

    def _psi(self, spec, omega, chi, where):
        kind = spec.get("kind")
        g = self.grid
        if kind == "constant":
            _only(spec, ("kind", "value"), where)
            v = float(_need(spec, "value", where))
            if not v > 0:
                raise ScenarioError(f"{where}: psi must be positive")
            return np.full(g.shape, v)
        if kind in ("modes", "random_modes"):
            keys = ("kind", "mean", "floor", "modes") if kind == "modes" else \
                   ("kind", "mean", "floor", "k", "max_amp")
            _only(spec, keys, where)
            floor = float(_need(spec, "floor", where))
            if not floor > 0:
                raise ScenarioError(f"{where}: floor must be positive")
            mean = float(spec.get("mean", 1.0))
            if kind == "modes":
                f = mean + scalar_modes(spec.get("modes", []), g, f"{where}.modes")
            else:
                rng = np.random.default_rng(self.seed)
                f = np.full(g.shape, mean)
                amax = float(_need(spec, "max_amp", where))
                for j, k in enumerate(_need(spec, "k", where)):
                    f = f + rng.uniform(-amax, amax) * np.cos(_phase(g, k, f"{where}.k[{j}]")
                                                             + rng.uniform(0, 2 * np.pi))
            return np.maximum(np.broadcast_to(f, g.shape), floor)
        if kind == "manufactured":
            _only(spec, ("kind", "u_star"), where)
            u = scalar_field(_need(spec, "u_star", where), g, f"{where}.u_star")
            base = ProblemData(g, self.alpha, omega, chi, np.ones(g.shape))
            return np.broadcast_to(density_ratio(base, chi_u(base, u)), g.shape).copy()
        if kind == "scaled":
            _only(spec, ("kind", "base", "sigma"), where)
            inner = self._psi(_need(spec, "base", where), omega, chi, f"{where}.base")
            return math.exp(float(_need(spec, "sigma", where))) * inner
        raise ScenarioError(f"{where}: kind must be one of {PSI_KINDS}")

    def build(self) -> ProblemData:
        omega, chi = self.omega_field(), self.chi_field()
        try:
            psi = self._psi(self.psi, omega, chi, "psi")
            return ProblemData(self.grid, self.alpha, omega, chi, psi)
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc


def from_dict(d: dict, name: str = "") -> Scenario:
    _only(d, ("problem", "grid", "omega", "chi", "psi", "flow", "continuity", "check", "seed"), "scenario")
    prob = _need(d, "problem", "scenario")
    _only(prob, ("n", "alpha"), "problem")
    n, alpha = int(_need(prob, "n", "problem")), int(_need(prob, "alpha", "problem"))
    if n < 2:
        raise ScenarioError("problem.n must be >= 2")
    if not 1 <= alpha <= n:
        raise ScenarioError(f"problem.alpha={alpha} outside [1, {n}]")
    gs = _need(d, "grid", "scenario")
    _only(gs, ("points", "periods"), "grid")
    points = _need(gs, "points", "grid")
    periods = gs.get("periods", [1.0] * (2 * n))
    try:
        grid = PeriodicGrid(n, tuple(points), tuple(periods))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"grid: {exc}") from exc
    fl = d.get("flow", {})
    _only(fl, FLOW_KEYS, "flow")
    flow = dataclasses.replace(FlowConfig(), **fl)
    if not flow.dt_safety > 0 or not flow.t_max > 0 or not flow.tol_osc > 0 or flow.sample_every < 1:
        raise ScenarioError("flow: dt_safety, t_max, tol_osc and sample_every must be positive")
    cont = d.get("continuity", {})
    _only(cont, ("kappa_policy", "delta_bisection_iters", "subsolution"), "continuity")
    if cont.get("kappa_policy", "max") != "max":
        raise ScenarioError("continuity.kappa_policy: only 'max' is supported")
    ck = d.get("check", {})
    _only(ck, ("require",), "check")
    checks = tuple(ck.get("require", ("cone", "admissible")))
    bad = set(checks) - set(CHECKS)
    if bad:
        raise ScenarioError(f"check.require: unknown checks {sorted(bad)}")
    sc = Scenario(n, alpha, grid, _need(d, "omega", "scenario"), _need(d, "chi", "scenario"),
                  _need(d, "psi", "scenario"), flow, cont, checks, int(d.get("seed", 0)), name)
    # surface field-level errors (Hermitian, floor, unknown keys) at load time
    sc.build()
    return sc


def load(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return from_dict(d, name=str(path))


def loads(text: str) -> Scenario:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(str(exc)) from exc

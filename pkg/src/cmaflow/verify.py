"""Oracle suites: each compares a library routine against an independent computation.

Every suite returns a :class:`SuiteResult`; ``run_suites`` collects them for
the ``verify`` command. The symmetric-function implementation under test can
be swapped (``elem_sym=``) to check that a corrupted recurrence is caught.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import hermitian
from .functionals import j_alpha_closed, j_alpha_path
from .grid import PeriodicGrid, complex_hessian
from .hermitian import cone_margins, metric_factor, rel_eigenvalues, wedge_ratio
from .operator import ProblemData, linearized_metric, ratio_derivative


@dataclass
class SuiteResult:
    name: str
    passed: bool
    defect: float
    tol: float
    instances: int
    seconds: float = 0.0
    detail: str = ""


def _result(name, defect, tol, instances, t0, detail=""):
    return SuiteResult(name, bool(defect <= tol), float(defect), tol, instances,
                       time.perf_counter() - t0, detail)


# -- oracles

def subset_sym(lam, k: int) -> np.ndarray:
    """S_k by summing products over all k-subsets."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1])
    for idx in itertools.combinations(range(lam.shape[-1]), k):
        out = out + np.prod(lam[..., list(idx)], axis=-1)
    return out


def diagonal_wedge_oracle(diags, mults) -> np.ndarray:
    """(A_1^{m_1} ^ ... ^ A_r^{m_r}) / I^n for diagonal A_k = diag(diags[k]).

    Sums over the ways to hand each coordinate direction to one factor,
    factor k receiving exactly m_k directions.
    """
    n = diags[0].shape[-1]
    total = np.zeros(diags[0].shape[:-1])
    count = 0
    for owner in itertools.product(range(len(diags)), repeat=n):
        if any(owner.count(k) != m for k, m in enumerate(mults)):
            continue
        count += 1
        term = np.ones_like(total)
        for i, k in enumerate(owner):
            term = term * diags[k][..., i]
        total = total + term
    return total / count


class Forms:
    """Minimal exterior algebra on dz_1..dz_n, dzbar_1..dzbar_n with array coefficients.

    A form is a dict mapping a sorted tuple of generator indices (dz_j -> j,
    dzbar_j -> n + j) to its coefficient.
    """

    def __init__(self, n: int):
        self.n = n

    @staticmethod
    def _sign(seq):
        s = 1
        seq = list(seq)
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                if seq[i] > seq[j]:
                    s = -s
        return s

    def wedge(self, a: dict, b: dict) -> dict:
        out = {}
        for ka, ca in a.items():
            for kb, cb in b.items():
                if set(ka) & set(kb):
                    continue
                seq = ka + kb
                key = tuple(sorted(seq))
                out[key] = out.get(key, 0) + self._sign(seq) * ca * cb
        return out

    def one_one(self, A) -> dict:
        """sqrt(-1) sum_jk A_jk dz_j ^ dzbar_k."""
        n = self.n
        return {(j, n + k): 1j * A[..., j, k] for j in range(n) for k in range(n)}

    def power(self, a: dict, p: int) -> dict:
        out = {(): 1.0}
        for _ in range(p):
            out = self.wedge(out, a)
        return out

    def scale(self, a: dict, c) -> dict:
        return {k: c * v for k, v in a.items()}

    def add(self, a: dict, b: dict) -> dict:
        out = dict(a)
        for k, v in b.items():
            out[k] = out.get(k, 0) + v
        return out

    def diag_coefficient(self, form: dict, i: int):
        """Coefficient of prod_{j != i} sqrt(-1) dz_j ^ dzbar_j in ``form``."""
        n = self.n
        seq = []
        for j in range(n):
            if j != i:
                seq += [j, n + j]
        key = tuple(sorted(seq))
        unit = (1j ** (n - 1)) * self._sign(seq)
        return form.get(key, 0) / unit


def wedge_cone_margins(lam, psi, alpha: int) -> np.ndarray:
    """Margins 1 - (n-a) psi c2_i / (n c1_i) from the expanded (n-1,n-1)-forms.

    c1_i, c2_i are the diagonal coefficients of chi'^{n-1} and
    chi'^{n-a-1} ^ omega^a for chi' = diag(lam), omega = I.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    E = Forms(n)
    X = np.zeros(lam.shape + (n,))
    X[..., range(n), range(n)] = lam
    chip = E.one_one(X)
    om = E.one_one(np.eye(n))
    top = E.power(chip, n - 1)
    mixed = E.wedge(E.power(chip, n - alpha - 1), E.power(om, alpha))
    out = np.empty(lam.shape)
    for i in range(n):
        c1 = np.real(E.diag_coefficient(top, i))
        c2 = np.real(E.diag_coefficient(mixed, i))
        out[..., i] = 1.0 - (n - alpha) * psi * c2 / (n * c1)
    return out


def companion_eigenvalues(X, g) -> np.ndarray:
    """Roots of det(X - lam g) from its coefficients, via companion matrices."""
    n = X.shape[-1]
    nodes = np.arange(n + 1, dtype=float)
    vals = np.stack([np.linalg.det(X - t * g).real for t in nodes], axis=-1)
    V = np.vander(nodes, n + 1)
    coef = np.linalg.solve(V, vals[..., None])[..., 0]     # highest degree first
    monic = coef[..., 1:] / coef[..., :1]
    C = np.zeros(X.shape[:-2] + (n, n))
    C[..., 0, :] = -monic
    C[..., range(1, n), range(n - 1)] = 1.0
    return np.sort(np.linalg.eigvals(C).real, axis=-1)


def _random_hermitian(rng, count, n):
    A = rng.normal(size=(count, n, n)) + 1j * rng.normal(size=(count, n, n))
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _random_spd(rng, count, n):
    B = rng.normal(size=(count, n, n)) + 1j * rng.normal(size=(count, n, n))
    return B @ np.conj(np.swapaxes(B, -1, -2)) / n + np.eye(n)


# -- suites

def suite_symmetric(instances=10_000, seed=0, elem_sym=None) -> SuiteResult:
    """elem_sym against subset sums, and S_{n-a}(lam) = S_a(1/lam) prod(lam)."""
    t0 = time.perf_counter()
    es = elem_sym or hermitian.elem_sym
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 3, 4):
        lam = rng.uniform(0.1, 10.0, size=(instances, n))
        for k in range(n + 1):
            ref = subset_sym(lam, k)
            worst = max(worst, float(np.max(np.abs(es(lam, k) - ref) / np.abs(ref))))
        prod = np.prod(lam, axis=-1)
        for a in range(1, n + 1):
            lhs = es(lam, n - a)
            rhs = es(1.0 / lam, a) * prod
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.abs(lhs))))
    return _result("symmetric functions", worst, 1e-12, 3 * instances, t0)


def suite_mixed_discriminant(instances=10_000, seed=1) -> SuiteResult:
    """wedge_ratio on diagonal factors against direct enumeration."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 3):
        eye = np.eye(n)
        for mults in ([n], [1] * n, [n - 1, 1], [1, n - 1]):
            diags = [rng.uniform(-2.0, 3.0, size=(instances, n)) for _ in mults]
            mats = [d[..., None] * eye for d in diags]
            got = wedge_ratio(list(zip(mats, mults)), Linv=eye)
            ref = diagonal_wedge_oracle(diags, mults)
            worst = max(worst, float(np.max(np.abs(got - ref) / (1 + np.abs(ref)))))
    return _result("mixed discriminant", worst, 1e-12, 8 * instances, t0)


def suite_wedge_multilinear(instances=2_000, seed=2) -> SuiteResult:
    """Symmetry and multilinearity of wedge_ratio on random Hermitian factors."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 3):
        g = _random_spd(rng, instances, n)
        Linv = metric_factor(g)
        A = [_random_hermitian(rng, instances, n) for _ in range(n + 1)]
        c = rng.normal(size=(instances, 1, 1))
        base = wedge_ratio([(M, 1) for M in A[:n]], Linv=Linv)
        perm = wedge_ratio([(M, 1) for M in A[:n][::-1]], Linv=Linv)
        mixed = wedge_ratio([(c * A[0] + A[n], 1)] + [(M, 1) for M in A[1:n]], Linv=Linv)
        split = c[..., 0, 0] * base + wedge_ratio([(A[n], 1)] + [(M, 1) for M in A[1:n]], Linv=Linv)
        scale = 1 + np.abs(base)
        worst = max(worst, float(np.max(np.abs(base - perm) / scale)),
                    float(np.max(np.abs(mixed - split) / (scale + np.abs(split)))))
    return _result("wedge symmetry/multilinearity", worst, 1e-12, 2 * instances, t0)


def suite_cone_reduction(instances=10_000, seed=3) -> SuiteResult:
    """Reduced per-direction cone margins against the expanded (n-1,n-1)-forms."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    mismatched = 0
    for n in (2, 3):
        for a in range(1, n):
            lam = rng.uniform(0.2, 5.0, size=(instances, n))
            psi = rng.uniform(0.1, 5.0, size=instances)
            X = np.zeros((instances, n, n))
            X[:, range(n), range(n)] = lam
            got, lam_sorted = cone_margins(X, psi, a, np.eye(n))
            # cone_margins lists directions in ascending eigenvalue order
            order = np.argsort(lam, axis=-1, kind="stable")
            ref = np.take_along_axis(wedge_cone_margins(lam, psi, a), order, axis=-1)
            worst = max(worst, float(np.max(np.abs(got - ref))))
            mismatched += int(np.sum((got.min(-1) > 0) != (ref.min(-1) > 0)))
    defect = worst if mismatched == 0 else math.inf
    return _result("cone reduction vs wedge forms", defect, 1e-10, 3 * instances, t0,
                   f"{mismatched} verdict mismatches")


def suite_eigenvalues(instances=10_000, seed=4) -> SuiteResult:
    """rel_eigenvalues against companion-matrix roots of det(X - lam g)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 3):
        X = _random_hermitian(rng, instances, n)
        g = _random_spd(rng, instances, n)
        got = rel_eigenvalues(X, g)
        ref = companion_eigenvalues(X, g)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return _result("relative eigenvalues", worst, 1e-10, 2 * instances, t0)


# -- derivative oracles

class TrigField:
    """Band-limited real field sum_m a_m cos(2 pi k_m . x / L + phi_m), evaluable off-grid."""

    def __init__(self, grid: PeriodicGrid, rng, modes: int = 4, kmax: int = 2, amp: float = 0.1):
        self.grid = grid
        resolved = np.array([N > 1 for N in grid.points])
        self.k = rng.integers(-kmax, kmax + 1, size=(modes, grid.ndim)) * resolved
        self.a = amp * rng.normal(size=modes)
        self.phi = rng.uniform(0, 2 * np.pi, size=modes)
        self.L = np.array(grid.periods)

    def __call__(self, pts):
        """pts[..., 2n] real coordinates."""
        theta = 2 * np.pi * (pts / self.L) @ self.k.T + self.phi
        return np.cos(theta) @ self.a

    def on_grid(self):
        x = np.stack(np.meshgrid(*[np.arange(N) * (L / N) for N, L in
                                   zip(self.grid.points, self.grid.periods)], indexing="ij"), axis=-1)
        return self(x)


def _fd_second(f, pts, a, b, h):
    """d^2 f / dx_a dx_b, fourth order in h."""
    ea = np.zeros(pts.shape[-1])
    ea[a] = 1.0
    eb = np.zeros(pts.shape[-1])
    eb[b] = 1.0
    w = {-2: 1 / 12, -1: -2 / 3, 1: 2 / 3, 2: -1 / 12}
    if a == b:
        w2 = {-2: -1 / 12, -1: 4 / 3, 0: -5 / 2, 1: 4 / 3, 2: -1 / 12}
        return sum(c * f(pts + i * h * ea) for i, c in w2.items()) / h ** 2
    return sum(ci * cj * f(pts + i * h * ea + j * h * eb)
               for i, ci in w.items() for j, cj in w.items()) / h ** 2


def fd_complex_hessian(f, pts, n: int, h: float = 4e-3) -> np.ndarray:
    """Complex Hessian at ``pts`` from Richardson-extrapolated finite differences."""
    def d2(a, b):
        coarse, fine = _fd_second(f, pts, a, b, h), _fd_second(f, pts, a, b, h / 2)
        return (16 * fine - coarse) / 15

    H = np.empty(pts.shape[:-1] + (n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            xi, yi, xj, yj = 2 * i, 2 * i + 1, 2 * j, 2 * j + 1
            # d_zi dzbar_j = 1/4 (dxi - i dyi)(dxj + i dyj)
            re = d2(xi, xj) + d2(yi, yj)
            im = d2(xi, yj) - d2(yi, xj)
            H[..., i, j] = 0.25 * (re + 1j * im)
    return H


def suite_hessian(fields=6, seed=5, points=16) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(fields):
        n = 2 if trial % 3 else 3
        pts = (8,) * (2 * n) if n == 2 else (8, 1, 8, 1, 8, 1)
        grid = PeriodicGrid(n, pts, (1.0,) * (2 * n))
        f = TrigField(grid, rng)
        H = complex_hessian(grid, f.on_grid())
        idx = tuple(rng.integers(0, N, size=points) for N in grid.points)
        xs = np.stack([i * (L / N) for i, N, L in zip(idx, grid.points, grid.periods)], axis=-1)
        ref = fd_complex_hessian(f, xs, n)
        worst = max(worst, float(np.max(np.abs(H[idx] - ref))))
    return _result("spectral vs FD Hessian", worst, 1e-6, fields * points, t0)


def _ratio(X, Linv, n, a):
    lam = rel_eigenvalues(X, Linv=Linv)
    return hermitian.elem_sym(lam, n) / hermitian.elem_sym(lam, n - a)


def suite_ratio_derivative(instances=200, seed=6) -> SuiteResult:
    """[F^{i jbar}] against central differences of S_n/S_{n-a} along Hermitian directions;
    G against the inverse relation F^{-1} P^T G = I."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-4
    for trial in range(instances):
        n = 2 + trial % 2
        a = 1 + trial % n
        g = _random_spd(rng, 1, n)[0]
        B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        X = B @ B.conj().T / n + 0.5 * g
        grid = PeriodicGrid(n, (1,) * (2 * n), (1.0,) * (2 * n))
        data = ProblemData(grid, a, grid.constant_matrix(g), grid.constant_matrix(X), 1.0)
        F, P = ratio_derivative(data, grid.zeros())
        P = P.reshape(n, n)
        E = _random_hermitian(rng, 1, n)[0]
        Linv = data.Linv.reshape(n, n)

        def fd(step):
            return (_ratio(X + step * E, Linv, n, a) - _ratio(X - step * E, Linv, n, a)) / (2 * step)

        ref = (4 * fd(h / 2) - fd(h)) / 3
        got = np.sum(P * E).real
        worst = max(worst, abs(got - float(ref)))
        G = linearized_metric(data, grid.zeros()).reshape(n, n)
        eye = P.T @ G / float(F.ravel()[0])
        worst = max(worst, float(np.max(np.abs(eye - np.eye(n)))))
    return _result("ratio derivative vs FD", worst, 1e-6, instances, t0)


def suite_path_independence(trials=3, seed=7) -> SuiteResult:
    """J along curved and reparametrised paths against the straight-line closed form."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        n, a = (2, 1) if trial < 2 else (3, 1 + trial % 2)
        pts = (8, 1) * n
        grid = PeriodicGrid(n, pts, (1.0,) * (2 * n))
        omega = np.diag(rng.uniform(0.8, 1.5, n)).astype(complex)
        chi = 2.0 * omega
        data = ProblemData(grid, a, grid.constant_matrix(omega), grid.constant_matrix(chi), 1.0)
        u = TrigField(grid, rng, amp=0.02).on_grid()
        w = TrigField(grid, rng, amp=0.02).on_grid()
        J = j_alpha_closed(u, data)
        paths = [lambda s: s * u,
                 lambda s: (s + 0.4 * s * (1 - s)) * u,
                 lambda s: s * u + s * (1 - s) * w]
        for p in paths:
            worst = max(worst, abs(j_alpha_path(p, data) - J) / (1 + abs(J)))
    return _result("J path independence", worst, 1e-7, 3 * trials, t0)


ALGEBRA_SUITES = (suite_symmetric, suite_mixed_discriminant, suite_cone_reduction, suite_eigenvalues)
DERIVATIVE_SUITES = (suite_hessian, suite_ratio_derivative)


def run_suites(elem_sym=None, quick: bool = False):
    k = 1_000 if quick else 10_000
    results = [
        suite_symmetric(k, elem_sym=elem_sym),
        suite_mixed_discriminant(k),
        suite_wedge_multilinear(k // 5),
        suite_cone_reduction(k),
        suite_eigenvalues(k),
        suite_hessian(),
        suite_ratio_derivative(),
        suite_path_independence(),
    ]
    return results


def format_table(results) -> str:
    lines = [f"{'suite':34s} {'result':6s} {'defect':>10s} {'tol':>8s} {'n':>7s} {'sec':>6s}"]
    for r in results:
        lines.append(f"{r.name:34s} {'PASS' if r.passed else 'FAIL':6s} {r.defect:10.2e} "
                     f"{r.tol:8.0e} {r.instances:7d} {r.seconds:6.2f}"
                     + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)

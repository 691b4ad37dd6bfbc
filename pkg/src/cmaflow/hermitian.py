"""Pointwise algebra of Hermitian (1,1)-forms.

All functions act on stacks of matrices: the trailing two axes are the
matrix indices, everything in front is broadcast (typically the grid).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import PeriodicGrid, spectral_derivative

# least relative eigenvalue accepted as positive definite
PD_THRESHOLD = 1e-10


class NotPositiveDefiniteError(ValueError):
    def __init__(self, what: str, least: float, worst_point):
        self.least = float(least)
        self.worst_point = tuple(int(i) for i in worst_point)
        super().__init__(f"{what} is not positive definite: least eigenvalue "
                         f"{self.least:.3e} at grid index {self.worst_point}")


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _argmin_index(values: np.ndarray):
    return tuple(int(i) for i in np.unravel_index(int(np.argmin(values)), values.shape))


def metric_factor(g):
    """Inverse Cholesky factor ``Linv`` with ``Linv g Linv^H = I`` pointwise."""
    g = np.asarray(g, dtype=complex)
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        least = np.linalg.eigvalsh(g)[..., 0]
        raise NotPositiveDefiniteError("metric", least.min(), _argmin_index(least)) from None
    eye = np.broadcast_to(np.eye(g.shape[-1]), L.shape)
    return np.linalg.solve(L, eye)


def to_frame(X, Linv):
    """Express X in the frame where the metric is the identity."""
    return Linv @ X @ _herm(Linv)


def _eigvalsh2_entries(a, d, br, bi):
    # closed form for [[a, b], [conj b, d]]; small root via det/large to avoid cancellation
    m = 0.5 * (a + d)
    r = np.hypot(0.5 * (a - d), np.hypot(br, bi))
    big = m + r
    small = m - r
    det = a * d - (br * br + bi * bi)
    safe = np.abs(small) < 0.5 * np.abs(big)
    small = np.where(safe, det / np.where(big == 0, 1.0, big), small)
    return np.stack([small, big], axis=-1)


def _eigvalsh2(Y):
    b = Y[..., 0, 1]
    return _eigvalsh2_entries(Y[..., 0, 0].real, Y[..., 1, 1].real, b.real, b.imag)


def hermitian_eigvals(Y):
    Y = np.asarray(Y)
    if Y.shape[-1] == 2:
        return _eigvalsh2(Y)
    return np.linalg.eigvalsh(Y)


def rel_eigenvalues(X, g=None, Linv=None):
    """Roots of det(X - lambda g) = 0 pointwise, ascending.

    Pass a precomputed ``Linv`` (see :func:`metric_factor`) to skip the
    factorisation of ``g``.
    """
    if Linv is None:
        if g is None:
            raise ValueError("need the metric or its inverse factor")
        Linv = metric_factor(g)
    return hermitian_eigvals(to_frame(np.asarray(X, dtype=complex), Linv))


def elem_sym_all(lam) -> np.ndarray:
    """All elementary symmetric functions S_0..S_m of the last axis.

    Built by multiplying out prod(1 + lam_i x) one factor at a time, which
    only ever adds products of like sign for positive inputs.
    """
    lam = np.asarray(lam, dtype=float)
    m = lam.shape[-1]
    S = np.zeros(lam.shape[:-1] + (m + 1,))
    S[..., 0] = 1.0
    for i in range(m):
        li = lam[..., i]
        for k in range(i + 1, 0, -1):
            S[..., k] += li * S[..., k - 1]
    return S


def elem_sym(lam, k: int):
    """S_k of the last axis of ``lam``; S_0 = 1."""
    lam = np.asarray(lam, dtype=float)
    m = lam.shape[-1]
    if not 0 <= k <= m:
        raise ValueError(f"k={k} out of range for {m} values")
    return elem_sym_all(lam)[..., k]


def elem_sym_without(lam, k: int):
    """S_k(lam | i) for every i, stacked on the last axis."""
    lam = np.asarray(lam, dtype=float)
    m = lam.shape[-1]
    out = np.empty(lam.shape)
    for i in range(m):
        rest = np.delete(lam, i, axis=-1)
        out[..., i] = elem_sym(rest, k) if 0 <= k <= m - 1 else 0.0
    return out


def mixed_discriminant(mats) -> np.ndarray:
    """Normalised mixed discriminant D(A_1, ..., A_n) with D(A, ..., A) = det A.

    Sum over assignments of factors to columns (n! determinants), which is
    plenty for n <= 4.
    """
    mats = [np.asarray(A) for A in mats]
    n = mats[0].shape[-1]
    if len(mats) != n:
        raise ValueError(f"need exactly {n} factors, got {len(mats)}")
    shape = np.broadcast_shapes(*(A.shape for A in mats))
    mats = [np.broadcast_to(A, shape) for A in mats]
    total = np.zeros(shape[:-2], dtype=complex)
    M = np.empty(shape, dtype=complex)
    for perm in itertools.permutations(range(n)):
        for col, which in enumerate(perm):
            M[..., :, col] = mats[which][..., :, col]
        total = total + np.linalg.det(M)
    return (total / math.factorial(n)).real


def wedge_ratio(factors, g=None, Linv=None) -> np.ndarray:
    """Pointwise (A_1 ^ ... ^ A_n) / omega^n for (matrix, multiplicity) pairs."""
    if Linv is None:
        if g is None:
            raise ValueError("need the metric or its inverse factor")
        Linv = metric_factor(g)
    n = Linv.shape[-1]
    expanded = []
    for A, mult in factors:
        if mult < 0:
            raise ValueError("multiplicities must be nonnegative")
        if mult:
            expanded.extend([to_frame(np.asarray(A, dtype=complex), Linv)] * mult)
    if len(expanded) != n:
        raise ValueError(f"multiplicities sum to {len(expanded)}, expected {n}")
    return mixed_discriminant(expanded)


@dataclass
class ConeReport:
    satisfied: bool
    margin: float
    worst_point: tuple
    least_eigenvalue: float


def cone_margins(chip, psi, alpha: int, Linv):
    """Per-point, per-direction margins 1 - (psi / C(n, alpha)) S_alpha({1/lam_j : j != i}).

    Returns ``(margins, lam)``; margins has the eigenvalue layout of ``lam``.
    Only meaningful where chi' is positive definite.
    """
    n = Linv.shape[-1]
    psi = np.asarray(psi, dtype=float)
    lam = rel_eigenvalues(chip, Linv=Linv)
    shape = np.broadcast_shapes(lam.shape[:-1], psi.shape)
    lam = np.broadcast_to(lam, shape + (n,))
    psi = np.broadcast_to(psi, shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_dir = elem_sym_without(1.0 / lam, alpha)
    return 1.0 - (psi / math.comb(n, alpha))[..., None] * per_dir, lam


def cone_condition(chip, g, psi, alpha: int, Linv=None) -> ConeReport:
    """Check n chi'^{n-1} > (n-alpha) psi chi'^{n-alpha-1} ^ omega^alpha pointwise.

    In the eigenframe of chi' relative to omega the (n-1,n-1)-forms are
    diagonal and the inequality for the direction i reads
    (psi / C(n, alpha)) * S_alpha({1/lam_j : j != i}) < 1.
    """
    if Linv is None:
        Linv = metric_factor(g)
    n = Linv.shape[-1]
    if not 1 <= alpha <= n:
        raise ValueError(f"alpha={alpha} outside [1, {n}]")
    if np.any(np.asarray(psi) <= 0):
        raise ValueError("psi must be positive")
    margins, lam = cone_margins(chip, psi, alpha, Linv)
    least = lam[..., 0]
    if least.min() <= PD_THRESHOLD:
        return ConeReport(False, -np.inf, _argmin_index(least), float(least.min()))
    pointwise = margins.min(axis=-1)
    margin = float(pointwise.min())
    return ConeReport(margin > 0, margin, _argmin_index(pointwise), float(least.min()))


@dataclass
class TorsionCurvature:
    T: np.ndarray  # T[..., k, i, j] = T^k_{ij}
    R: np.ndarray  # R[..., i, j, k, l] = R_{i jbar k lbar}


def _dz(grid: PeriodicGrid, f, i: int, bar: bool = False):
    """d/dz_i (or d/dzbar_i) of a complex scalar field."""
    fr, fi = np.real(f), np.imag(f)
    dx = spectral_derivative(grid, fr, 2 * i) + 1j * spectral_derivative(grid, fi, 2 * i)
    dy = spectral_derivative(grid, fr, 2 * i + 1) + 1j * spectral_derivative(grid, fi, 2 * i + 1)
    return 0.5 * (dx + 1j * dy) if bar else 0.5 * (dx - 1j * dy)


def torsion_curvature(grid: PeriodicGrid, g, deriv=None) -> TorsionCurvature:
    """Chern torsion and curvature of a metric field with spectral derivatives.

    ``deriv(f, i, bar)`` may replace the spectral d/dz_i, e.g. by finite
    differences in tests.
    """
    n = grid.n
    g = np.broadcast_to(np.asarray(g, dtype=complex), grid.shape + (n, n))
    metric_factor(g)
    if deriv is None:
        def deriv(f, i, bar=False):
            return _dz(grid, f, i, bar)
    ginv = np.linalg.inv(g)
    # upper[..., k, l] = g^{k lbar} with sum_l g^{k lbar} g_{j lbar} = delta_kj
    upper = np.swapaxes(ginv, -1, -2)
    dg = np.empty((n,) + g.shape, dtype=complex)     # dg[i, ..., j, l] = d_i g_{j lbar}
    dgb = np.empty((n,) + g.shape, dtype=complex)    # dgb[i, ..., j, l] = dbar_i g_{j lbar}
    for i in range(n):
        for j in range(n):
            for l in range(n):
                dg[i, ..., j, l] = deriv(g[..., j, l], i, False)
                dgb[i, ..., j, l] = deriv(g[..., j, l], i, True)
    T = np.zeros(grid.shape + (n, n, n), dtype=complex)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                T[..., k, i, j] = np.sum(upper[..., k, :] * (dg[i, ..., j, :] - dg[j, ..., i, :]), axis=-1)
    R = np.zeros(grid.shape + (n, n, n, n), dtype=complex)
    for i in range(n):
        for jj in range(n):
            for k in range(n):
                for l in range(n):
                    second = deriv(dg[i, ..., k, l], jj, True)
                    quad = np.einsum("...pq,...q,...p->...", upper, dg[i, ..., k, :], dgb[jj, ..., :, l])
                    R[..., i, jj, k, l] = -second + quad
    return TorsionCurvature(T, R)

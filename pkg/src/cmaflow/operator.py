"""The Monge-Ampere type operator ln(chi_u^n / (chi_u^{n-a} ^ omega^a)) - ln psi."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import grid as _grid
from .grid import PeriodicGrid, complex_hessian, integrate
from .hermitian import (
    PD_THRESHOLD,
    NotPositiveDefiniteError,
    _argmin_index,
    _eigvalsh2_entries,
    elem_sym,
    elem_sym_without,
    metric_factor,
    rel_eigenvalues,
    to_frame,
    wedge_ratio,
)


class NotAdmissibleError(NotPositiveDefiniteError):
    """chi_u left the positive cone."""


class _FrameHessian:
    """Upper-triangle entries of Linv (chi + ddbar u) Linv^H for a constant metric.

    The constant frame change is folded into the Fourier symbols, so one
    forward and n^2 real inverse transforms give the frame entries directly.
    Entry order: for a <= d, (a, a) -> one real part; (a, d) -> re, im.
    """

    def __init__(self, grid: PeriodicGrid, Linv, chi):
        n = grid.n
        M = np.asarray(Linv).reshape(n, n)
        parts = grid.hessian_parts

        def rq(b, c):
            r, q = parts[min(b, c), max(b, c)]
            return (r.real, q.real) if b <= c else (r.real, -q.real)

        chi_f = to_frame(chi, Linv)
        syms, chis = [], []
        for a in range(n):
            for d in range(a, n):
                re = np.zeros(grid.spectrum_shape)
                im = np.zeros(grid.spectrum_shape)
                for b in range(n):
                    for c in range(n):
                        m = M[a, b] * np.conj(M[d, c])
                        r, q = rq(b, c)
                        re = re + m.real * r - m.imag * q
                        im = im + m.imag * r + m.real * q
                syms.append(re)
                chis.append(chi_f[..., a, d].real)
                if d > a:
                    syms.append(im)
                    chis.append(chi_f[..., a, d].imag)
        self.n = n
        self.grid = grid
        self.symbols = np.stack(syms)
        self.chi_parts = chis

    def entries(self, u):
        uh = sfft.rfftn(u, workers=_grid._FFT_WORKERS)
        parts = sfft.irfftn(self.symbols * uh, s=self.grid.shape,
                            axes=tuple(range(1, self.grid.ndim + 1)),
                            workers=_grid._FFT_WORKERS)
        for k, c in enumerate(self.chi_parts):
            parts[k] += c
        return parts

    def eigenvalues(self, u):
        e = self.entries(u)
        if self.n == 2:
            return _eigvalsh2_entries(e[0], e[3], e[1], e[2])
        n = self.n
        Y = np.empty(self.grid.shape + (n, n), dtype=complex)
        k = 0
        for a in range(n):
            for d in range(a, n):
                if d == a:
                    Y[..., a, a] = e[k]
                    k += 1
                else:
                    Y[..., a, d] = e[k] + 1j * e[k + 1]
                    Y[..., d, a] = e[k] - 1j * e[k + 1]
                    k += 2
        return np.linalg.eigvalsh(Y)


@dataclass
class ProblemData:
    """omega, chi, psi and alpha on a grid.

    ``omega`` and ``chi`` may be full Hermitian fields or broadcastable
    constants (``grid.constant_matrix``). The volume density ``vol`` is
    omega^n relative to the flat measure, normalised so that omega = I
    gives 1.
    """

    grid: PeriodicGrid
    alpha: int
    omega: np.ndarray
    chi: np.ndarray
    psi: np.ndarray
    Linv: np.ndarray = field(init=False, repr=False)
    vol: np.ndarray = field(init=False, repr=False)
    log_psi: np.ndarray = field(init=False, repr=False)
    _frame: _FrameHessian | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        n = self.grid.n
        if not 1 <= self.alpha <= n:
            raise ValueError(f"alpha={self.alpha} outside [1, {n}]")
        self.omega = np.asarray(self.omega, dtype=complex)
        self.chi = np.asarray(self.chi, dtype=complex)
        for name, A in (("omega", self.omega), ("chi", self.chi)):
            if A.shape[-2:] != (n, n) or A.ndim != self.grid.ndim + 2:
                raise ValueError(f"{name} must have shape grid + ({n}, {n}), got {A.shape}")
            np.broadcast_shapes(A.shape, self.grid.shape + (n, n))
            if np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2)))) > 1e-13:
                raise ValueError(f"{name} is not Hermitian")
        psi = np.asarray(self.psi, dtype=float)
        self.psi = np.broadcast_to(psi, self.grid.shape).copy()
        if not np.all(np.isfinite(self.psi)) or np.any(self.psi <= 0):
            raise ValueError("psi must be finite and positive")
        self.Linv = metric_factor(self.omega)
        det = np.linalg.det(self.omega).real
        self.vol = np.broadcast_to(det, self.grid.shape).copy()
        self.log_psi = np.log(self.psi)
        if self.omega.shape[:-2] == (1,) * self.grid.ndim:
            self._frame = _FrameHessian(self.grid, self.Linv, self.chi)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def is_kahler(self) -> bool:
        """Constant omega and chi, so both forms are closed on the torus."""
        flat = (1,) * self.grid.ndim
        return self.omega.shape[:-2] == flat and self.chi.shape[:-2] == flat

    def with_psi(self, psi) -> "ProblemData":
        return dataclasses.replace(self, psi=psi)

    def eigenvalues_at(self, u) -> np.ndarray:
        """Eigenvalues of chi_u relative to omega, ascending, shape grid + (n,)."""
        if self._frame is not None:
            _grid._check_field(self.grid, u)
            lam = self._frame.eigenvalues(u)
        else:
            lam = rel_eigenvalues(chi_u(self, u), Linv=self.Linv)
        return np.broadcast_to(lam, self.grid.shape + (self.n,))


@dataclass
class OperatorValue:
    F: np.ndarray
    admissible: bool
    least_rel_eig: float
    eigenvalues: np.ndarray = field(repr=False)


def chi_u(data: ProblemData, u) -> np.ndarray:
    return data.chi + complex_hessian(data.grid, u)


def _eigs(data: ProblemData, X) -> np.ndarray:
    lam = rel_eigenvalues(X, Linv=data.Linv)
    return np.broadcast_to(lam, data.grid.shape + (data.n,))


def admissible(data: ProblemData, u) -> tuple[bool, float]:
    least = float(data.eigenvalues_at(u)[..., 0].min())
    return least > PD_THRESHOLD, least


def log_rhs_from_eigs(data: ProblemData, lam) -> np.ndarray:
    """ln C(n,a) - ln psi - ln S_a(1/lam)."""
    sa = elem_sym(1.0 / lam, data.alpha)
    return math.log(math.comb(data.n, data.alpha)) - data.log_psi - np.log(sa)


def operator_value(data: ProblemData, u, strict: bool = True) -> OperatorValue:
    """Right-hand side of the flow at ``u``.

    With ``strict=False`` an inadmissible ``u`` is reported through the
    ``admissible`` flag instead of raising; F is then NaN where chi_u is
    not positive.
    """
    lam = data.eigenvalues_at(u)
    least = lam[..., 0]
    lmin = float(least.min())
    ok = lmin > PD_THRESHOLD
    if not ok:
        if strict:
            raise NotAdmissibleError("chi_u", lmin, _argmin_index(least))
        bad = least <= PD_THRESHOLD
        safe = np.where(bad[..., None], 1.0, lam)
        F = np.where(bad, np.nan, log_rhs_from_eigs(data, safe))
        return OperatorValue(F, False, lmin, lam)
    return OperatorValue(log_rhs_from_eigs(data, lam), True, lmin, lam)


def density_ratio(data: ProblemData, X) -> np.ndarray:
    """X^n / (X^{n-a} ^ omega^a) pointwise, from relative eigenvalues."""
    lam = _eigs(data, X)
    n, a = data.n, data.alpha
    return math.comb(n, a) * elem_sym(lam, n) / elem_sym(lam, n - a)


def wedge_log_ratio(data: ProblemData, X) -> np.ndarray:
    """ln(X^n / omega^n) - ln(X^{n-a} ^ omega^a / omega^n) through mixed discriminants."""
    n, a = data.n, data.alpha
    top = wedge_ratio([(X, n)], Linv=data.Linv)
    mixed = wedge_ratio([(X, n - a), (data.omega, a)], Linv=data.Linv)
    return np.broadcast_to(np.log(top) - np.log(mixed), data.grid.shape)


def mixed_volume_density(data: ProblemData, X) -> np.ndarray:
    """Density of X^{n-a} ^ omega^a against the flat measure (same normalisation as ``vol``)."""
    n, a = data.n, data.alpha
    ratio = wedge_ratio([(X, n - a), (data.omega, a)], Linv=data.Linv)
    return np.broadcast_to(ratio * data.vol, data.grid.shape)


def invariant_c(data: ProblemData) -> float:
    """int chi^n / int chi^{n-a} ^ omega^a."""
    g = data.grid
    top = np.broadcast_to(wedge_ratio([(data.chi, data.n)], Linv=data.Linv) * data.vol, g.shape)
    den = integrate(g, mixed_volume_density(data, data.chi))
    if not den > 0:
        raise ValueError(f"int chi^(n-a) ^ omega^a = {den:.3e} is not positive")
    return integrate(g, top) / den


def _ratio_gradient(lam, n: int, a: int):
    """F = S_n/S_{n-a} and dF/dlam_i."""
    sn = elem_sym(lam, n)
    sm = elem_sym(lam, n - a)
    dn = elem_sym_without(lam, n - 1)
    dm = elem_sym_without(lam, n - a - 1)
    F = sn / sm
    grad = (dn * sm[..., None] - sn[..., None] * dm) / (sm ** 2)[..., None]
    return F, grad


def _frame_eig(data: ProblemData, u):
    X = chi_u(data, u)
    Y = np.broadcast_to(to_frame(X, data.Linv), data.grid.shape + (data.n, data.n))
    lam, U = np.linalg.eigh(Y)
    least = lam[..., 0]
    if least.min() <= PD_THRESHOLD:
        raise NotAdmissibleError("chi_u", least.min(), _argmin_index(least))
    return lam, U


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def ratio_derivative(data: ProblemData, u):
    """F(u) = S_n(X)/S_{n-a}(X) and the matrix [F^{i jbar}] = dF/dX_{i jbar}.

    Returned so that the linearisation is sum_ij P[i, j] d_i dbar_j.
    """
    lam, U = _frame_eig(data, u)
    F, grad = _ratio_gradient(lam, data.n, data.alpha)
    A = (U * grad[..., None, :]) @ _herm(U)
    Linv = data.Linv
    B = _herm(Linv) @ A @ Linv
    return F, np.swapaxes(B, -1, -2)


def linearized_metric(data: ProblemData, u) -> np.ndarray:
    """G_{i jbar} = F(u) F_{i jbar}(u), stored with the same index layout as omega."""
    lam, U = _frame_eig(data, u)
    F, grad = _ratio_gradient(lam, data.n, data.alpha)
    if np.any(grad <= 0):
        raise ValueError("[F^{i jbar}] is singular or indefinite")
    Ainv = (U * (1.0 / grad)[..., None, :]) @ _herm(U)
    L = np.linalg.inv(data.Linv)
    return F[..., None, None] * (L @ Ainv @ _herm(L))


def diffusion_matrix(data: ProblemData, u) -> np.ndarray:
    """G^{i jbar} = F^{i jbar} / F: the coefficients of the linearised flow."""
    F, P = ratio_derivative(data, u)
    return P / F[..., None, None]

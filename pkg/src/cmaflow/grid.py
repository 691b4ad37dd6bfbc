"""Periodic grids on flat complex tori and spectral calculus on them.

Real coordinates are ``x[0], ..., x[2n-1]`` with ``z_j = x[2j] + i x[2j+1]``.
Scalar fields are real arrays of shape ``grid.shape``; Hermitian fields are
complex arrays of shape ``grid.shape + (n, n)`` (or broadcastable to it, e.g.
``(1,) * 2n + (n, n)`` for constant coefficients).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

# worker count used by every FFT in the package; set through set_fft_workers
_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    global _FFT_WORKERS
    if workers < 1:
        raise ValueError("need at least one FFT worker")
    _FFT_WORKERS = int(workers)


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the torus R^{2n} / prod(L_k Z).

    Axes with a single point are legal and mean the field is constant in
    that direction.
    """

    n: int
    points: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(int(p) for p in self.points))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if self.n < 2:
            raise ValueError(f"complex dimension must be >= 2, got {self.n}")
        if len(self.points) != 2 * self.n or len(self.periods) != 2 * self.n:
            raise ValueError(f"need {2 * self.n} axes for n={self.n}")
        if any(p < 1 for p in self.points):
            raise ValueError(f"axis sample counts must be >= 1: {self.points}")
        if any(not np.isfinite(L) or L <= 0 for L in self.periods):
            raise ValueError(f"periods must be positive: {self.periods}")

    @classmethod
    def uniform(cls, n: int, points: int, period: float = 1.0) -> "PeriodicGrid":
        return cls(n, (points,) * (2 * n), (period,) * (2 * n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.periods, self.points))

    @property
    def h_min(self) -> float:
        """Smallest spacing among resolved axes (axes with N > 1)."""
        resolved = [h for h, N in zip(self.spacing, self.points) if N > 1]
        if not resolved:
            raise ValueError("grid has no resolved axis")
        return min(resolved)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    def coords(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate arrays, one per real axis."""
        out = []
        for k, (N, L) in enumerate(zip(self.points, self.periods)):
            shape = [1] * self.ndim
            shape[k] = N
            out.append((np.arange(N) * (L / N)).reshape(shape))
        return out

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def constant_matrix(self, M) -> np.ndarray:
        """Broadcastable Hermitian field holding the same matrix everywhere."""
        M = np.asarray(M, dtype=complex)
        if M.shape != (self.n, self.n):
            raise ValueError(f"expected {self.n}x{self.n} matrix, got {M.shape}")
        return M.reshape((1,) * self.ndim + M.shape)

    def full_matrix_field(self, A) -> np.ndarray:
        return np.broadcast_to(A, self.shape + (self.n, self.n)).copy()

    # wavenumbers in the rfftn layout (last axis halved)
    @cached_property
    def _wavenumbers(self) -> tuple[np.ndarray, ...]:
        ks = []
        last = self.ndim - 1
        for k, (N, L) in enumerate(zip(self.points, self.periods)):
            if k == last:
                kk = 2 * np.pi * sfft.rfftfreq(N, d=L / N)
            else:
                kk = 2 * np.pi * sfft.fftfreq(N, d=L / N)
            shape = [1] * self.ndim
            shape[k] = kk.size
            ks.append(kk.reshape(shape))
        return tuple(ks)

    @cached_property
    def _first_symbols(self) -> tuple[np.ndarray, ...]:
        # i*k with the unpaired Nyquist mode dropped so odd derivatives stay real
        out = []
        for k, (N, kk) in enumerate(zip(self.points, self._wavenumbers)):
            ik = 1j * kk.copy()
            if N % 2 == 0 and N > 1:
                ik[np.isclose(np.abs(kk), np.pi * N / self.periods[k])] = 0.0
            out.append(ik)
        return tuple(out)

    @cached_property
    def hessian_parts(self) -> dict:
        """Fourier symbols (re, im) of d^2/dz_i dzbar_j for i <= j, real-output each."""
        n = self.n
        d1 = self._first_symbols
        out = {}
        for i in range(n):
            a, b = 2 * i, 2 * i + 1
            # diagonal: (u_aa + u_bb)/4 with the full second-derivative symbol
            diag = -(self._wavenumbers[a] ** 2 + self._wavenumbers[b] ** 2) / 4
            out[i, i] = (diag, np.zeros_like(diag))
            for j in range(i + 1, n):
                c, d = 2 * j, 2 * j + 1
                out[i, j] = ((d1[a] * d1[c] + d1[b] * d1[d]) / 4,
                             (d1[a] * d1[d] - d1[b] * d1[c]) / 4)
        return out

    @property
    def spectrum_shape(self) -> tuple[int, ...]:
        return tuple(np.broadcast_shapes(*(k.shape for k in self._wavenumbers)))

    @cached_property
    def _hessian_symbols(self) -> np.ndarray:
        syms = []
        for i in range(self.n):
            syms.append(self.hessian_parts[i, i][0])
            for j in range(i + 1, self.n):
                syms.extend(self.hessian_parts[i, j])
        return np.stack([np.broadcast_to(s, self.spectrum_shape) for s in syms])


def _check_field(grid: PeriodicGrid, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")
    return f


def spectral_derivative(grid: PeriodicGrid, f, axis: int, order: int = 1) -> np.ndarray:
    """d^order f / dx[axis] by FFT; exact for band-limited fields."""
    if not 0 <= axis < grid.ndim:
        raise ValueError(f"axis {axis} out of range for {grid.ndim} real axes")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    f = _check_field(grid, f)
    if grid.points[axis] == 1:
        return np.zeros_like(f)
    if order == 1:
        sym = grid._first_symbols[axis]
    else:
        sym = -grid._wavenumbers[axis] ** 2
    fh = sfft.rfftn(f, workers=_FFT_WORKERS)
    return sfft.irfftn(sym * fh, s=grid.shape, workers=_FFT_WORKERS)


def complex_hessian(grid: PeriodicGrid, u) -> np.ndarray:
    """The matrix field [d^2 u / dz_i dzbar_j], exactly Hermitian."""
    u = _check_field(grid, u)
    n = grid.n
    uh = sfft.rfftn(u, workers=_FFT_WORKERS)
    parts = sfft.irfftn(
        grid._hessian_symbols * uh,
        s=grid.shape,
        axes=tuple(range(1, grid.ndim + 1)),
        workers=_FFT_WORKERS,
    )
    H = np.empty(grid.shape + (n, n), dtype=complex)
    idx = 0
    for i in range(n):
        H[..., i, i] = parts[idx]
        idx += 1
        for j in range(i + 1, n):
            H[..., i, j] = parts[idx] + 1j * parts[idx + 1]
            H[..., j, i] = parts[idx] - 1j * parts[idx + 1]
            idx += 2
    return H


def integrate(grid: PeriodicGrid, f, vol=None) -> float:
    """Rectangle rule ``prod(h) * sum(f * vol)``; spectrally accurate for periodic data."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    if vol is None:
        return grid.cell_volume * float(np.sum(f))
    vol = np.asarray(vol, dtype=float)
    if vol.shape != grid.shape:
        raise ValueError(f"volume density shape {vol.shape} does not match grid {grid.shape}")
    if np.any(vol < 0):
        raise ValueError("volume density must be nonnegative")
    return grid.cell_volume * float(np.sum(f * vol))


def lowpass(grid: PeriodicGrid, f, cutoff: float) -> np.ndarray:
    """Gaussian spectral filter exp(-|k|^2 / (2 cutoff^2)), cutoff in rad per unit length."""
    f = _check_field(grid, f)
    k2 = sum(k ** 2 for k in grid._wavenumbers)
    fh = sfft.rfftn(f, workers=_FFT_WORKERS)
    return sfft.irfftn(np.exp(-k2 / (2 * cutoff ** 2)) * fh, s=grid.shape, workers=_FFT_WORKERS)

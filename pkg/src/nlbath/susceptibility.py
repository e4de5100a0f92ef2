"""Susceptibility kernels and vacuum noise correlations by frequency quadrature.

All kernels are causal: they vanish identically for non-positive (linear) or
negative (nonlinear) time arguments, and the zero is returned exactly rather
than computed.  The ``1/omega`` factor in every kernel uses the integration
frequency of the slot it belongs to.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedOrder
from .model import Coupling, FrequencyGrid

_IU = np.triu_indices(3, 1)


class ResolutionWarning(UserWarning):
    pass


def _mirror_upper(m):
    """Copy the strict upper triangle of the trailing 3x3 block onto the lower one."""
    m[..., _IU[1], _IU[0]] = m[..., _IU[0], _IU[1]]
    return m


def contraction1(c1: Coupling, grid: FrequencyGrid) -> np.ndarray:
    """K[a] = f(w_a) f(w_a)^T, exactly symmetric, shape (N, 3, 3)."""
    f = c1.on_grid(grid)
    return _mirror_upper(np.einsum("ain,ajn->aij", f, f))


def contraction2(c2: Coupling, c1: Coupling, grid: FrequencyGrid) -> np.ndarray:
    """G[a, b, i, j, k] = f2[a, b, i, n, m] f1[a, j, n] f1[b, k, m]."""
    f2 = c2.on_grid(grid)
    f1 = c1.on_grid(grid)
    return np.einsum("abinm,ajn,bkm->abijk", f2, f1, f1, optimize=True)


def _sine_weights(grid, t):
    """w_a sin(w_a t) / w_a for every time in ``t``, shape (len(t), N)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.sin(np.outer(t, grid.points)) * (grid.weights / grid.points)


def _cosine_weights(grid, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.cos(np.outer(t, grid.points)) * grid.weights


def check_resolution(grid: FrequencyGrid, T: float, stacklevel=3):
    """Warn when the grid has fewer than ten nodes per period of sin(cutoff * T)."""
    need = 10 * grid.cutoff * T / (2 * math.pi)
    if len(grid) < need:
        warnings.warn(
            f"frequency grid has {len(grid)} nodes; kernels out to T={T:g} with cutoff "
            f"{grid.cutoff:g} need at least {math.ceil(need)}",
            ResolutionWarning,
            stacklevel=stacklevel,
        )
        return False
    return True


# ---------------------------------------------------------------------------
# linear kernel


def chi1(c: Coupling, grid: FrequencyGrid, t: float) -> np.ndarray:
    if t <= 0:
        return np.zeros((3, 3))
    k = contraction1(c, grid)
    out = np.tensordot(_sine_weights(grid, t)[0], k, axes=(0, 0))
    return _mirror_upper(out)


@dataclass(frozen=True, eq=False)
class SusceptibilityKernel1:
    """chi1 and its first two time derivatives on t = 0, dt, ..., T.

    Derivatives at t = 0 are right limits; the kernel itself is zero for t <= 0.
    """

    times: np.ndarray
    values: np.ndarray
    rate: np.ndarray
    curvature: np.ndarray

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def T(self):
        return float(self.times[-1])

    def is_zero(self):
        return not (np.any(self.values) or np.any(self.rate))

    def memory_horizon(self, rel=1e-8):
        """Time after which |d chi1/dt| stays below ``rel`` of its maximum."""
        mag = np.max(np.abs(self.rate), axis=(1, 2))
        peak = mag.max()
        if peak == 0:
            return 0.0
        above = np.nonzero(mag >= rel * peak)[0]
        last = int(above[-1])
        if last == mag.size - 1:
            return math.inf
        return float(self.times[last + 1])


def _time_axis(dt, T):
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    if not T >= dt:
        raise InvalidArgument("T must be at least dt")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        raise InvalidArgument("T must be an integer multiple of dt")
    return dt * np.arange(n + 1)


def chi1_kernel(c: Coupling, grid: FrequencyGrid, dt: float, T: float) -> SusceptibilityKernel1:
    times = _time_axis(dt, T)
    check_resolution(grid, T)
    k = contraction1(c, grid).reshape(len(grid), 9)
    s = _sine_weights(grid, times)
    co = _cosine_weights(grid, times)
    sn = np.sin(np.outer(times, grid.points)) * (grid.weights * grid.points)
    values = (s @ k).reshape(-1, 3, 3)
    values[0] = 0.0
    rate = (co @ k).reshape(-1, 3, 3)
    curvature = -(sn @ k).reshape(-1, 3, 3)
    for arr in (values, rate, curvature):
        _mirror_upper(arr)
    return SusceptibilityKernel1(times, values, rate, curvature)


# ---------------------------------------------------------------------------
# first nonlinear kernel


def chi2(c2: Coupling, c1: Coupling, grid: FrequencyGrid, t1: float, t2: float) -> np.ndarray:
    if t1 < 0 or t2 < 0:
        return np.zeros((3, 3, 3))
    g = contraction2(c2, c1, grid)
    u1 = _sine_weights(grid, t1)[0]
    u2 = _sine_weights(grid, t2)[0]
    return np.tensordot(u2, np.tensordot(u1, g, axes=(0, 0)), axes=(0, 0))


@dataclass(frozen=True, eq=False)
class SusceptibilityKernel2:
    """chi2 on the square grid (t1, t2) in {0, dt, ..., T}^2.

    ``rate`` is (d/dt1 + d/dt2) chi2, the kernel that multiplies the velocity
    pair in the equation of motion; ``mixed`` is d^2 chi2 / dt1 dt2.
    """

    times: np.ndarray
    values: np.ndarray
    rate: np.ndarray
    mixed: np.ndarray

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def T(self):
        return float(self.times[-1])

    def scaled(self, factor):
        return SusceptibilityKernel2(self.times, factor * self.values, factor * self.rate, factor * self.mixed)


def _pair(a, g, b):
    """sum_ab a[s, a] b[u, b] g[a, b, ...] -> [s, u, ...]."""
    tmp = np.tensordot(a, g, axes=(1, 0))  # (s, N, ...)
    out = np.tensordot(b, tmp, axes=(1, 1))  # (u, s, ...)
    return np.swapaxes(out, 0, 1)


def chi2_kernel(c2: Coupling, c1: Coupling, grid: FrequencyGrid, dt: float, T: float) -> SusceptibilityKernel2:
    times = _time_axis(dt, T)
    check_resolution(grid, T)
    g = contraction2(c2, c1, grid)
    s = _sine_weights(grid, times)
    co = _cosine_weights(grid, times)
    values = _pair(s, g, s)
    rate = _pair(co, g, s) + _pair(s, g, co)
    mixed = _pair(co, g, co)
    return SusceptibilityKernel2(times, values, rate, mixed)


def chi2_table(c2: Coupling, c1: Coupling, grid: FrequencyGrid, times) -> np.ndarray:
    """chi2 on the square ``times`` x ``times``; rows or columns with t < 0 are exact zeros."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    g = contraction2(c2, c1, grid)
    s = _sine_weights(grid, times)
    out = _pair(s, g, s)
    neg = times < 0
    out[neg] = 0.0
    out[:, neg] = 0.0
    return out


# ---------------------------------------------------------------------------
# generic order


def _slot_factors(c1, grid, times):
    """P[k][a, i, j] = u(w_a, t_k) f1[a, i, j] for each time argument."""
    f1 = c1.on_grid(grid)
    u = _sine_weights(grid, times)
    return [u[k][:, None, None] * f1 for k in range(len(times))]


def chi_n(cn: Coupling, c1: Coupling, grid: FrequencyGrid, times) -> np.ndarray:
    """Susceptibility tensor of order n = len(times) <= 3."""
    times = tuple(float(t) for t in np.atleast_1d(times))
    n = len(times)
    if n > 3:
        raise UnsupportedOrder(f"order {n} kernels are not supported (n <= 3)")
    if n == 0 or cn.order != n:
        raise InvalidArgument(f"coupling of order {cn.order} cannot build an order-{n} kernel")
    if n == 1:
        return chi1(cn, grid, times[0])
    if any(t < 0 for t in times):
        return np.zeros((3,) * (n + 1))
    if n == 2:
        return chi2(cn, c1, grid, *times)
    fn = cn.on_grid(grid)
    p1, p2, p3 = _slot_factors(c1, grid, times)
    return np.einsum("abcijkl,axj,byk,czl->ixyz", fn, p1, p2, p3, optimize=True)


@dataclass(frozen=True, eq=False)
class SusceptibilityKernel3:
    times: np.ndarray
    values: np.ndarray  # (n, n, n, 3, 3, 3, 3)


def chi3_kernel(c3: Coupling, c1: Coupling, grid: FrequencyGrid, times) -> SusceptibilityKernel3:
    """chi3 on the cube ``times``^3 (times must be non-negative)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise InvalidArgument("kernel grids start at t >= 0")
    f3 = c3.on_grid(grid)
    f1 = c1.on_grid(grid)
    p = _sine_weights(grid, times)[:, :, None, None] * f1[None]  # (s, a, x, j)
    t = np.einsum("abcijkl,sazj->sbcizkl", f3, p, optimize=True)
    t = np.einsum("sbcizkl,ubyk->sucizyl", t, p, optimize=True)
    t = np.einsum("sucizyl,vcxl->suvizyx", t, p, optimize=True)
    return SusceptibilityKernel3(times, t)


# ---------------------------------------------------------------------------
# vacuum noise correlation


@dataclass(frozen=True, eq=False)
class NoiseCorrelation:
    lags: np.ndarray
    values: np.ndarray  # complex (n, 3, 3)

    def hermiticity_violation(self):
        """max |C_ij(tau) - conj(C_ji(-tau))| over lags whose negatives are also present."""
        lags = self.lags
        worst = 0.0
        for k, tau in enumerate(lags):
            match = np.nonzero(lags == -tau)[0]
            if match.size:
                other = self.values[match[0]]
                worst = max(worst, float(np.max(np.abs(self.values[k] - other.conj().T))))
        return worst


def noise_correlation(c: Coupling, grid: FrequencyGrid, tau, hbar=1.0):
    """<R_N(t + tau) R_N(t)^T> in the bath vacuum.

    Scalar ``tau`` gives a complex 3x3 matrix; an array gives a
    :class:`NoiseCorrelation` over those lags.
    """
    k = contraction1(c, grid).reshape(len(grid), 9)
    lags = np.atleast_1d(np.asarray(tau, dtype=float))
    phase = np.outer(lags, grid.points)
    base = grid.weights * hbar / (2 * grid.points)
    re = (np.cos(phase) * base) @ k
    im = -(np.sin(phase) * base) @ k
    vals = (re + 1j * im).reshape(-1, 3, 3)
    _mirror_upper(vals)
    if np.ndim(tau) == 0:
        return vals[0]
    return NoiseCorrelation(lags, vals)


# ---------------------------------------------------------------------------
# symmetry checks


@dataclass(frozen=True)
class SymmetryCheck:
    chi1: float | None = None
    chi2: float | None = None
    chi2_relative: float | None = None
    chi3: float | None = None
    chi3_relative: float | None = None

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}

    def passed(self, tol=1e-12):
        checks = [self.chi1 == 0 if self.chi1 is not None else True]
        for v in (self.chi2_relative, self.chi3_relative):
            if v is not None:
                checks.append(v < tol)
        return all(checks)


def _relative(diff, scale):
    return 0.0 if scale == 0 else diff / scale


def check_symmetries(k1=None, k2=None, k3=None) -> SymmetryCheck:
    """Largest violations of the kernel symmetry laws.

    chi1: |chi1_ij - chi1_ji|; chi2: |chi2_ijk(t1, t2) - chi2_ikj(t2, t1)|;
    chi3: the same for every transposition of two (index, time) slots.
    Relative values are scaled by the largest kernel magnitude.
    """
    out = {}
    if k1 is not None:
        v = k1.values if hasattr(k1, "values") else np.asarray(k1)
        out["chi1"] = float(np.max(np.abs(v - np.swapaxes(v, -1, -2)))) if v.size else 0.0
    if k2 is not None:
        v = k2.values if hasattr(k2, "values") else np.asarray(k2)
        d = float(np.max(np.abs(v - np.transpose(v, (1, 0, 2, 4, 3)))))
        out["chi2"] = d
        out["chi2_relative"] = _relative(d, float(np.max(np.abs(v))))
    if k3 is not None:
        v = k3.values if hasattr(k3, "values") else np.asarray(k3)
        worst = 0.0
        for k, l in itertools.combinations(range(3), 2):
            perm = list(range(7))
            perm[k], perm[l] = perm[l], perm[k]
            perm[4 + k], perm[4 + l] = perm[4 + l], perm[4 + k]
            worst = max(worst, float(np.max(np.abs(v - np.transpose(v, perm)))))
        out["chi3"] = worst
        out["chi3_relative"] = _relative(worst, float(np.max(np.abs(v))))
    return SymmetryCheck(**out)

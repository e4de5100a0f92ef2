"""Spontaneous emission of a two-level atom in the nonlinear absorbing bath.

Populations obey

    d rho11/dt = -d rho22/dt = (gamma1(t) + gamma2(t)) rho22 + beta(t) (rho22 - rho11)

where ``gamma1`` and ``gamma2`` are the finite-time rates built from the linear
and first nonlinear couplings (they tend to the decay-rate contributions at
long times) and ``beta`` is the transient term whose kernel tends to
delta(omega0) = 0.  Finite-time kernels int_0^t cos(D (t - t')) dt' are used in
closed form, sin(D t) / D.  Level shifts (the imaginary parts) are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentIntegrand, InvalidArgument, ResolutionError
from .model import Coupling, FrequencyGrid, TabulatedCoupling, apply_orthogonal, random_orthogonal

FORMS = ("finite-time", "markov")


@dataclass(frozen=True, eq=False)
class AtomParams:
    omega0: float
    d: np.ndarray
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise InvalidArgument("transition frequency must be positive")
        if not self.mass > 0 or not self.hbar > 0:
            raise InvalidArgument("mass and hbar must be positive")
        d = np.array(self.d, dtype=complex)
        if d.shape != (3,):
            raise InvalidArgument("dipole must be a 3-vector")
        d.flags.writeable = False
        object.__setattr__(self, "d", d)


@dataclass(frozen=True)
class DecayRateBreakdown:
    gamma_linear: float
    gamma_nonlinear: float
    gamma_total: float


def _dipole_projection1(f, d):
    """|f^T d|^2 = d*_i f_ij f_lj d_l for f of shape (..., 3, 3)."""
    u = np.einsum("...ij,i->...j", f, d)
    return np.sum(np.abs(u) ** 2, axis=-1)


def _dipole_projection2(f, d):
    """sum_jk |d_i f_ijk|^2 for f of shape (..., 3, 3, 3)."""
    u = np.einsum("...ijk,i->...jk", f, d)
    return np.sum(np.abs(u) ** 2, axis=(-2, -1))


def gamma_linear(a: AtomParams, c1: Coupling) -> float:
    """pi m^2 omega0 / hbar * d* f(omega0) f(omega0)^T d."""
    if isinstance(c1, TabulatedCoupling):
        lo, hi = c1.frequency_range
        if not lo <= a.omega0 <= hi:
            raise InvalidArgument(f"omega0={a.omega0:g} outside tabulated range [{lo:g}, {hi:g}]")
    f = c1.evaluate(a.omega0)
    return float(math.pi * a.mass**2 * a.omega0 / a.hbar * _dipole_projection1(f, a.d))


def _theta_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    theta = (x + 1.0) * math.pi / 4
    return theta, w * math.pi / 4


def _nonlinear_integrand(a, c2, theta):
    """Integrand in theta where omega = omega0 sin^2(theta)."""
    s, c = np.sin(theta), np.cos(theta)
    w1 = a.omega0 * s**2
    w2 = a.omega0 * c**2
    p = _dipole_projection2(c2.evaluate(w1, w2), a.d)
    return 2.0 * p / (a.omega0 * s * c)


def _check_endpoints(a, c2):
    probes = np.array([1e-3, 1e-5, 1e-7])
    for edge in (probes, math.pi / 2 - probes):
        vals = np.abs(_nonlinear_integrand(a, c2, edge))
        if vals[-1] > 10 * max(vals[0], 1e-300) and vals[-1] > vals[1]:
            raise DivergentIntegrand(
                "nonlinear decay integrand grows toward an endpoint of (0, omega0); "
                "the coupling must vanish at zero frequency"
            )


def gamma_nonlinear(a: AtomParams, c2: Coupling | None, grid: FrequencyGrid) -> float:
    """pi m^2 omega0^2 int_0^omega0 dw d* f2(w, omega0-w) f2(w, omega0-w) d / (w (omega0 - w)).

    Evaluated with ``len(grid)`` Gauss-Legendre nodes after substituting
    w = omega0 sin^2(theta).
    """
    if c2 is None or c2.is_zero():
        return 0.0
    if c2.order != 2:
        raise InvalidArgument("gamma_nonlinear needs an order-2 coupling")
    _check_endpoints(a, c2)
    theta, wts = _theta_rule(len(grid))
    integral = float(np.sum(wts * _nonlinear_integrand(a, c2, theta)))
    return math.pi * a.mass**2 * a.omega0**2 * integral


def decay_rate(a: AtomParams, c1: Coupling, c2: Coupling | None, grid: FrequencyGrid) -> DecayRateBreakdown:
    gl = gamma_linear(a, c1)
    gn = gamma_nonlinear(a, c2, grid)
    return DecayRateBreakdown(gl, gn, gl + gn)


@dataclass(frozen=True)
class DecayReport:
    breakdown: DecayRateBreakdown
    invariance_max_dev: float
    seeds: tuple

    def as_dict(self):
        b = self.breakdown
        return {
            "gamma_linear": b.gamma_linear,
            "gamma_nonlinear": b.gamma_nonlinear,
            "gamma_total": b.gamma_total,
            "invariance_max_dev": self.invariance_max_dev,
        }


def gamma_report(a, c1, c2, grid, seeds=(0, 1, 2, 3, 4), transforms=None) -> DecayReport:
    """Decay-rate breakdown plus its largest relative change under gauge transforms."""
    base = decay_rate(a, c1, c2, grid)
    if transforms is None:
        transforms = [random_orthogonal(s) for s in seeds]
    dev = 0.0
    for A in transforms:
        c1t = apply_orthogonal(c1, A)
        c2t = None if c2 is None else apply_orthogonal(c2, A)
        other = decay_rate(a, c1t, c2t, grid).gamma_total
        diff = abs(other - base.gamma_total)
        dev = max(dev, diff / base.gamma_total if base.gamma_total else diff)
    return DecayReport(base, dev, tuple(seeds))


# ---------------------------------------------------------------------------
# master equation


@dataclass(frozen=True, eq=False)
class MasterEquationResult:
    times: np.ndarray
    rho11: np.ndarray
    rho22: np.ndarray
    rho12: np.ndarray
    form: str
    max_trace_drift: float = 0.0
    max_cancellation: float = 0.0
    min_eigenvalue: float = 0.0
    transient_transfer: float = 0.0
    gamma: float | None = None
    extra: dict = field(default_factory=dict)

    def density_matrices(self):
        rho = np.empty((self.times.size, 2, 2), dtype=complex)
        rho[:, 0, 0] = self.rho11
        rho[:, 1, 1] = self.rho22
        rho[:, 0, 1] = self.rho12
        rho[:, 1, 0] = np.conj(self.rho12)
        return rho

    def rows(self):
        return np.column_stack([self.times, self.rho11, self.rho22, self.rho12.real, self.rho12.imag])


def _sinc_kernel(delta, t):
    """int_0^t cos(delta (t - t')) dt' = sin(delta t) / delta."""
    return t * np.sinc(delta * t / math.pi)


class _Rates:
    """Time-dependent coefficients of the element equations."""

    def __init__(self, a: AtomParams, c1: Coupling, c2: Coupling | None, grid: FrequencyGrid):
        m2w2 = a.mass**2 * a.omega0**2
        w, om = grid.weights, grid.points
        self.omega0 = a.omega0
        self.h1 = m2w2 / a.hbar * w / om * _dipole_projection1(c1.on_grid(grid), a.d)
        self.d1 = om - a.omega0
        keep = self.h1 != 0
        self.h1, self.d1 = self.h1[keep], self.d1[keep]
        self.h2 = np.zeros(0)
        self.d2 = np.zeros(0)
        self.beta0 = 0.0
        self.cross = 0.0
        self.drive = 0.0
        if c2 is not None and not c2.is_zero():
            f2 = c2.on_grid(grid)
            ww = np.outer(w / om, w / om)
            h2 = m2w2 * ww * _dipole_projection2(f2, a.d)
            d2 = a.omega0 - om[:, None] - om[None, :]
            keep = h2 != 0
            self.h2, self.d2 = h2[keep], d2[keep]
            diag = f2[np.arange(len(grid)), np.arange(len(grid))]  # f2_ijk(w, w)
            vvec = np.einsum("a,aijj->i", w / om, diag)
            dv = complex(a.d @ vvec)
            self.beta0 = 0.5 * m2w2 * abs(dv) ** 2
            self.cross = 0.5 * m2w2 * dv**2
            self.drive = 0.5 * a.mass * a.omega0 * dv

    def gammas(self, t):
        g1 = float(np.sum(self.h1 * _sinc_kernel(self.d1, t)))
        g2 = float(np.sum(self.h2 * _sinc_kernel(self.d2, t))) if self.h2.size else 0.0
        return g1, g2

    def beta(self, t):
        return self.beta0 * math.sin(self.omega0 * t) / self.omega0

    def rhs(self, t, r11, r22, r12):
        g1, g2 = self.gammas(t)
        b = self.beta(t)
        x = (g1 + g2) * r22 + b * (r22 - r11)
        w0 = self.omega0
        e = complex(math.cos(w0 * t), -math.sin(w0 * t))
        J = e * (1 - e) / (1j * w0)
        d12 = self.drive * e - (0.5 * (g1 + g2) + b) * r12 - self.cross * J * np.conj(r12)
        return x, -x, d12


def markov_solution(gamma: float, times, drive: complex = 0.0, omega0: float = 1.0):
    """Closed-form Markov populations and coherence from rho(0) = |2><2|."""
    t = np.asarray(times, dtype=float)
    r22 = np.exp(-gamma * t)
    r11 = 1.0 - r22
    if drive:
        r12 = drive * (np.exp(-1j * omega0 * t) - np.exp(-0.5 * gamma * t)) / (0.5 * gamma - 1j * omega0)
    else:
        r12 = np.zeros(t.shape, dtype=complex)
    return r11, r22, r12


def integrate_master_equation(
    a: AtomParams,
    c1: Coupling,
    c2: Coupling | None,
    grid: FrequencyGrid,
    h: float,
    n: int,
    form: str = "finite-time",
    gamma: float | None = None,
) -> MasterEquationResult:
    """Reduced density matrix from rho(0) = |2><2| with the bath in its vacuum.

    ``markov`` propagates the long-time equations in closed form (``gamma``
    overrides the computed decay rate); ``finite-time`` integrates the
    element equations with RK4.
    """
    if form not in FORMS:
        raise InvalidArgument(f"unknown form {form!r}; expected one of {FORMS}")
    if not h > 0 or int(n) != n or n < 1:
        raise InvalidArgument("need h > 0 and a positive number of steps")
    times = h * np.arange(n + 1)
    rates = _Rates(a, c1, c2, grid)
    if form == "markov":
        g = decay_rate(a, c1, c2, grid).gamma_total if gamma is None else float(gamma)
        r11, r22, r12 = markov_solution(g, times, rates.drive, a.omega0)
        drift = float(np.max(np.abs(r11 + r22 - 1.0)))
        return MasterEquationResult(times, r11, r22, r12, form, drift, 0.0,
                                    _min_eig(r11, r22, r12), 0.0, g)

    nu = max(a.omega0, abs(grid.cutoff - a.omega0))
    if c2 is not None and not c2.is_zero():
        nu = max(nu, abs(2 * grid.cutoff - a.omega0))
    if h > 0.1 * 2 * math.pi / nu:
        raise ResolutionError(f"step {h:g} too large for frequencies up to {nu:g}; need h <= {0.2 * math.pi / nu:.4g}")

    r11 = np.empty(n + 1)
    r22 = np.empty(n + 1)
    r12 = np.empty(n + 1, dtype=complex)
    r11[0], r22[0], r12[0] = 0.0, 1.0, 0.0
    worst_cancel = 0.0

    def f(t, y):
        nonlocal worst_cancel
        d11, d22, d12 = rates.rhs(t, *y)
        scale = max(abs(d11), abs(d22))
        if scale:
            worst_cancel = max(worst_cancel, abs(d11 + d22) / scale)
        return np.array([d11, d22, d12], dtype=complex)

    y = np.array([0.0, 1.0, 0.0], dtype=complex)
    for k in range(n):
        t = times[k]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        y[0] = y[0].real
        y[1] = y[1].real
        r11[k + 1], r22[k + 1], r12[k + 1] = y[0].real, y[1].real, y[2]

    drift = float(np.max(np.abs(r11 + r22 - 1.0)))
    beta = np.array([rates.beta(t) for t in times])
    transient = float(np.trapezoid(beta * (r22 - r11), times)) if n else 0.0
    return MasterEquationResult(
        times, r11, r22, r12, form, drift, worst_cancel, _min_eig(r11, r22, r12), transient,
        decay_rate(a, c1, c2, grid).gamma_total,
    )


def _min_eig(r11, r22, r12):
    tr = r11 + r22
    disc = np.sqrt(((r11 - r22) / 2) ** 2 + np.abs(r12) ** 2)
    return float(np.min(tr / 2 - disc))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    residual: float


def fit_decay_rate(times, rho22, window) -> DecayFit:
    """Least-squares slope of -ln(rho22) over ``window = (t_a, t_b)``."""
    t = np.asarray(times, dtype=float)
    p = np.asarray(rho22, dtype=float)
    ta, tb = window
    sel = (t >= ta) & (t <= tb)
    if sel.sum() < 2:
        raise InvalidArgument("fit window must contain at least two samples")
    if np.any(p[sel] <= 0):
        raise InvalidArgument("rho22 must be positive on the fit window")
    y = -np.log(p[sel])
    x = t[sel]
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return DecayFit(float(coef[0]), float(coef[1]), resid)

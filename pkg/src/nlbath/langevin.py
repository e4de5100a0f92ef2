"""Microscopic and macroscopic (memory-kernel) dynamics of the coupled particle.

The microscopic route integrates the particle together with a discretized
oscillator bath.  The macroscopic route integrates the particle alone, with
the bath eliminated in favour of velocity-memory convolutions against the
susceptibility kernels plus a noise force.  With zero bath initial data the
two must agree once the frequency grid is fine enough.

Velocity history before t = 0 is taken to be zero.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ResolutionError
from .model import Coupling, FrequencyGrid, build_grid
from .susceptibility import (
    SusceptibilityKernel1,
    SusceptibilityKernel2,
    chi1_kernel,
    chi2_kernel,
    contraction1,
)

POTENTIALS = ("free", "harmonic", "tabulated-force")
SAMPLERS = ("zero", "classical-thermal")
INTEGRATORS = ("rk4", "verlet")


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Particle of mass ``mass`` in an isotropic harmonic well, a free space,
    or a separable tabulated force field ``force_table = (x, F)`` with
    ``F[:, i]`` the force along axis ``i`` as a function of ``q_i``."""

    mass: float = 1.0
    potential: str = "free"
    omega: float = 0.0
    q0: tuple = (0.0, 0.0, 0.0)
    v0: tuple = (0.0, 0.0, 0.0)
    force_table: tuple | None = None

    def __post_init__(self):
        if not self.mass > 0:
            raise InvalidArgument("mass must be positive")
        if self.potential not in POTENTIALS:
            raise InvalidArgument(f"unknown potential {self.potential!r}")
        if self.potential == "harmonic" and not self.omega >= 0:
            raise InvalidArgument("harmonic frequency must be >= 0")
        if self.potential == "tabulated-force":
            if self.force_table is None:
                raise InvalidArgument("tabulated-force potential needs force_table")
            x, f = (np.asarray(a, dtype=float) for a in self.force_table)
            if x.ndim != 1 or f.shape != (x.size, 3) or np.any(np.diff(x) <= 0):
                raise InvalidArgument("force_table must be (x[M], F[M, 3]) with increasing x")
            object.__setattr__(self, "force_table", (x, f))
        for name in ("q0", "v0"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 3:
                raise InvalidArgument(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)

    def force(self, q):
        """-grad V at ``q``."""
        if self.potential == "free":
            return np.zeros(3)
        if self.potential == "harmonic":
            return -self.mass * self.omega**2 * q
        x, f = self.force_table
        return np.array([np.interp(q[i], x, f[:, i]) for i in range(3)])

    def potential_energy(self, q):
        if self.potential == "free":
            return 0.0
        if self.potential == "harmonic":
            return 0.5 * self.mass * self.omega**2 * float(q @ q)
        return None


@dataclass(frozen=True, eq=False)
class BathEnsemble:
    """Initial displacements ``X`` and velocities ``Q`` of every bath mode."""

    grid: FrequencyGrid
    X: np.ndarray
    Q: np.ndarray
    sampler: str = "zero"
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        n = len(self.grid)
        for name in ("X", "Q"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (n, 3):
                raise InvalidArgument(f"bath {name} must have shape ({n}, 3)")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def n_modes(self):
        return 3 * len(self.grid)

    def is_quiet(self):
        return not (np.any(self.X) or np.any(self.Q))


def make_bath(grid: FrequencyGrid, sampler="zero", temperature=0.0, seed=0) -> BathEnsemble:
    """Bath initial data.

    ``classical-thermal`` draws each mode independently with mean energy
    ``temperature`` (in units with k_B = 1).  Mode ``a`` carries mass ``w_a``
    (its quadrature weight) in the discretized bath, hence
    ``X ~ N(0, T / (w w^2))`` and ``Q ~ N(0, T / w)``.
    """
    n = len(grid)
    if sampler == "zero":
        z = np.zeros((n, 3))
        return BathEnsemble(grid, z, z, "zero", 0.0, seed)
    if sampler != "classical-thermal":
        raise InvalidArgument(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    if not temperature >= 0:
        raise InvalidArgument("temperature must be >= 0")
    rng = np.random.default_rng(seed)
    w, om = grid.weights[:, None], grid.points[:, None]
    X = rng.standard_normal((n, 3)) * np.sqrt(temperature / (w * om**2))
    Q = rng.standard_normal((n, 3)) * np.sqrt(temperature / w)
    return BathEnsemble(grid, X, Q, sampler, float(temperature), seed)


def thermal_noise_covariance(c1: Coupling, grid: FrequencyGrid, tau, temperature):
    """Classical-thermal <R_N(t + tau) R_N(t)^T> = T int dw cos(w tau) f f^T / w^2."""
    k = contraction1(c1, grid).reshape(len(grid), 9)
    lags = np.atleast_1d(np.asarray(tau, dtype=float))
    wts = temperature * grid.weights / grid.points**2
    out = ((np.cos(np.outer(lags, grid.points)) * wts) @ k).reshape(-1, 3, 3)
    return out[0] if np.ndim(tau) == 0 else out


# ---------------------------------------------------------------------------
# noise


class NoiseRealization:
    """Noise force built from the free bath motion, evaluated analytically.

    The quadratic term keeps only the product of two free-motion amplitudes.
    """

    def __init__(self, bath: BathEnsemble, c1: Coupling, c2: Coupling | None = None):
        g = bath.grid
        self.bath = bath
        self._w = g.points
        self._fw = g.weights[:, None, None] * c1.on_grid(g)
        self._f2w = None
        if c2 is not None and not c2.is_zero():
            ww = np.outer(g.weights, g.weights)
            self._f2w = ww[:, :, None, None, None] * c2.on_grid(g)

    def _modes(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ph = np.outer(t, self._w)[:, :, None]
        c, s = np.cos(ph), np.sin(ph)
        X, Q, w = self.bath.X, self.bath.Q, self._w[:, None]
        x = X * c + Q / w * s
        xd = -X * w * s + Q * c
        return x, xd

    def value(self, t):
        x, _ = self._modes(t)
        r = np.einsum("aij,taj->ti", self._fw, x)
        if self._f2w is not None:
            r = r + np.einsum("abijk,taj,tbk->ti", self._f2w, x, x, optimize=True)
        return r

    def rate(self, t):
        x, xd = self._modes(t)
        r = np.einsum("aij,taj->ti", self._fw, xd)
        if self._f2w is not None:
            r = r + np.einsum("abijk,taj,tbk->ti", self._f2w, xd, x, optimize=True)
            r = r + np.einsum("abijk,taj,tbk->ti", self._f2w, x, xd, optimize=True)
        return r


@dataclass(frozen=True, eq=False)
class NoiseSeries:
    times: np.ndarray
    value: np.ndarray
    rate: np.ndarray


def sample_noise(bath: BathEnsemble, c1: Coupling, c2: Coupling | None, timegrid) -> NoiseSeries:
    """Noise force R_N and its exact time derivative on ``timegrid``."""
    t = np.asarray(timegrid, dtype=float)
    if bath.is_quiet():
        z = np.zeros((t.size, 3))
        return NoiseSeries(t, z, z.copy())
    real = NoiseRealization(bath, c1, c2)
    return NoiseSeries(t, real.value(t), real.rate(t))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    v: np.ndarray
    R: np.ndarray
    metadata: dict = field(default_factory=dict)
    energy: np.ndarray | None = None

    @property
    def h(self):
        return float(self.times[1] - self.times[0])

    def rows(self):
        return np.column_stack([self.times, self.q, self.v, self.R])


def coupling_hash(*items, grid: FrequencyGrid | None = None) -> str:
    """Short digest of couplings sampled on ``grid`` (or of kernel arrays)."""
    h = hashlib.sha256()
    for it in items:
        if it is None:
            h.update(b"none")
        elif isinstance(it, Coupling):
            h.update(np.ascontiguousarray(it.on_grid(grid)).tobytes())
        elif isinstance(it, (SusceptibilityKernel1, SusceptibilityKernel2)):
            h.update(np.ascontiguousarray(it.rate).tobytes())
        else:
            h.update(np.ascontiguousarray(it).tobytes())
    return h.hexdigest()[:16]


def _check_steps(h, n):
    if not h > 0:
        raise InvalidArgument("step h must be positive")
    if int(n) != n or n < 1:
        raise InvalidArgument("number of steps must be a positive integer")


class _MicroSystem:
    """Right-hand side of the particle + discretized bath equations."""

    def __init__(self, sys: SystemConfig, grid: FrequencyGrid, c1: Coupling, c2: Coupling | None, feedback=True):
        self.sys = sys
        self.feedback = feedback
        self.n = len(grid)
        self.w = grid.weights
        self.om2 = grid.points**2
        f1 = c1.on_grid(grid)
        self.f1 = f1
        self.f1w = self.w[:, None, None] * f1
        self.nonlinear = c2 is not None and not c2.is_zero()
        if self.nonlinear:
            f2 = c2.on_grid(grid)
            ww = np.outer(self.w, self.w)
            self.f2w = ww[:, :, None, None, None] * f2
            # drive on mode (a, i): sum_b w_b qdot_j [f2_jik(a, b) + f2_jki(b, a)] X_bk
            s2 = f2 + np.transpose(f2, (1, 0, 2, 4, 3))  # [a, b, j, i, k]
            self.s2w = s2 * self.w[None, :, None, None, None]

    def reaction(self, X):
        r = np.einsum("aij,aj->i", self.f1w, X)
        if self.nonlinear:
            r = r + np.einsum("abijk,aj,bk->i", self.f2w, X, X, optimize=True)
        return r

    def reaction_rate(self, X, Y):
        r = np.einsum("aij,aj->i", self.f1w, Y)
        if self.nonlinear:
            r = r + np.einsum("abijk,aj,bk->i", self.f2w, Y, X, optimize=True)
            r = r + np.einsum("abijk,aj,bk->i", self.f2w, X, Y, optimize=True)
        return r

    def rhs(self, q, v, X, Y):
        acc = (self.sys.force(q) - self.reaction_rate(X, Y)) / self.sys.mass
        drive = np.einsum("j,aji->ai", v, self.f1)
        if self.nonlinear and self.feedback:
            drive = drive + np.einsum("abjik,j,bk->ai", self.s2w, v, X, optimize=True)
        Yd = -self.om2[:, None] * X + drive
        return v, acc, Y, Yd

    def energy(self, q, v, X, Y):
        pe = self.sys.potential_energy(q)
        if pe is None:
            return math.nan
        bath = 0.5 * float(np.sum(self.w[:, None] * (Y**2 + self.om2[:, None] * X**2)))
        return 0.5 * self.sys.mass * float(v @ v) + pe + bath


def integrate_microscopic(
    sys: SystemConfig,
    bath: BathEnsemble,
    c1: Coupling,
    c2: Coupling | None,
    h: float,
    n: int,
    integrator: str = "rk4",
    bath_feedback: bool = True,
) -> Trajectory:
    """Fixed-step integration of the particle coupled to every bath mode.

    ``bath_feedback=False`` drops the f2 drive from the oscillator equations.
    The bath then moves exactly as in the first-order solution behind the
    macroscopic kernels, which makes it a clean oracle for chi2 (energy is no
    longer conserved in that mode).
    """
    _check_steps(h, n)
    if integrator not in INTEGRATORS:
        raise InvalidArgument(f"unknown integrator {integrator!r}")
    grid = bath.grid
    coupled = not c1.is_zero() or (c2 is not None and not c2.is_zero())
    if coupled and not h < 0.1 * 2 * math.pi / grid.cutoff:
        raise ResolutionError(
            f"step {h:g} does not resolve the bath cutoff {grid.cutoff:g}; need h < {0.2 * math.pi / grid.cutoff:.4g}"
        )
    if integrator == "verlet" and coupled:
        raise InvalidArgument("the symplectic integrator only supports the uncoupled system")
    meta = {
        "integrator": f"microscopic-{integrator}",
        "seed": bath.seed,
        "couplings": coupling_hash(c1, c2, grid=grid),
        "n_modes": bath.n_modes,
        "bath_feedback": bool(bath_feedback),
    }
    times = h * np.arange(n + 1)
    q = np.empty((n + 1, 3))
    v = np.empty((n + 1, 3))
    R = np.zeros((n + 1, 3))
    energy = np.empty(n + 1)
    q[0], v[0] = sys.q0, sys.v0

    if not coupled:
        ms = _MicroSystem(sys, grid, c1, None)
        X0 = np.zeros((len(grid), 3))
        for k in range(n + 1):
            if k:
                q[k], v[k] = _particle_step(sys, q[k - 1], v[k - 1], h, integrator)
            energy[k] = ms.energy(q[k], v[k], X0, X0)
        return Trajectory(times, q, v, R, meta, energy)

    ms = _MicroSystem(sys, grid, c1, c2, feedback=bath_feedback)
    X = np.array(bath.X)
    Y = np.array(bath.Q)
    R[0] = ms.reaction(X)
    energy[0] = ms.energy(q[0], v[0], X, Y)
    qk, vk = q[0].copy(), v[0].copy()
    for k in range(1, n + 1):
        a1 = ms.rhs(qk, vk, X, Y)
        a2 = ms.rhs(qk + 0.5 * h * a1[0], vk + 0.5 * h * a1[1], X + 0.5 * h * a1[2], Y + 0.5 * h * a1[3])
        a3 = ms.rhs(qk + 0.5 * h * a2[0], vk + 0.5 * h * a2[1], X + 0.5 * h * a2[2], Y + 0.5 * h * a2[3])
        a4 = ms.rhs(qk + h * a3[0], vk + h * a3[1], X + h * a3[2], Y + h * a3[3])
        qk = qk + h / 6 * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0])
        vk = vk + h / 6 * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1])
        X = X + h / 6 * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2])
        Y = Y + h / 6 * (a1[3] + 2 * a2[3] + 2 * a3[3] + a4[3])
        q[k], v[k] = qk, vk
        R[k] = ms.reaction(X)
        energy[k] = ms.energy(qk, vk, X, Y)
    return Trajectory(times, q, v, R, meta, energy)


def _particle_step(sys, q, v, h, integrator):
    m = sys.mass
    if integrator == "verlet":
        a = sys.force(q) / m
        qn = q + h * v + 0.5 * h * h * a
        vn = v + 0.5 * h * (a + sys.force(qn) / m)
        return qn, vn
    f = lambda qq, vv: (vv, sys.force(qq) / m)  # noqa: E731
    k1 = f(q, v)
    k2 = f(q + 0.5 * h * k1[0], v + 0.5 * h * k1[1])
    k3 = f(q + 0.5 * h * k2[0], v + 0.5 * h * k2[1])
    k4 = f(q + h * k3[0], v + h * k3[1])
    return (
        q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
    )


# ---------------------------------------------------------------------------
# macroscopic integrator


def _kernel_stride(kernel_dt, h):
    r = h / kernel_dt
    ri = int(round(r))
    if ri < 2 or ri % 2 or abs(r - ri) > 1e-9 * ri:
        raise InvalidArgument(
            f"kernel step {kernel_dt:g} must divide the half step {h / 2:g} (h / dt an even integer)"
        )
    return ri


def _window(kernel_T, horizon, run_T, what):
    """Number of usable kernel time units, or raise when the kernel is too short."""
    if horizon <= kernel_T:
        return horizon
    if kernel_T < run_T - 1e-12:
        raise InvalidArgument(
            f"{what} kernel spans T={kernel_T:g} but has not decayed; the run needs T={run_T:g}"
        )
    return kernel_T


def _horizon2(k2: SusceptibilityKernel2, rel):
    mag = np.max(np.abs(k2.rate), axis=(2, 3, 4))
    mag = np.maximum(mag.max(axis=0), mag.max(axis=1))
    peak = mag.max()
    if peak == 0:
        return 0.0
    above = np.nonzero(mag >= rel * peak)[0]
    last = int(above[-1])
    return math.inf if last == mag.size - 1 else float(k2.times[last + 1])


def integrate_macroscopic(
    sys: SystemConfig,
    k1: SusceptibilityKernel1,
    k2: SusceptibilityKernel2 | None,
    noise,
    h: float,
    n: int,
    memory_rel: float = 1e-8,
) -> Trajectory:
    """RK4 for the memory-kernel equation of motion.

    m dv/dt = F(q) - int d/dt chi1(t - s) v(s) ds
                   - int int (d/dt1 + d/dt2) chi2(t - s1, t - s2) v(s1) v(s2) ds1 ds2
                   - dR_N/dt

    Memory integrals use the trapezoid rule over the stored history plus the
    current stage.  Kernels must be sampled on a step that divides ``h / 2``.
    ``noise`` is ``None``, a :class:`NoiseRealization` or a
    :class:`NoiseSeries` sampled every ``h / 2`` from t = 0.
    """
    _check_steps(h, n)
    run_T = n * h
    r1 = _kernel_stride(k1.dt, h)
    hz1 = _window(k1.T, k1.memory_horizon(memory_rel), run_T, "linear")
    lin = not k1.is_zero()
    # lag index of D1 for history node k at stage offset c (in half steps): (n-k)*r1 + c*r1/2
    d1 = k1.rate
    nl = k2 is not None and np.any(k2.rate)
    if nl:
        r2 = _kernel_stride(k2.dt, h)
        hz2 = _window(k2.T, _horizon2(k2, memory_rel), run_T, "nonlinear")
        d2 = k2.rate
        chi2v = k2.values
    noise_rate = _noise_rates(noise, h, n)

    m = sys.mass
    times = h * np.arange(n + 1)
    q = np.empty((n + 1, 3))
    v = np.empty((n + 1, 3))
    R = np.zeros((n + 1, 3))
    q[0], v[0] = sys.q0, sys.v0

    def hist_lin(k, c2h):
        """Trapezoid over [0, t_k] of D1(t_k + c h/2 - s) v(s); c2h in {0,1,2}."""
        if not lin or k == 0:
            return np.zeros(3)
        off = c2h * r1 // 2
        lags = off + r1 * np.arange(k + 1)  # node k, k-1, ..., 0
        ok = h * (lags / r1) <= hz1 + 1e-12
        ok &= lags < d1.shape[0]
        wts = np.full(k + 1, h)
        wts[0] = wts[-1] = h / 2
        wts = wts * ok
        lags = np.where(ok, lags, 0)
        return np.einsum("mij,mj,m->i", d1[lags], v[k::-1], wts)

    def nodes2(k, c2h, r):
        off = c2h * r // 2
        lags = off + r * np.arange(k + 1)
        wts = np.full(k + 1, h)
        if k:
            wts[0] = wts[-1] = h / 2
        else:
            wts[0] = 0.0
        stage_w = 0.0
        if c2h:
            wts[0] += c2h * h / 4
            stage_w = c2h * h / 4
        ok = (h * lags / r <= hz2 + 1e-12) & (lags < d2.shape[0])
        return np.where(ok, lags, 0), wts * ok, stage_w

    def nonlinear_parts(k, c2h):
        """Pieces of the double memory integral split by the stage node."""
        lags, wts, ws = nodes2(k, c2h, r2)
        vh = v[k::-1] * wts[:, None]
        blk = d2[np.ix_(lags, lags)]  # (P, P, 3, 3, 3)
        A = np.einsum("pqijk,pj,qk->i", blk, vh, vh, optimize=True)
        if not c2h:
            return A, None, None, None
        col = d2[lags, 0]  # D2(lag_p, 0)
        row = d2[0, lags]  # D2(0, lag_q)
        B = ws * (np.einsum("pijk,pj->ik", col, vh) + np.einsum("qijk,qk->ij", row, vh))
        C = ws * ws * d2[0, 0]
        return A, B, C, ws

    d1_0 = d1[0]
    for k in range(n):
        qk, vk = q[k], v[k]
        parts = {}
        for c2h in (0, 1, 2):
            base = hist_lin(k, c2h)
            if lin and c2h:
                # in-step trapezoid: (c h / 2) [D1(c h) v_k + D1(0) v_stage]; v_k part here
                base = base + (c2h * h / 4) * d1[c2h * r1 // 2] @ vk
            parts[c2h] = (base, nonlinear_parts(k, c2h) if nl else None)

        def accel(c2h, qs, vs):
            base, npart = parts[c2h]
            mem = base
            if lin and c2h:
                mem = mem + (c2h * h / 4) * (d1_0 @ vs)
            if npart is not None:
                A, B, C, _ = npart
                mem = mem + A
                if B is not None:
                    mem = mem + B @ vs + np.einsum("ijk,j,k->i", C, vs, vs)
            f = sys.force(qs) - mem
            if noise_rate is not None:
                f = f - noise_rate[2 * k + c2h]
            return f / m

        a1 = accel(0, qk, vk)
        q2, v2 = qk + 0.5 * h * vk, vk + 0.5 * h * a1
        a2 = accel(1, q2, v2)
        q3, v3 = qk + 0.5 * h * v2, vk + 0.5 * h * a2
        a3 = accel(1, q3, v3)
        q4, v4 = qk + h * v3, vk + h * a3
        a4 = accel(2, q4, v4)
        q[k + 1] = qk + h / 6 * (vk + 2 * v2 + 2 * v3 + v4)
        v[k + 1] = vk + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)

    R[:] = _reaction_record(k1, chi2v if nl else None, v, h, r1, r2 if nl else None, noise, n)
    meta = {
        "integrator": "macroscopic-rk4",
        "seed": getattr(getattr(noise, "bath", None), "seed", None),
        "couplings": coupling_hash(k1, k2),
        "memory_horizon": None if math.isinf(hz1) else hz1,
    }
    return Trajectory(times, q, v, R, meta)


def _noise_rates(noise, h, n):
    if noise is None:
        return None
    half = 0.5 * h * np.arange(2 * n + 1)
    if isinstance(noise, NoiseRealization):
        if noise.bath.is_quiet():
            return None
        return noise.rate(half)
    if isinstance(noise, NoiseSeries):
        t = np.asarray(noise.times)
        if t.size < 2 * n + 1 or not np.allclose(t[: 2 * n + 1], half, rtol=0, atol=1e-9 * max(h, 1.0)):
            raise InvalidArgument("noise series must be sampled every h/2 from t = 0 over the whole run")
        return np.asarray(noise.rate)[: 2 * n + 1]
    raise InvalidArgument("noise must be None, a NoiseRealization or a NoiseSeries")


def _reaction_record(k1, chi2v, v, h, r1, r2, noise, n):
    """R(t_k) from the kernels (trapezoid) plus the noise value, at step points."""
    R = np.zeros((n + 1, 3))
    c1 = k1.values
    for k in range(1, n + 1):
        lags = r1 * np.arange(k + 1)
        ok = lags < c1.shape[0]
        wts = np.full(k + 1, h)
        wts[0] = wts[-1] = h / 2
        R[k] = np.einsum("mij,mj,m->i", c1[np.where(ok, lags, 0)], v[k::-1], wts * ok)
        if chi2v is not None:
            lg = r2 * np.arange(k + 1)
            ok2 = lg < chi2v.shape[0]
            lg = np.where(ok2, lg, 0)
            vh = v[k::-1] * (wts * ok2)[:, None]
            R[k] += np.einsum("pqijk,pj,qk->i", chi2v[np.ix_(lg, lg)], vh, vh, optimize=True)
    if noise is not None:
        t = h * np.arange(n + 1)
        if isinstance(noise, NoiseRealization):
            R += noise.value(t)
        else:
            R += np.asarray(noise.value)[: 2 * n + 1 : 2]
    return R


# ---------------------------------------------------------------------------
# micro / macro cross-validation


@dataclass
class ConvergenceReport:
    levels: list
    amplitude: float
    monotone: bool
    reference: dict

    def as_dict(self):
        return {
            "levels": self.levels,
            "amplitude": self.amplitude,
            "monotone_decreasing": self.monotone,
            "reference": self.reference,
        }


def compare_micro_macro(
    sys: SystemConfig,
    bath: BathEnsemble,
    c1: Coupling,
    c2: Coupling | None,
    h: float,
    n: int,
    levels=(64, 128, 256),
    reference_points: int = 1024,
    reference_rule: str = "gauss-legendre",
    bath_feedback: bool = True,
) -> ConvergenceReport:
    """Max |q_micro - q_macro| for microscopic runs on successively finer grids.

    The macroscopic side uses kernels from a fine reference grid on the same
    band (0, cutoff); the microscopic side uses the rule of ``bath.grid``.
    """
    if not bath.is_quiet():
        raise InvalidArgument("micro/macro comparison needs zero bath initial data")
    _check_steps(h, n)
    cutoff = bath.grid.cutoff
    ref = build_grid(reference_rule, reference_points, cutoff)
    T = n * h
    k1 = chi1_kernel(c1, ref, h / 2, T)
    k2 = chi2_kernel(c2, c1, ref, h / 2, T) if c2 is not None and not c2.is_zero() else None
    macro = integrate_macroscopic(sys, k1, k2, None, h, n)
    amp = float(np.max(np.abs(macro.q)))
    rows = []
    for npts in levels:
        g = build_grid(bath.grid.rule, npts, cutoff)
        micro = integrate_microscopic(sys, make_bath(g), c1, c2, h, n, bath_feedback=bath_feedback)
        err = float(np.max(np.abs(micro.q - macro.q)))
        rows.append({"n_modes": int(npts), "max_error": err, "relative_error": err / amp if amp else err})
    errs = [r["max_error"] for r in rows]
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    return ConvergenceReport(rows, amp, mono, {"rule": reference_rule, "n_points": reference_points})

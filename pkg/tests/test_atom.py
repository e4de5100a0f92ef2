import math

import numpy as np
import pytest

from nlbath.atom import (
    AtomParams,
    decay_rate,
    fit_decay_rate,
    gamma_linear,
    gamma_nonlinear,
    gamma_report,
    integrate_master_equation,
    markov_solution,
)
from nlbath.errors import DivergentIntegrand, InvalidArgument, ResolutionError
from nlbath.model import (
    Envelope,
    FunctionCoupling,
    OrthogonalTransform,
    TabulatedCoupling,
    build_grid,
    coupling1,
    coupling2,
    random_orthogonal,
    random_structure,
    zero_coupling,
)

D = (1.0, 0.5j, 0.2)
ATOM = AtomParams(1.0, D)
C1 = coupling1(Envelope("gaussian", 0.1, 1.0, 0.5), np.diag([1.0, 1.3, 0.7]))
C2 = coupling2(Envelope("gaussian", 0.16, 0.5, 0.3), random_structure(2, 3))
GRID = build_grid("gl", 600, 4.05)


def test_params_validation():
    with pytest.raises(InvalidArgument):
        AtomParams(0.0, D)
    with pytest.raises(InvalidArgument):
        AtomParams(1.0, (1.0, 0.0))
    with pytest.raises(InvalidArgument):
        AtomParams(1.0, D, mass=-1.0)


# decay rates


def test_gamma_linear_oracle(frozen):
    assert abs(gamma_linear(ATOM, C1) / frozen["gamma_linear"] - 1) < 1e-12


def test_gamma_nonlinear_oracle(frozen):
    assert abs(gamma_nonlinear(ATOM, C2, GRID) / frozen["gamma_nonlinear"] - 1) < 1e-10


def test_gamma_linear_isotropic_closed_form():
    env = Envelope("lorentzian", 0.3, 1.0, 0.4)
    a = AtomParams(1.0, (0.6, -0.8, 0.3), mass=1.7, hbar=0.9)
    g = float(env(1.0))
    expected = math.pi * 1.7**2 * 1.0 * g**2 * (0.36 + 0.64 + 0.09) / 0.9
    assert abs(gamma_linear(a, coupling1(env)) / expected - 1) < 1e-13


def test_zero_couplings_give_zero_rates():
    assert gamma_linear(ATOM, zero_coupling(1)) == 0.0
    assert gamma_nonlinear(ATOM, zero_coupling(2), GRID) == 0.0
    assert gamma_nonlinear(ATOM, None, GRID) == 0.0


def test_narrow_peak_nonlinear_limit():
    env = Envelope("gaussian", 1.0, 0.5, 0.01)
    c2 = coupling2(env, np.ones((3, 3, 3)))
    grid = build_grid("gl", 1000, 1.0)
    # weight of the contraction along omega1 + omega2 = omega0
    w = np.linspace(0.44, 0.56, 24001)
    u = np.einsum("...ijk,i->...jk", c2.evaluate(w, 1.0 - w), ATOM.d)
    weight = np.trapezoid(np.sum(np.abs(u) ** 2, axis=(-2, -1)), w)
    expected = math.pi * weight * 4.0
    assert abs(gamma_nonlinear(ATOM, c2, grid) / expected - 1) < 1e-3


def test_tabulated_coupling_out_of_range():
    f = np.linspace(0.0, 0.8, 9)
    tab = TabulatedCoupling(f, np.ones((9, 3, 3)))
    with pytest.raises(InvalidArgument):
        gamma_linear(ATOM, tab)
    assert gamma_linear(AtomParams(0.5, D), tab) > 0


def test_divergent_endpoint_detected():
    # a coupling that stays finite at zero frequency makes the 1/omega endpoint blow up
    def f(w1, w2):
        w1, w2 = np.broadcast_arrays(np.asarray(w1, float), np.asarray(w2, float))
        return np.ones(w1.shape + (3, 3, 3))

    with pytest.raises(DivergentIntegrand):
        gamma_nonlinear(ATOM, FunctionCoupling(2, f), GRID)


def test_report_additive_and_gauge_invariant():
    rep = gamma_report(ATOM, C1, C2, GRID)
    b = rep.breakdown
    assert b.gamma_total == b.gamma_linear + b.gamma_nonlinear
    assert rep.invariance_max_dev < 1e-10
    one = gamma_report(ATOM, C1, None, GRID, transforms=[OrthogonalTransform(np.eye(3))])
    assert one.invariance_max_dev == 0.0 and one.breakdown.gamma_nonlinear == 0.0


def test_nonlinear_rate_gauge_invariant_per_seed():
    from nlbath.model import apply_orthogonal

    base = gamma_nonlinear(ATOM, C2, GRID)
    for s in range(5):
        other = gamma_nonlinear(ATOM, apply_orthogonal(C2, random_orthogonal(s)), GRID)
        assert abs(other - base) < 1e-10 * base


# master equation


def test_markov_closed_form():
    a = AtomParams(1.0, D)
    res = integrate_master_equation(a, C1, None, GRID, 0.5, 20, form="markov", gamma=0.1)
    assert abs(res.rho22[-1] - math.exp(-1.0)) < 1e-15
    assert res.max_trace_drift < 1e-15


def test_uncoupled_atom_stays_excited():
    res = integrate_master_equation(ATOM, zero_coupling(1), zero_coupling(2), GRID, 0.05, 200)
    assert np.all(res.rho22 == 1.0) and np.all(res.rho11 == 0.0) and np.all(res.rho12 == 0.0)


def test_step_resolution_error():
    with pytest.raises(ResolutionError):
        integrate_master_equation(ATOM, C1, None, GRID, 0.5, 10)
    with pytest.raises(InvalidArgument):
        integrate_master_equation(ATOM, C1, None, GRID, 0.05, 10, form="secular")


def test_finite_time_linear_matches_gamma():
    res = integrate_master_equation(ATOM, C1, None, GRID, 0.05, 600)
    fit = fit_decay_rate(res.times, res.rho22, (5.0, 30.0))
    g = gamma_linear(ATOM, C1)
    assert abs(fit.rate - g) / g < 0.02
    assert res.max_trace_drift < 1e-8 and res.max_cancellation < 1e-14


def test_density_matrix_hermitian_unit_trace():
    res = integrate_master_equation(ATOM, C1, C2, GRID, 0.05, 100)
    rho = res.density_matrices()
    assert np.max(np.abs(rho - np.conj(np.swapaxes(rho, 1, 2)))) < 1e-12
    assert np.max(np.abs(np.trace(rho, axis1=1, axis2=2) - 1)) < 1e-8
    assert res.rows().shape == (101, 5)


def test_markov_coherence_drive_follows_solution():
    r11, r22, r12 = markov_solution(0.2, [0.0, 1.0], drive=0.1 + 0.05j)
    assert r12[0] == 0 and r11[0] == 0 and r22[0] == 1
    assert abs(r12[1]) > 0


# fitting


def test_fit_exact_exponential():
    t = np.linspace(0, 40, 801)
    assert abs(fit_decay_rate(t, np.exp(-0.3 * t), (5, 30)).rate - 0.3) < 1e-10


def test_fit_constant_series():
    t = np.linspace(0, 40, 801)
    assert fit_decay_rate(t, np.full_like(t, 0.7), (5, 30)).rate == pytest.approx(0.0, abs=1e-14)


def test_fit_rejects_bad_input():
    t = np.linspace(0, 40, 801)
    p = np.exp(-0.3 * t)
    p[300] = 0.0
    with pytest.raises(InvalidArgument):
        fit_decay_rate(t, p, (5, 30))
    with pytest.raises(InvalidArgument):
        fit_decay_rate(t, np.exp(-t), (5.01, 5.02))


def test_decay_rate_breakdown_fields():
    b = decay_rate(ATOM, C1, C2, GRID)
    assert b.gamma_linear > 0 and b.gamma_nonlinear > 0
    assert b.gamma_total == b.gamma_linear + b.gamma_nonlinear

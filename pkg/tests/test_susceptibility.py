import math
import warnings

import numpy as np
import pytest

from conftest import ANISO, GAU, LOR, family_set
from nlbath.errors import InvalidArgument, UnsupportedOrder
from nlbath.model import (
    Envelope,
    FrequencyGrid,
    FunctionCoupling,
    apply_orthogonal,
    build_grid,
    coupling1,
    coupling2,
    random_orthogonal,
    random_structure,
    zero_coupling,
)
from nlbath.susceptibility import (
    ResolutionWarning,
    check_symmetries,
    chi1,
    chi1_kernel,
    chi2,
    chi2_kernel,
    chi2_table,
    chi3_kernel,
    chi_n,
    contraction1,
    noise_correlation,
)

DIAG = np.diag([1.0, 1.2, 0.8])


def peak_grid(centers, width, n=200, span=9.0):
    """Gauss-Legendre clusters around narrow peaks, used for the narrow-peak limits."""
    x, w = np.polynomial.legendre.leggauss(n)
    pts, wts = [], []
    for c in centers:
        pts.append(c + span * width * x)
        wts.append(span * width * w)
    order = np.argsort(np.concatenate(pts))
    return FrequencyGrid(np.concatenate(pts)[order], np.concatenate(wts)[order], max(centers) + span * width)


# frozen quadrature oracles


def test_chi1_matches_oracle(frozen):
    c = coupling1(LOR, ANISO)
    g = build_grid("gl", 400, 40.0)
    for t, ref in frozen["chi1_lorentzian"].items():
        got = chi1(c, g, float(t))
        assert np.max(np.abs(got - np.array(ref))) < 1e-10 * np.max(np.abs(ref))


def test_chi1_rate_matches_oracle(frozen):
    c = coupling1(LOR, ANISO)
    g = build_grid("gl", 400, 40.0)
    k = chi1_kernel(c, g, 0.1, 1.0)
    for t, ref in frozen["chi1_rate_lorentzian"].items():
        idx = int(round(float(t) / 0.1))
        assert np.max(np.abs(k.rate[idx] - np.array(ref))) < 1e-10 * np.max(np.abs(ref))


def test_chi2_matches_oracle(frozen):
    g = build_grid("gl", 96, GAU.band_limit())
    c1 = coupling1(GAU, DIAG)
    c2 = coupling2(GAU, random_structure(2, 3))
    t1, t2 = frozen["chi2_gaussian"]["t"]
    ref = np.array(frozen["chi2_gaussian"]["value"])
    got = chi2(c2, c1, g, t1, t2)
    assert np.max(np.abs(got - ref)) < 1e-10 * np.max(np.abs(ref))


def test_noise_correlation_matches_oracle(frozen):
    g = build_grid("gl", 96, GAU.band_limit())
    o = frozen["noise_gaussian"]
    got = noise_correlation(coupling1(GAU, DIAG), g, o["tau"])
    ref = np.array(o["re"]) + 1j * np.array(o["im"])
    assert np.max(np.abs(got - ref)) < 1e-10 * np.max(np.abs(ref))


# narrow-peak limits


def test_chi1_narrow_peak_limit():
    w1, sig = 2.0, 1e-3
    env = Envelope("gaussian", 3.0, w1, sig)
    g = peak_grid([w1], sig)
    c2w = float(g.integrate(env(g.points) ** 2))
    got = chi1(coupling1(env), g, 1.0)
    ref = c2w * math.sin(w1) / w1 * np.eye(3)
    assert np.max(np.abs(got - ref)) < 1e-4 * np.max(np.abs(ref))
    k = chi1_kernel(coupling1(env), g, 0.5, 1.0)
    assert np.max(np.abs(k.rate[0] - c2w * np.eye(3))) < 1e-12 * c2w


def test_chi2_narrow_two_peak_limit():
    wa, wb, sig = 1.0, 2.5, 1e-3
    pa = Envelope("gaussian", 1.0, wa, sig)
    pb = Envelope("gaussian", 1.0, wb, sig)
    h = np.zeros((3, 3, 3))
    h[0, 1, 1] = h[1, 0, 2] = h[1, 2, 0] = 1.0

    def f2(w1, w2):
        s = 0.5 * (pa(w1) * pb(w2) + pb(w1) * pa(w2))
        return s[..., None, None, None] * h

    c2 = FunctionCoupling(2, f2)
    c1 = FunctionCoupling(1, lambda w: np.broadcast_to(np.eye(3), np.shape(w) + (3, 3)))
    g = peak_grid([wa, wb], sig)
    W = float(g.integrate(pa(g.points))) * float(g.integrate(pb(g.points)))
    t1, t2 = 0.8, 1.7
    got = chi2(c2, c1, g, t1, t2)
    ref = 0.5 * W * h * (math.sin(wa * t1) * math.sin(wb * t2) + math.sin(wb * t1) * math.sin(wa * t2)) / (wa * wb)
    assert np.max(np.abs(got - ref)) < 1e-4 * np.max(np.abs(ref))


def test_noise_narrow_peak_limit():
    w1, sig = 1.5, 1e-3
    env = Envelope("gaussian", 2.0, w1, sig)
    g = peak_grid([w1], sig)
    c2w = float(g.integrate(env(g.points) ** 2))
    for tau in (0.0, 0.4, -1.3):
        got = noise_correlation(coupling1(env), g, tau, hbar=0.7)
        ref = 0.7 * c2w / (2 * w1) * np.exp(-1j * w1 * tau) * np.eye(3)
        assert np.max(np.abs(got - ref)) < 1e-4 * np.max(np.abs(ref))


def test_noise_tau0_isotropic_real_positive():
    g = build_grid("gl", 64, GAU.band_limit())
    c = noise_correlation(coupling1(GAU), g, 0.0)
    assert np.all(c.imag == 0)
    ref = float(g.integrate(GAU(g.points) ** 2 / (2 * g.points)))
    assert np.allclose(c.real, ref * np.eye(3), rtol=1e-14, atol=0)


# causality, symmetry, structure


@pytest.mark.parametrize("t", [-1.0, -1e-12, 0.0])
def test_chi1_causal_zero(t):
    out = chi1(coupling1(LOR, ANISO), build_grid("gl", 16, 10.0), t)
    assert out.tobytes() == np.zeros((3, 3)).tobytes()


def test_chi2_causal_zero():
    g = build_grid("gl", 16, 3.0)
    c1, c2 = coupling1(GAU), coupling2(GAU, random_structure(2, 1))
    assert chi2(c2, c1, g, -0.5, 1.0).tobytes() == np.zeros((3, 3, 3)).tobytes()
    assert chi2(c2, c1, g, 1.0, -0.5).tobytes() == np.zeros((3, 3, 3)).tobytes()


def test_zero_couplings_give_zero():
    g = build_grid("gl", 16, 3.0)
    assert not np.any(chi1(zero_coupling(1), g, 1.0))
    assert not np.any(chi2(zero_coupling(2), coupling1(GAU), g, 1.0, 2.0))
    assert not np.any(noise_correlation(zero_coupling(1), g, 0.3))
    rep = check_symmetries(chi1_kernel(zero_coupling(1), g, 0.1, 1.0), chi2_kernel(zero_coupling(2), coupling1(GAU), g, 0.1, 1.0))
    assert rep.chi1 == 0 and rep.chi2 == 0 and rep.chi2_relative == 0


def test_contraction_is_exactly_symmetric():
    k = contraction1(coupling1(GAU, ANISO), build_grid("gl", 32, 3.0))
    assert np.array_equal(k, np.swapaxes(k, 1, 2))


def test_chi_n_reduces_to_lower_orders():
    g = build_grid("gl", 20, 3.0)
    c1, c2 = coupling1(GAU, ANISO), coupling2(GAU, random_structure(2, 5))
    assert np.max(np.abs(chi_n(c1, c1, g, [0.7]) - chi1(c1, g, 0.7))) <= 1e-14
    assert np.array_equal(chi_n(c2, c1, g, [0.4, 1.1]), chi2(c2, c1, g, 0.4, 1.1))


def test_chi_n_order_limits():
    g = build_grid("gl", 8, 3.0)
    c1 = coupling1(GAU)
    with pytest.raises(UnsupportedOrder):
        chi_n(c1, c1, g, [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(InvalidArgument):
        chi_n(c1, c1, g, [0.1, 0.2])


def test_chi3_permutation_symmetry_and_causality():
    for name, c1, c2, c3, g in family_set():
        k3 = chi3_kernel(c3, c1, g, np.linspace(0, 3, 5))
        rep = check_symmetries(k3=k3)
        assert rep.chi3_relative < 1e-12, name
        assert not np.any(chi_n(c3, c1, g, [0.3, -0.1, 0.2]))
        # the einsum route and the kernel agree
        assert np.allclose(chi_n(c3, c1, g, [0.75, 1.5, 2.25]), k3.values[1, 2, 3], rtol=1e-12, atol=1e-16)


def test_asymmetric_coupling_flagged():
    h = np.zeros((3, 3, 3))
    h[0, 0, 1] = 1.0
    c2 = FunctionCoupling(2, lambda a, b: (GAU(a) * GAU(b) * (1 + a))[..., None, None, None] * h)
    g = build_grid("gl", 16, GAU.band_limit())
    k2 = chi2_kernel(c2, coupling1(GAU, ANISO), g, 0.2, 2.0)
    assert check_symmetries(k2=k2).chi2_relative > 1e-3


def test_chi2_table_matches_pointwise():
    g = build_grid("gl", 24, 3.0)
    c1, c2 = coupling1(GAU, ANISO), coupling2(GAU, random_structure(2, 6))
    ts = np.array([-0.5, 0.0, 0.9, 2.0])
    tab = chi2_table(c2, c1, g, ts)
    for p, a in enumerate(ts):
        for q, b in enumerate(ts):
            assert np.allclose(tab[p, q], chi2(c2, c1, g, a, b), rtol=1e-13, atol=1e-18)
    assert tab[0].tobytes() == np.zeros_like(tab[0]).tobytes()


# kernels


def test_rate_matches_finite_differences():
    for name, c1, c2, c3, g in family_set():
        dt = 0.01
        k = chi1_kernel(c1, g, dt, 2.0)
        fd = (k.values[2:] - k.values[:-2]) / (2 * dt)
        err = np.max(np.abs(fd - k.rate[1:-1]))
        assert err < 10 * dt**2 * np.max(np.abs(k.curvature)), name


def test_chi2_rate_and_mixed_match_finite_differences():
    g = build_grid("gl", 32, GAU.band_limit())
    c1, c2 = coupling1(GAU, ANISO), coupling2(GAU, random_structure(2, 2))
    dt = 0.01
    k = chi2_kernel(c2, c1, g, dt, 1.0)
    v = k.values
    d1 = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * dt)
    d2 = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * dt)
    scale = np.max(np.abs(k.rate))
    assert np.max(np.abs(d1 + d2 - k.rate[1:-1, 1:-1])) < 1e-3 * scale
    mixed = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * dt**2)
    assert np.max(np.abs(mixed - k.mixed[1:-1, 1:-1])) < 1e-3 * np.max(np.abs(k.mixed))


def test_grid_refinement_converges_monotonically(frozen):
    c = coupling1(LOR, ANISO)
    ref = np.array(frozen["chi1_lorentzian"]["2.5"])
    errs = [np.max(np.abs(chi1(c, build_grid("gl", n, 40.0), 2.5) - ref)) for n in (24, 48, 96, 192)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_gauge_invariance_of_kernels():
    for name, c1, c2, c3, g in family_set():
        base1 = chi1_kernel(c1, g, 0.25, 2.5)
        base2 = chi2_kernel(c2, c1, g, 0.25, 2.5)
        base3 = chi3_kernel(c3, c1, g, [0.5, 1.0, 2.0])
        for seed in range(5):
            A = random_orthogonal(seed)
            t1, t2, t3 = (apply_orthogonal(c, A) for c in (c1, c2, c3))
            for new, old in (
                (chi1_kernel(t1, g, 0.25, 2.5).values, base1.values),
                (chi2_kernel(t2, t1, g, 0.25, 2.5).values, base2.values),
                (chi3_kernel(t3, t1, g, [0.5, 1.0, 2.0]).values, base3.values),
            ):
                assert np.max(np.abs(new - old)) < 1e-10 * np.max(np.abs(old)), name


def test_resolution_warning():
    g = build_grid("gl", 16, 20.0)
    with pytest.warns(ResolutionWarning):
        chi1_kernel(coupling1(LOR), g, 0.1, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        chi1_kernel(coupling1(LOR), build_grid("gl", 400, 20.0), 0.1, 10.0)


def test_memory_horizon():
    g = build_grid("gl", 300, GAU.band_limit())
    k = chi1_kernel(coupling1(GAU), g, 0.05, 60.0)
    hz = k.memory_horizon(1e-8)
    assert 0 < hz < 60.0
    mag = np.max(np.abs(k.rate), axis=(1, 2))
    assert np.all(mag[k.times > hz] < 1e-8 * mag.max())
    assert math.isinf(chi1_kernel(coupling1(GAU), g, 0.05, 2.0).memory_horizon(1e-8))


def test_noise_hermitian_stationary():
    g = build_grid("gl", 48, 12.0)
    lags = np.linspace(-4, 4, 41)
    nc = noise_correlation(coupling1(LOR, ANISO), g, lags)
    assert nc.hermiticity_violation() < 1e-12
    mid = 20
    assert np.allclose(nc.values[mid + 3].real, nc.values[mid - 3].real, atol=1e-15)
    assert np.allclose(nc.values[mid + 3].imag, -nc.values[mid - 3].imag, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(nc.values[mid].real)) >= 0

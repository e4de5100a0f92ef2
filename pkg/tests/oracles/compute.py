"""Independent reference values for the frozen-oracle tests.

Everything here is written from the defining integrals with scipy's adaptive
quadrature and plain numpy; nothing is imported from nlbath.  Run this module
to regenerate ``frozen.json``:

    python3 tests/oracles/compute.py
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy import integrate

HERE = Path(__file__).parent
QUAD = dict(limit=400, epsabs=1e-14, epsrel=1e-12)


def lorentzian(w, amp, center, width):
    return amp * width**2 / ((w - center) ** 2 + width**2) * w / (w + width)


def gaussian(w, amp, center, width):
    return amp * math.exp(-((w - center) ** 2) / (2 * width**2)) * w / (w + width)


def sym_trailing(h):
    """Average a rank-3 tensor over its two trailing indices."""
    return 0.5 * (h + np.transpose(h, (0, 2, 1)))


def structure(seed):
    return sym_trailing(np.random.default_rng(seed).standard_normal((3, 3, 3)))


def quad(f, a, b, **kw):
    val, _ = integrate.quad(f, a, b, **QUAD, **kw)
    return val


# scenario parameters shared with the tests
LOR = (1.0, 2.0, 0.5)
LOR_CUT = 40.0
GAU = (0.5, 1.0, 0.3)
GAU_CUT = 1.0 + 0.3 * math.sqrt(2 * math.log(1e8))
ANISO = np.array([[1.0, 0.2, 0.0], [0.1, 0.8, 0.3], [0.0, 0.2, 1.2]])
DIAG = np.diag([1.0, 1.2, 0.8])


def _ratio(env, params, power):
    # g ~ w near zero, so g^2 / w^power is finite for power <= 2
    return lambda w: env(w, *params) ** 2 / w**power if w > 0 else 0.0


def sine_moment(env, params, cut, t):
    """int_0^cut sin(w t) g(w)^2 / w dw."""
    return quad(_ratio(env, params, 1), 0.0, cut, weight="sin", wvar=t)


def cosine_moment(env, params, cut, t, power=0):
    """int_0^cut cos(w t) g(w)^2 w^-power dw."""
    return quad(_ratio(env, params, power), 0.0, cut, weight="cos", wvar=t)


def oracles():
    out = {}
    out["gl64_omega_exp"] = quad(lambda w: w * math.exp(-w), 0.0, 20.0)

    mm = ANISO @ ANISO.T
    out["chi1_lorentzian"] = {
        str(t): (sine_moment(lorentzian, LOR, LOR_CUT, t) * mm).tolist() for t in (0.3, 1.0, 2.5)
    }
    out["chi1_rate_lorentzian"] = {
        str(t): (cosine_moment(lorentzian, LOR, LOR_CUT, t) * mm).tolist() for t in (0.0, 0.3, 1.0)
    }

    h = structure(3)
    G = np.einsum("inm,jn,km->ijk", h, DIAG, DIAG)
    t1, t2 = 0.7, 1.9
    s1 = sine_moment(gaussian, GAU, GAU_CUT, t1)
    s2 = sine_moment(gaussian, GAU, GAU_CUT, t2)
    out["chi2_gaussian"] = {"t": [t1, t2], "value": (G * s1 * s2).tolist()}

    dd = DIAG @ DIAG.T
    tau = 0.8
    half = _ratio(gaussian, GAU, 1)
    re = 0.5 * quad(half, 0.0, GAU_CUT, weight="cos", wvar=tau)
    im = -0.5 * quad(half, 0.0, GAU_CUT, weight="sin", wvar=tau)
    out["noise_gaussian"] = {"tau": tau, "re": (re * dd).tolist(), "im": (im * dd).tolist()}

    kT = 0.3
    out["thermal_cov_gaussian"] = {
        "tau": tau,
        "kT": kT,
        "value": (kT * cosine_moment(gaussian, GAU, GAU_CUT, tau, power=2) * dd).tolist(),
    }

    # two-level atom
    omega0 = 1.0
    d = np.array([1.0, 0.5j, 0.2])
    m1 = np.diag([1.0, 1.3, 0.7])
    g0 = gaussian(omega0, 0.1, 1.0, 0.5)
    u = d @ m1
    out["gamma_linear"] = math.pi * omega0 * float(np.sum(np.abs(u) ** 2)) * g0**2
    h2 = structure(3)
    proj = float(np.sum(np.abs(np.einsum("ijk,i->jk", h2, d)) ** 2))
    p2 = (0.16, 0.5, 0.3)

    def integrand(w):
        if w <= 0 or w >= omega0:
            return 0.0
        return proj * gaussian(w, *p2) ** 2 * gaussian(omega0 - w, *p2) ** 2 / (w * (omega0 - w))

    out["gamma_nonlinear"] = math.pi * omega0**2 * quad(integrand, 0.0, omega0)
    return out


if __name__ == "__main__":
    (HERE / "frozen.json").write_text(json.dumps(oracles(), indent=1, sort_keys=True) + "\n")
    print("wrote", HERE / "frozen.json")

"""Frequency grids, coupling-tensor families and the orthogonal gauge freedom.

Every coupling of order ``n`` maps ``n`` bath frequencies to a real tensor with
``n + 1`` Cartesian indices.  The first index couples to the system velocity,
the trailing ``n`` indices to the bath coordinates.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument

RULES = ("trapezoid", "gauss-legendre")
_RULE_ALIASES = {
    "trapezoid": "trapezoid",
    "trap": "trapezoid",
    "gauss-legendre": "gauss-legendre",
    "gl": "gauss-legendre",
    "legendre": "gauss-legendre",
}
# first trapezoid node is moved off omega = 0 by this fraction of the cutoff
GUARD = 1e-13
ORTHO_TOL = 1e-10


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    points: np.ndarray
    weights: np.ndarray
    cutoff: float
    rule: str = "custom"

    def __post_init__(self):
        pts = _readonly(self.points)
        wts = _readonly(self.weights)
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size < 2:
            raise InvalidArgument("grid points and weights must be 1-d arrays of equal length >= 2")
        if np.any(pts <= 0) or np.any(wts <= 0):
            raise InvalidArgument("grid points and weights must be positive")
        if np.any(np.diff(pts) <= 0):
            raise InvalidArgument("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "cutoff", float(self.cutoff))

    def __len__(self):
        return self.points.size

    @property
    def spacing(self):
        """Largest gap between neighbouring nodes."""
        return float(np.max(np.diff(np.concatenate([[0.0], self.points, [self.cutoff]]))))

    def integrate(self, values):
        """Quadrature along the leading axis of ``values``."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))

    def refined(self, factor=2):
        return build_grid(self.rule, factor * len(self), self.cutoff)

    def describe(self):
        return {"rule": self.rule, "n_points": len(self), "cutoff": self.cutoff}


def build_grid(rule: str, n_points: int, cutoff: float) -> FrequencyGrid:
    """Quadrature grid on (0, cutoff).

    ``trapezoid`` uses ``n_points`` equally spaced nodes including both ends,
    with the node at zero replaced by a tiny positive guard so that ``1/omega``
    weights stay finite.  ``gauss-legendre`` maps the Legendre nodes from
    [-1, 1] onto (0, cutoff).
    """
    try:
        name = _RULE_ALIASES[str(rule).lower()]
    except KeyError:
        raise InvalidArgument(f"unknown quadrature rule {rule!r}; expected one of {RULES}") from None
    n_points = int(n_points)
    if n_points < 2:
        raise InvalidArgument("n_points must be >= 2")
    if not cutoff > 0 or not math.isfinite(cutoff):
        raise InvalidArgument("cutoff must be positive and finite")
    if name == "trapezoid":
        pts = np.linspace(0.0, cutoff, n_points)
        h = cutoff / (n_points - 1)
        wts = np.full(n_points, h)
        wts[0] = wts[-1] = h / 2
        pts[0] = GUARD * cutoff
    else:
        x, w = np.polynomial.legendre.leggauss(n_points)
        pts = 0.5 * cutoff * (x + 1.0)
        wts = 0.5 * cutoff * w
    return FrequencyGrid(pts, wts, cutoff, name)


# ---------------------------------------------------------------------------
# envelopes

ENVELOPE_FAMILIES = ("lorentzian", "gaussian", "constant")


@dataclass(frozen=True)
class Envelope:
    """Scalar frequency profile g(omega) shared by the parametric couplings.

    All families carry the low-frequency regulator ``omega / (omega + width)``
    so couplings vanish linearly at zero frequency.
    """

    family: str
    amplitude: float = 1.0
    center: float = 1.0
    width: float = 1.0
    cutoff: float = math.inf

    def __post_init__(self):
        if self.family not in ENVELOPE_FAMILIES:
            raise InvalidArgument(f"unknown envelope family {self.family!r}")
        if not self.width > 0:
            raise InvalidArgument("envelope width must be positive")
        if self.family == "constant" and not self.cutoff > 0:
            raise InvalidArgument("constant envelope needs a positive cutoff")

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        reg = w / (w + self.width)
        if self.family == "lorentzian":
            lam2 = self.width**2
            shape = lam2 / ((w - self.center) ** 2 + lam2)
        elif self.family == "gaussian":
            shape = np.exp(-((w - self.center) ** 2) / (2 * self.width**2))
        else:
            shape = np.where(w <= self.cutoff, 1.0, 0.0)
        return self.amplitude * shape * reg

    def band_limit(self, rel=1e-8):
        """Frequency beyond which the profile stays below ``rel`` of its peak."""
        if self.family == "constant":
            return self.cutoff
        if self.family == "gaussian":
            return self.center + self.width * math.sqrt(2 * math.log(1 / rel))
        return self.center + self.width * math.sqrt(1 / rel)


# ---------------------------------------------------------------------------
# couplings


def _contract_trailing(values, A, order):
    """f'[..., i, a1..an] = f[..., i, j1..jn] A[a1, j1] ... A[an, jn]."""
    out = np.asarray(values)
    for p in range(-order, 0):
        out = np.moveaxis(np.tensordot(out, A, axes=([p], [1])), -1, p)
    return out


def _symmetrize_trailing(h):
    order = h.ndim - 1
    if order < 2:
        return h.copy()
    perms = list(itertools.permutations(range(1, order + 1)))
    acc = np.zeros_like(h)
    for perm in perms:
        acc = acc + np.transpose(h, (0, *perm))
    return acc / len(perms)


class Coupling:
    """Base class: ``values`` broadcasts over frequency arrays."""

    order: int

    def values(self, *omegas):
        raise NotImplementedError

    def evaluate(self, *omegas):
        if len(omegas) != self.order:
            raise InvalidArgument(f"order-{self.order} coupling needs {self.order} frequencies")
        if any(np.any(np.asarray(w) < 0) for w in omegas):
            raise InvalidArgument("frequencies must be non-negative")
        return self.values(*(np.asarray(w, dtype=float) for w in omegas))

    def on_grid(self, grid):
        """Tensor on the full product grid, shape ``(N,)*order + (3,)*(order+1)``."""
        pts = grid.points if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
        n = self.order
        axes = []
        for k in range(n):
            shape = [1] * n
            shape[k] = pts.size
            axes.append(pts.reshape(shape))
        vals = self.values(*axes)
        return np.broadcast_to(vals, (pts.size,) * n + (3,) * (n + 1)).copy()

    def transformed(self, A):
        raise NotImplementedError

    def is_zero(self):
        return False


@dataclass(frozen=True, eq=False)
class SeparableCoupling(Coupling):
    """f(w1..wn) = h * g(w1) ... g(wn) with a constant structure tensor h.

    For order >= 2 the structure is symmetrized over its trailing indices, which
    makes the exchange symmetry of the coupling hold by construction.
    """

    envelope: Envelope
    structure: np.ndarray
    symmetrize: bool = True
    order: int = field(init=False)

    def __post_init__(self):
        h = np.array(self.structure, dtype=float)
        if h.ndim < 2 or h.ndim > 4 or any(s != 3 for s in h.shape):
            raise InvalidArgument("structure tensor must have shape (3,)*(n+1) with n in 1..3")
        if self.symmetrize:
            h = _symmetrize_trailing(h)
        h.flags.writeable = False
        object.__setattr__(self, "structure", h)
        object.__setattr__(self, "order", h.ndim - 1)

    def values(self, *omegas):
        prod = None
        for w in omegas:
            g = self.envelope(w)
            prod = g if prod is None else prod * g
        prod = np.asarray(prod)
        return prod[(...,) + (None,) * (self.order + 1)] * self.structure

    def transformed(self, A):
        h = _contract_trailing(self.structure, A, self.order)
        return SeparableCoupling(self.envelope, h, symmetrize=False)

    def is_zero(self):
        return self.envelope.amplitude == 0 or not np.any(self.structure)


class TabulatedCoupling(Coupling):
    """Order-1 or order-2 coupling sampled on a frequency table.

    Values are interpolated linearly (bilinearly for order 2) and are zero
    outside the tabulated frequency range.
    """

    def __init__(self, frequencies, table):
        freqs = np.array(frequencies, dtype=float)
        tab = np.array(table, dtype=float)
        if freqs.ndim != 1 or freqs.size < 2 or np.any(np.diff(freqs) <= 0) or freqs[0] < 0:
            raise InvalidArgument("table frequencies must be non-negative and strictly increasing")
        order = {3: 1, 5: 2}.get(tab.ndim)
        if order is None or tab.shape != (freqs.size,) * order + (3,) * (order + 1):
            raise InvalidArgument(f"table shape {tab.shape} does not match {freqs.size} frequencies")
        if not np.all(np.isfinite(tab)):
            raise InvalidArgument("table values must be finite")
        freqs.flags.writeable = False
        tab.flags.writeable = False
        self.frequencies = freqs
        self.table = tab
        self.order = order

    @property
    def frequency_range(self):
        return float(self.frequencies[0]), float(self.frequencies[-1])

    def _locate(self, w):
        f = self.frequencies
        w = np.asarray(w, dtype=float)
        idx = np.clip(np.searchsorted(f, w, side="right") - 1, 0, f.size - 2)
        frac = (w - f[idx]) / (f[idx + 1] - f[idx])
        inside = (w >= f[0]) & (w <= f[-1])
        return idx, np.where(inside, frac, 0.0), inside

    def values(self, *omegas):
        if self.order == 1:
            idx, frac, inside = self._locate(omegas[0])
            t = self.table
            lo, hi = t[idx], t[idx + 1]
            fr = frac[..., None, None]
            out = lo * (1 - fr) + hi * fr
            return np.where(inside[..., None, None], out, 0.0)
        (ia, fa, ina), (ib, fb, inb) = (self._locate(w) for w in np.broadcast_arrays(*omegas))
        t = self.table
        fa = fa[..., None, None, None]
        fb = fb[..., None, None, None]
        out = (
            t[ia, ib] * (1 - fa) * (1 - fb)
            + t[ia + 1, ib] * fa * (1 - fb)
            + t[ia, ib + 1] * (1 - fa) * fb
            + t[ia + 1, ib + 1] * fa * fb
        )
        return np.where((ina & inb)[..., None, None, None], out, 0.0)

    def transformed(self, A):
        return TabulatedCoupling(self.frequencies, _contract_trailing(self.table, A, self.order))

    def is_zero(self):
        return not np.any(self.table)


class FunctionCoupling(Coupling):
    """Coupling given by an arbitrary broadcasting callable."""

    def __init__(self, order: int, func: Callable[..., np.ndarray]):
        if order not in (1, 2, 3):
            raise InvalidArgument("coupling order must be 1, 2 or 3")
        self.order = order
        self.func = func

    def values(self, *omegas):
        return np.asarray(self.func(*omegas), dtype=float)

    def transformed(self, A):
        return FunctionCoupling(self.order, _RotatedFunction(self.func, A, self.order))


class _RotatedFunction:
    def __init__(self, func, A, order):
        self.func, self.A, self.order = func, A, order

    def __call__(self, *omegas):
        return _contract_trailing(self.func(*omegas), self.A, self.order)


def coupling1(envelope: Envelope, anisotropy=None) -> SeparableCoupling:
    """Rank-2 coupling ``g(omega) * M``; ``anisotropy`` is a 3-vector (diagonal) or 3x3."""
    if anisotropy is None:
        m = np.eye(3)
    else:
        m = np.asarray(anisotropy, dtype=float)
        if m.shape == (3,):
            m = np.diag(m)
    if m.shape != (3, 3):
        raise InvalidArgument("anisotropy must be a 3-vector or a 3x3 matrix")
    return SeparableCoupling(envelope, m)


def coupling2(envelope: Envelope, structure=None) -> SeparableCoupling:
    h = diagonal_structure(2) if structure is None else np.asarray(structure, dtype=float)
    if h.shape != (3, 3, 3):
        raise InvalidArgument("rank-3 structure tensor must be 3x3x3")
    return SeparableCoupling(envelope, h)


def coupling3(envelope: Envelope, structure=None) -> SeparableCoupling:
    h = diagonal_structure(3) if structure is None else np.asarray(structure, dtype=float)
    if h.shape != (3, 3, 3, 3):
        raise InvalidArgument("rank-4 structure tensor must be 3x3x3x3")
    return SeparableCoupling(envelope, h)


def diagonal_structure(order):
    h = np.zeros((3,) * (order + 1))
    for i in range(3):
        h[(i,) * (order + 1)] = 1.0
    return h


def random_structure(order, seed, scale=1.0):
    """Seeded structure tensor with generic (non-aligned) components."""
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((3,) * (order + 1))


def zero_coupling(order: int) -> SeparableCoupling:
    return SeparableCoupling(Envelope("gaussian", 0.0), np.zeros((3,) * (order + 1)))


def eval_coupling1(c: Coupling, omega: float) -> np.ndarray:
    if c.order != 1:
        raise InvalidArgument("eval_coupling1 needs an order-1 coupling")
    if not omega >= 0:
        raise InvalidArgument("omega must be non-negative")
    return c.evaluate(omega)


# ---------------------------------------------------------------------------
# symmetry validation


@dataclass(frozen=True)
class SymmetryReport:
    max_violation: float
    location: tuple | None = None  # (grid indices..., tensor indices...)

    def describe(self):
        if self.location is None:
            return f"max violation {self.max_violation:.3e}"
        return f"max violation {self.max_violation:.3e} at {self.location}"


def symmetry_violation(c: Coupling, grid: FrequencyGrid) -> SymmetryReport:
    """Largest |f(.., wk, .., wl, ..)[.., jk, .., jl, ..] - swapped| over all slot pairs."""
    if c.order < 2:
        return SymmetryReport(0.0)
    vals = c.on_grid(grid)
    n = c.order
    worst, where = 0.0, None
    for k, l in itertools.combinations(range(n), 2):
        perm = list(range(2 * n + 1))
        perm[k], perm[l] = perm[l], perm[k]
        perm[n + 1 + k], perm[n + 1 + l] = perm[n + 1 + l], perm[n + 1 + k]
        diff = np.abs(vals - np.transpose(vals, perm))
        m = float(diff.max())
        if m > worst:
            worst = m
            where = tuple(int(i) for i in np.unravel_index(np.argmax(diff), diff.shape))
    return SymmetryReport(worst, where)


def validate_coupling2_symmetry(c: Coupling, grid: FrequencyGrid) -> SymmetryReport:
    if c.order != 2:
        raise InvalidArgument("validate_coupling2_symmetry needs an order-2 coupling")
    return symmetry_violation(c, grid)


# ---------------------------------------------------------------------------
# orthogonal gauge transformations


@dataclass(frozen=True, eq=False)
class OrthogonalTransform:
    matrix: np.ndarray

    def __post_init__(self):
        a = _readonly(self.matrix)
        if a.shape != (3, 3):
            raise InvalidArgument("orthogonal transform must be 3x3")
        dev = float(np.max(np.abs(a @ a.T - np.eye(3))))
        if dev > ORTHO_TOL:
            raise InvalidArgument(f"matrix is not orthogonal (max |A A^T - I| = {dev:.3e})")
        object.__setattr__(self, "matrix", a)

    @property
    def T(self):
        return OrthogonalTransform(self.matrix.T)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def rotation_z(cls, angle):
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def random_orthogonal(seed: int) -> OrthogonalTransform:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    return OrthogonalTransform(q)


def apply_orthogonal(c: Coupling, A) -> Coupling:
    """Gauge-transform a coupling: contract every trailing index with ``A``."""
    if not isinstance(A, OrthogonalTransform):
        A = OrthogonalTransform(A)
    return c.transformed(A.matrix)


# ---------------------------------------------------------------------------
# CSV tables


def load_coupling_csv(path, order: int) -> TabulatedCoupling:
    """Read a coupling table.

    Order 1 columns: ``omega, i, j, value``; order 2 columns:
    ``omega, omega2, i, j, k, value``.  Cartesian indices are 1-based and
    absent entries are zero.  Both frequency axes of an order-2 table must use
    the same set of frequencies.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["omega", "i", "j", "value"] if order == 1 else ["omega", "omega2", "i", "j", "k", "value"]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise InvalidArgument(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(expected):
                raise InvalidArgument(f"{path}:{lineno}: expected {len(expected)} columns")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise InvalidArgument(f"{path}: empty table")
    data = np.array(rows)
    nf = order
    freqs = np.unique(data[:, :nf])
    table = np.zeros((freqs.size,) * order + (3,) * (order + 1))
    pos = {w: k for k, w in enumerate(freqs)}
    for row in data:
        fidx = tuple(pos[w] for w in row[:nf])
        comp = tuple(int(round(x)) - 1 for x in row[nf:-1])
        if any(ci not in (0, 1, 2) for ci in comp):
            raise InvalidArgument(f"{path}: tensor indices must be 1, 2 or 3")
        table[fidx + comp] = row[-1]
    return TabulatedCoupling(freqs, table)


def write_coupling_csv(path, c: Coupling, frequencies: Sequence[float]):
    freqs = np.asarray(frequencies, dtype=float)
    vals = c.on_grid(freqs)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if c.order == 1:
            w.writerow(["omega", "i", "j", "value"])
            for a, i, j in itertools.product(range(freqs.size), range(3), range(3)):
                w.writerow([repr(float(freqs[a])), i + 1, j + 1, repr(float(vals[a, i, j]))])
        elif c.order == 2:
            w.writerow(["omega", "omega2", "i", "j", "k", "value"])
            for a, b, i, j, k in itertools.product(range(freqs.size), range(freqs.size), range(3), range(3), range(3)):
                w.writerow([repr(float(freqs[a])), repr(float(freqs[b])), i + 1, j + 1, k + 1,
                            repr(float(vals[a, b, i, j, k]))])
        else:
            raise InvalidArgument("only order 1 and 2 couplings can be tabulated")

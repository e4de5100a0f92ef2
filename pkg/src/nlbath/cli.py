"""Scenario-driven command line front end.

Scenario files are flat ``key = value`` lists with dotted sections::

    # lines starting with '#' are comments
    task = chi
    coupling1 = lorentzian(g=1, wc=2, lambda=0.5)
    grid = gl(64, 20)
    times = (0.01, 10)

Values are Python literals, bare words, or calls ``name(arg, key=value)``.
The README carries the full grammar table.
"""
from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import io
import itertools
import json
import math
import platform
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .atom import AtomParams, fit_decay_rate, gamma_report, integrate_master_equation
from .errors import ParseError, ValidationError
from .langevin import (
    NoiseRealization,
    SystemConfig,
    compare_micro_macro,
    integrate_macroscopic,
    integrate_microscopic,
    make_bath,
    sample_noise,
)
from .model import (
    Envelope,
    FrequencyGrid,
    apply_orthogonal,
    build_grid,
    coupling1,
    coupling2,
    coupling3,
    load_coupling_csv,
    random_orthogonal,
    random_structure,
    symmetry_violation,
)
from .susceptibility import (
    check_symmetries,
    chi1,
    chi1_kernel,
    chi2,
    chi2_kernel,
    chi2_table,
    chi3_kernel,
    chi_n,
    noise_correlation,
)

TASKS = ("chi", "langevin", "atom", "validate")
SYMMETRY_TOL = 1e-12

# ---------------------------------------------------------------------------
# value grammar


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple = ()
    kwargs: tuple = ()  # ((key, value), ...) in canonical order

    def kw(self):
        return dict(self.kwargs)


_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-/]*$")
_WORDS = {"true": True, "false": False, "none": None}


def parse_value(text: str):
    """Literal, bare word, ``name(...)`` call, or a list/tuple of those."""
    text = text.strip()
    # 'lambda' is a Python keyword but a natural parameter name here
    src = re.sub(r"\blambda(\s*=)", r"lambda_\1", text)
    try:
        node = ast.parse(src, mode="eval").body
    except SyntaxError:
        return text
    try:
        return _node_value(node, src)
    except ValueError:
        return text


def _node_value(node, src):
    if isinstance(node, ast.Name):
        return _WORDS.get(node.id.lower(), node.id)
    if isinstance(node, (ast.List, ast.Tuple)):
        items = [_node_value(e, src) for e in node.elts]
        return items if isinstance(node, ast.List) else tuple(items)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        args = tuple(_node_value(a, src) for a in node.args)
        if any(k.arg is None for k in node.keywords):
            raise ValueError("**kwargs is not allowed")
        kwargs = tuple(
            ("lambda" if k.arg == "lambda_" else k.arg, _node_value(k.value, src)) for k in node.keywords
        )
        return Call(node.func.id, args, kwargs)
    try:
        return ast.literal_eval(node)
    except ValueError:
        seg = ast.get_source_segment(src, node) or ""
        if _BARE.match(seg):  # hyphenated words such as classical-thermal
            return seg
        raise


def format_value(v) -> str:
    """Canonical text that :func:`parse_value` maps back to ``v``."""
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, complex)):
        return repr(v)
    if isinstance(v, str):
        # bare only when the word survives a parse inside a list, e.g. not "a-01"
        bare = _BARE.match(v) and v.lower() not in _WORDS and parse_value(f"[{v}]") == [v]
        return v if bare else json.dumps(v)
    if isinstance(v, tuple):
        inner = ", ".join(format_value(x) for x in v)
        return f"({inner},)" if len(v) == 1 else f"({inner})"
    if isinstance(v, list):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, Call):
        parts = [format_value(a) for a in v.args] + [f"{k}={format_value(x)}" for k, x in v.kwargs]
        return f"{v.name}({', '.join(parts)})"
    raise TypeError(f"cannot format {type(v).__name__}")


# ---------------------------------------------------------------------------
# schema


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _as_float(v, what):
    if not _num(v):
        raise ValueError(f"expected a number for {what}, got {format_value(v)}")
    return float(v)


def _t_str(v):
    if not isinstance(v, str):
        raise ValueError("expected a word or quoted string")
    return v


def _t_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _t_float(v):
    return _as_float(v, "value")


def _t_seed(v):
    v = _t_int(v)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _t_vec3(v):
    if not isinstance(v, (tuple, list)) or len(v) != 3:
        raise ValueError("expected a 3-vector")
    return tuple(_as_float(x, "vector component") for x in v)


def _t_cvec3(v):
    if not isinstance(v, (tuple, list)) or len(v) != 3:
        raise ValueError("expected a 3-vector")
    out = []
    for x in v:
        if isinstance(x, complex):
            out.append(x if x.imag else float(x.real))
        else:
            out.append(_as_float(x, "vector component"))
    return tuple(out)


def _t_pair(v):
    if not isinstance(v, (tuple, list)) or len(v) != 2:
        raise ValueError("expected a pair (a, b)")
    a, b = (_as_float(x, "pair entry") for x in v)
    if not 0 <= a < b:
        raise ValueError("pair must satisfy 0 <= a < b")
    return (a, b)


def _t_times(v):
    h, T = _t_pair(v)
    if not (h > 0 and T > 0):
        raise ValueError("times = (h, T) needs h > 0 and T > 0")
    n = T / h
    if abs(n - round(n)) > 1e-9 * n:
        raise ValueError("T must be an integer multiple of h")
    return (h, T)


def _t_levels(v):
    if not isinstance(v, (tuple, list)) or not v:
        raise ValueError("expected a list of grid sizes")
    out = tuple(_t_int(x) for x in v)
    if any(x < 2 for x in out):
        raise ValueError("grid sizes must be >= 2")
    return out


def _optional(check):
    return lambda v: None if v is None else check(v)


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return check


_FAMILY_PARAMS = {
    # canonical name -> accepted aliases
    "lorentzian": {"g": ("g", "amplitude"), "wc": ("wc", "center"), "lambda": ("lambda", "width")},
    "gaussian": {"g": ("g", "amplitude"), "wc": ("wc", "center"), "sigma": ("sigma", "width")},
    "constant": {"g": ("g", "amplitude"), "lambda": ("lambda", "width"), "cutoff": ("cutoff",)},
}


def _t_coupling(v):
    if v is None:
        return None
    if not isinstance(v, Call):
        raise ValueError("expected family(...) , table(\"file.csv\") or none")
    if v.name == "table":
        if len(v.args) != 1 or v.kwargs or not isinstance(v.args[0], str):
            raise ValueError('table coupling takes one path argument: table("file.csv")')
        return v
    if v.name not in _FAMILY_PARAMS:
        raise ValueError(f"unknown coupling family {v.name!r}; expected one of {', '.join(_FAMILY_PARAMS)} or table")
    if v.args:
        raise ValueError("family parameters must be given as key=value")
    spec = _FAMILY_PARAMS[v.name]
    given = dict(v.kwargs)
    out = []
    for canon, aliases in spec.items():
        hits = [a for a in aliases if a in given]
        if not hits:
            raise ValueError(f"{v.name} coupling needs parameter {canon!r}")
        if len(hits) > 1:
            raise ValueError(f"parameter {canon!r} given twice")
        out.append((canon, _as_float(given.pop(hits[0]), canon)))
    if given:
        raise ValueError(f"unknown {v.name} parameter(s): {', '.join(sorted(given))}")
    return Call(v.name, (), tuple(out))


_RULE_NAMES = {"gauss-legendre": "gl", "trapezoid": "trapezoid"}


def _t_grid(v):
    if not isinstance(v, Call):
        raise ValueError("expected rule(n_points, cutoff), e.g. gl(64, 20)")
    kw = v.kw()
    args = list(v.args) + [kw.pop(k) for k in ("n", "cutoff") if k in kw]
    if kw or len(args) != 2:
        raise ValueError("grid takes exactly (n_points, cutoff)")
    n = _t_int(args[0])
    cutoff = _as_float(args[1], "cutoff")
    try:
        rule = build_grid(v.name, 2, 1.0).rule
    except Exception:
        raise ValueError(f"unknown quadrature rule {v.name!r}") from None
    return Call(_RULE_NAMES[rule], (n, cutoff))


def _t_structure(order):
    def check(v):
        if v in ("identity", "diagonal"):
            return v
        if isinstance(v, Call):
            if v.name != "random":
                raise ValueError("structure call must be random(seed=..., scale=...)")
            kw = v.kw()
            seed = _t_seed(kw.pop("seed", 0))
            scale = _as_float(kw.pop("scale", 1.0), "scale")
            if kw or v.args:
                raise ValueError("random structure takes only seed= and scale=")
            return Call("random", (), (("seed", seed), ("scale", scale)))
        if isinstance(v, (list, tuple)):
            try:
                a = np.asarray(v, dtype=float)
            except (TypeError, ValueError):
                raise ValueError("structure must be numeric") from None
            ok = a.shape == (3,) * (order + 1) or (order == 1 and a.shape == (3,))
            if not ok:
                raise ValueError(f"structure must have shape {(3,) * (order + 1)}")
            return _tupled(a.tolist())
        raise ValueError("expected identity, diagonal, random(seed=, scale=) or a nested list")

    return check


def _tupled(x):
    return tuple(_tupled(y) for y in x) if isinstance(x, list) else float(x)


@dataclass(frozen=True)
class Field:
    check: object
    default: object = None
    required: bool = False


SCHEMA = {
    "name": Field(_t_str, "scenario"),
    "task": Field(_optional(_choice(*TASKS)), None),
    "seed": Field(_t_seed, 0),
    "units.hbar": Field(_t_float, 1.0),
    "units.mass": Field(_t_float, 1.0),
    "units.kB": Field(_t_float, 1.0),
    "coupling1": Field(_t_coupling, required=True),
    "coupling1.anisotropy": Field(_t_structure(1), "identity"),
    "coupling2": Field(_t_coupling, None),
    "coupling2.structure": Field(_t_structure(2), "diagonal"),
    "coupling3": Field(_t_coupling, None),
    "coupling3.structure": Field(_t_structure(3), "diagonal"),
    "grid": Field(_t_grid, required=True),
    "times": Field(_t_times, required=True),
    "chi.t_min": Field(_t_float, 0.0),
    "chi.points2": Field(_t_int, 16),
    "chi.points3": Field(_t_int, 8),
    "chi.noise_lags": Field(_t_int, 101),
    "langevin.mode": Field(_choice("macroscopic", "microscopic", "compare"), "macroscopic"),
    "langevin.potential": Field(_choice("free", "harmonic"), "harmonic"),
    "langevin.omega": Field(_t_float, 1.0),
    "langevin.q0": Field(_t_vec3, (1.0, 0.0, 0.0)),
    "langevin.v0": Field(_t_vec3, (0.0, 0.0, 0.0)),
    "langevin.sampler": Field(_choice("zero", "classical-thermal"), "zero"),
    "langevin.temperature": Field(_t_float, 0.0),
    "langevin.levels": Field(_t_levels, (64, 128, 256)),
    "langevin.reference_points": Field(_t_int, 1024),
    "atom.omega0": Field(_t_float, 1.0),
    "atom.d": Field(_t_cvec3, (1.0, 0.0, 0.0)),
    "atom.form": Field(_choice("finite-time", "markov"), "finite-time"),
    "atom.fit_window": Field(_t_pair, (5.0, 30.0)),
    "atom.invariance_seeds": Field(_t_int, 5),
    "validate.negative_times": Field(_t_int, 20),
    "validate.points2": Field(_t_int, 16),
    "validate.points3": Field(_t_int, 8),
    "validate.gauge_seeds": Field(_t_int, 5),
}


@dataclass(frozen=True, eq=False)
class Scenario:
    values: dict
    sweep: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def task(self):
        return self.values["task"]

    @property
    def seed(self):
        return self.values["seed"]

    def resolved_text(self) -> str:
        lines = [
            f"{k} = {format_value(v)}"
            for k, v in sorted(self.values.items())
            if not (v is None and k.endswith(".structure"))
        ]
        lines += [f"sweep.{k} = {format_value(list(v))}" for k, v in sorted(self.sweep.items())]
        return "\n".join(lines) + "\n"

    def replace(self, **updates):
        vals = dict(self.values)
        vals.update(updates)
        return Scenario(vals, dict(self.sweep), self.base_dir)


def _coerce(key, value, line):
    try:
        return SCHEMA[key].check(value)
    except ValueError as exc:
        raise ParseError(str(exc), line=line, key=key) from None


def parse_text(text: str, base_dir=".") -> Scenario:
    raw, where, sweep = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", line=lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*", key):
            raise ParseError("malformed key", line=lineno, key=key)
        if key in raw or key in sweep:
            raise ParseError("duplicate key", line=lineno, key=key)
        if not value.strip():
            raise ParseError("missing value", line=lineno, key=key)
        try:
            parsed = parse_value(value)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, key=key) from None
        if key.startswith("sweep."):
            target = key[len("sweep."):]
            if target not in SCHEMA or target == "task":
                raise ParseError("unknown sweep target", line=lineno, key=key)
            if not isinstance(parsed, list) or not parsed:
                raise ParseError("sweep values must be a non-empty [list]", line=lineno, key=key)
            sweep[target] = tuple(_coerce(target, v, lineno) for v in parsed)
            where[key] = lineno
            continue
        if key not in SCHEMA:
            raise ParseError("unknown key", line=lineno, key=key)
        raw[key] = _coerce(key, parsed, lineno)
        where[key] = lineno
    values = {}
    for key, spec in SCHEMA.items():
        if key in raw:
            values[key] = raw[key]
        elif spec.required:
            raise ParseError("missing required key", key=key)
        else:
            values[key] = spec.default
    for key in ("coupling2.structure", "coupling3.structure"):
        rank = key.split(".")[0]
        if values[rank] is None:
            if key in raw:
                raise ParseError(f"{key} given but {rank} is not declared", line=where[key], key=key)
            values[key] = None
    return Scenario(values, sweep, Path(base_dir))


def _strip_comment(line):
    """Drop a '#' comment that is not inside a quoted string."""
    quote = None
    for k, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:k]
    return line


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc.strerror}") from None
    return parse_text(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# building model objects


def _envelope(call: Call) -> Envelope:
    p = call.kw()
    if call.name == "lorentzian":
        return Envelope("lorentzian", p["g"], p["wc"], p["lambda"])
    if call.name == "gaussian":
        return Envelope("gaussian", p["g"], p["wc"], p["sigma"])
    return Envelope("constant", p["g"], 0.0, p["lambda"], p["cutoff"])


def _structure(spec, order):
    if spec == "identity" or spec == "diagonal":
        return None
    if isinstance(spec, Call):
        kw = spec.kw()
        return random_structure(order, kw["seed"], kw["scale"])
    return np.asarray(spec, dtype=float)


def build_couplings(sc: Scenario):
    out = {}
    makers = {1: coupling1, 2: coupling2, 3: coupling3}
    extra = {1: "coupling1.anisotropy", 2: "coupling2.structure", 3: "coupling3.structure"}
    for order in (1, 2, 3):
        spec = sc[f"coupling{order}"]
        if spec is None:
            out[order] = None
            continue
        if spec.name == "table":
            if order == 3:
                raise ParseError("rank-4 couplings cannot be tabulated", key="coupling3")
            out[order] = load_coupling_csv(sc.base_dir / spec.args[0], order)
        else:
            out[order] = makers[order](_envelope(spec), _structure(sc[extra[order]], order))
    return out[1], out[2], out[3]


def build_grid_from(sc: Scenario) -> FrequencyGrid:
    g = sc["grid"]
    return build_grid(g.name, *g.args)


def validate_couplings(c2, c3, grid):
    """Fail closed on any exchange-symmetry violation above the tolerance."""
    reports = {}
    for name, c in (("coupling2", c2), ("coupling3", c3)):
        if c is None:
            continue
        rep = symmetry_violation(c, grid)
        reports[name] = rep
        if rep.max_violation > SYMMETRY_TOL:
            n = c.order
            loc = rep.location
            freq = tuple(loc[:n])
            tens = tuple(i + 1 for i in loc[n:])
            raise ValidationError(
                f"{name} violates exchange symmetry: max violation {rep.max_violation:.3e} > {SYMMETRY_TOL:g} "
                f"at frequency nodes {freq}, tensor indices {tens}"
            )
    return reports


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(x):
    return "%.17g" % x


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_float(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue().encode("utf-8")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


class Outputs:
    """Collects artifact payloads and writes them with a manifest."""

    def __init__(self):
        self.files = {}

    def add(self, name, payload: bytes):
        self.files[name] = payload

    def write(self, out_dir: Path, sc: Scenario, argv=None):
        out_dir.mkdir(parents=True, exist_ok=True)
        resolved = sc.resolved_text().encode("utf-8")
        self.files["scenario.resolved"] = resolved
        manifest = {
            "inputs_hash": inputs_hash(sc),
            "seed": sc.seed,
            "task": sc.task,
            "versions": {
                "nlbath": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "files": {k: hashlib.sha256(v).hexdigest() for k, v in sorted(self.files.items())},
        }
        self.files["manifest.json"] = json_bytes(manifest)
        for name, payload in self.files.items():
            (out_dir / name).write_bytes(payload)
        info = {"timestamp": datetime.now(timezone.utc).isoformat(), "argv": list(argv or [])}
        (out_dir / "run_info.json").write_bytes(json_bytes(info))


def inputs_hash(sc: Scenario) -> str:
    h = hashlib.sha256(sc.resolved_text().encode("utf-8"))
    for order in (1, 2):
        spec = sc[f"coupling{order}"]
        if isinstance(spec, Call) and spec.name == "table":
            h.update((sc.base_dir / spec.args[0]).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# tasks


def _steps(sc):
    h, T = sc["times"]
    return h, int(round(T / h))


def task_chi(sc, c1, c2, c3, grid, out: Outputs):
    h, n = _steps(sc)
    T = h * n
    t0 = sc["chi.t_min"]
    k0 = math.ceil(t0 / h - 1e-9) if t0 < 0 else 0
    ts = h * np.arange(k0, n + 1)
    vals1 = np.array([chi1(c1, grid, t) for t in ts])
    rows = ((float(t), i + 1, j + 1, float(vals1[s, i, j]))
            for s, t in enumerate(ts) for i in range(3) for j in range(3))
    out.add("chi1.csv", csv_bytes(["t", "i", "j", "value"], rows))
    checks = {"chi1": vals1}
    if c2 is not None:
        t2 = np.linspace(min(t0, 0.0), T, sc["chi.points2"])
        vals2 = chi2_table(c2, c1, grid, t2)
        rows = ((float(t2[p]), float(t2[q]), i + 1, j + 1, k + 1, float(vals2[p, q, i, j, k]))
                for p in range(t2.size) for q in range(t2.size)
                for i in range(3) for j in range(3) for k in range(3))
        out.add("chi2.csv", csv_bytes(["t", "t2", "i", "j", "k", "value"], rows))
        checks["chi2"] = vals2
    if c3 is not None:
        t3 = np.linspace(min(t0, 0.0), T, sc["chi.points3"])
        vals3 = _chi3_cube(c3, c1, grid, t3)
        rows = ((float(t3[p]), float(t3[q]), float(t3[r]), i + 1, j + 1, k + 1, l + 1,
                 float(vals3[p, q, r, i, j, k, l]))
                for p, q, r in itertools.product(range(t3.size), repeat=3)
                for i, j, k, l in itertools.product(range(3), repeat=4))
        out.add("chi3.csv", csv_bytes(["t", "t2", "t3", "i", "j", "k", "l", "value"], rows))
        checks["chi3"] = vals3
    lags = np.linspace(-T, T, sc["chi.noise_lags"])
    nc = noise_correlation(c1, grid, lags, hbar=sc["units.hbar"])
    rows = ((float(tau), i + 1, j + 1, float(nc.values[s, i, j].real), float(nc.values[s, i, j].imag))
            for s, tau in enumerate(nc.lags) for i in range(3) for j in range(3))
    out.add("noise_correlation.csv", csv_bytes(["tau", "i", "j", "re", "im"], rows))
    sym = check_symmetries(checks.get("chi1"), checks.get("chi2"), checks.get("chi3"))
    report = {"symmetry": sym.as_dict(), "noise_hermiticity": nc.hermiticity_violation()}
    out.add("chi_report.json", json_bytes(report))
    return 0


def _chi3_cube(c3, c1, grid, times):
    """chi3 on times^3 with exact zeros wherever any argument is negative."""
    vals = np.zeros((times.size,) * 3 + (3,) * 4)
    pos = np.nonzero(times >= 0)[0]
    if pos.size:
        k = chi3_kernel(c3, c1, grid, times[pos])
        vals[np.ix_(pos, pos, pos)] = k.values
    return vals


def task_langevin(sc, c1, c2, c3, grid, out: Outputs):
    h, n = _steps(sc)
    T = h * n
    system = SystemConfig(
        mass=sc["units.mass"],
        potential=sc["langevin.potential"],
        omega=sc["langevin.omega"],
        q0=sc["langevin.q0"],
        v0=sc["langevin.v0"],
    )
    mode = sc["langevin.mode"]
    kT = sc["units.kB"] * sc["langevin.temperature"]
    if mode == "compare":
        rep = compare_micro_macro(
            system, make_bath(grid), c1, c2, h, n,
            levels=sc["langevin.levels"], reference_points=sc["langevin.reference_points"],
        )
        out.add("convergence.json", json_bytes(rep.as_dict()))
        return 0
    bath = make_bath(grid, sc["langevin.sampler"], kT, sc.seed)
    if mode == "macroscopic":
        k1 = chi1_kernel(c1, grid, h / 2, T)
        k2 = chi2_kernel(c2, c1, grid, h / 2, T) if c2 is not None else None
        noise = None if bath.is_quiet() else NoiseRealization(bath, c1, c2)
        traj = integrate_macroscopic(system, k1, k2, noise, h, n)
    else:
        traj = integrate_microscopic(system, bath, c1, c2, h, n)
    rn = sample_noise(bath, c1, c2, traj.times).value
    header = ["t", "qx", "qy", "qz", "vx", "vy", "vz", "Rx", "Ry", "Rz", "RNx", "RNy", "RNz"]
    table = np.column_stack([traj.rows(), rn])
    if traj.energy is not None:
        header.append("energy")
        table = np.column_stack([table, traj.energy])
    out.add("trajectory.csv", csv_bytes(header, (tuple(float(x) for x in r) for r in table)))
    out.add("trajectory_meta.json", json_bytes(traj.metadata))
    return 0


def task_atom(sc, c1, c2, c3, grid, out: Outputs):
    h, n = _steps(sc)
    a = AtomParams(sc["atom.omega0"], np.array(sc["atom.d"], dtype=complex), sc["units.mass"], sc["units.hbar"])
    seeds = tuple(range(sc["atom.invariance_seeds"]))
    report = gamma_report(a, c1, c2, grid, seeds=seeds)
    res = integrate_master_equation(a, c1, c2, grid, h, n, form=sc["atom.form"])
    lo, hi = sc["atom.fit_window"]
    fit = fit_decay_rate(res.times, res.rho22, (lo / a.omega0, hi / a.omega0))
    rows = ((float(t), float(r11), float(r22), float(r12.real), float(r12.imag))
            for t, r11, r22, r12 in zip(res.times, res.rho11, res.rho22, res.rho12))
    out.add("rho.csv", csv_bytes(["t", "rho11", "rho22", "re_rho12", "im_rho12"], rows))
    decay = dict(report.as_dict(), gamma_fit=fit.rate)
    out.add("decay_report.json", json_bytes(decay))
    diag = {
        "form": res.form,
        "max_trace_drift": res.max_trace_drift,
        "max_cancellation": res.max_cancellation,
        "min_eigenvalue": res.min_eigenvalue,
        "transient_transfer": res.transient_transfer,
        "fit_residual": fit.residual,
        "fit_window": [lo / a.omega0, hi / a.omega0],
    }
    out.add("master_equation.json", json_bytes(diag))
    return 0


def task_validate(sc, c1, c2, c3, grid, out: Outputs, sym_reports=None):
    h, n = _steps(sc)
    T = h * n
    rng = np.random.default_rng(sc.seed)
    neg = -rng.uniform(1e-6, T, sc["validate.negative_times"])
    causal = {"chi1": all(not np.any(chi1(c1, grid, t)) for t in neg)}
    if c2 is not None:
        pos = rng.uniform(0, T, neg.size)
        causal["chi2"] = all(
            not np.any(chi2(c2, c1, grid, a, b)) and not np.any(chi2(c2, c1, grid, b, a))
            for a, b in zip(neg, pos)
        )
    if c3 is not None:
        pos = rng.uniform(0, T, (neg.size, 2))
        causal["chi3"] = all(
            not np.any(chi_n(c3, c1, grid, (p[0], t, p[1]))) for t, p in zip(neg, pos)
        )
    k1 = chi1_kernel(c1, grid, T / (sc["validate.points2"] - 1), T)
    t2 = np.linspace(0, T, sc["validate.points2"])
    k2 = None
    if c2 is not None:
        k2 = chi2_table(c2, c1, grid, t2)
    k3 = None
    if c3 is not None:
        k3 = chi3_kernel(c3, c1, grid, np.linspace(0, T, sc["validate.points3"]))
    sym = check_symmetries(k1, k2, k3)
    gauge = 0.0
    for s in range(sc["validate.gauge_seeds"]):
        A = random_orthogonal(s)
        kt = chi1_kernel(apply_orthogonal(c1, A), grid, k1.dt, T)
        scale = float(np.max(np.abs(k1.values))) or 1.0
        gauge = max(gauge, float(np.max(np.abs(kt.values - k1.values))) / scale)
    lags = np.linspace(-T, T, 2 * sc["validate.points2"] + 1)
    herm = noise_correlation(c1, grid, lags, hbar=sc["units.hbar"]).hermiticity_violation()
    passed = (
        all(causal.values()) and sym.passed(SYMMETRY_TOL) and gauge < 1e-10 and herm < 1e-12
    )
    report = {
        "coupling_symmetry": {k: v.max_violation for k, v in (sym_reports or {}).items()},
        "causality_exact_zero": causal,
        "kernel_symmetry": sym.as_dict(),
        "gauge_chi1_max_dev": gauge,
        "noise_hermiticity": herm,
        "passed": bool(passed),
    }
    out.add("validation.json", json_bytes(report))
    return 0 if passed else 1


TASK_FUNCS = {"chi": task_chi, "langevin": task_langevin, "atom": task_atom, "validate": task_validate}


def run(sc: Scenario, out_dir, argv=None) -> int:
    """Validate couplings, run the scenario's task and write every artifact."""
    grid = build_grid_from(sc)
    c1, c2, c3 = build_couplings(sc)
    reports = validate_couplings(c2, c3, grid)
    out = Outputs()
    fn = TASK_FUNCS[sc.task]
    if sc.task == "validate":
        status = fn(sc, c1, c2, c3, grid, out, sym_reports=reports)
    else:
        status = fn(sc, c1, c2, c3, grid, out)
    out.write(Path(out_dir), sc, argv)
    return status


def _run_child(args):
    sc, out_dir = args
    try:
        return run(sc, out_dir), None
    except Exception as exc:  # reported by the parent
        return 3, f"{type(exc).__name__}: {exc}"


def expand_sweep(sc: Scenario):
    keys = sorted(sc.sweep)
    combos = itertools.product(*(sc.sweep[k] for k in keys))
    out = []
    for combo in combos:
        sub = Scenario({**sc.values, **dict(zip(keys, combo))}, {}, sc.base_dir)
        out.append((dict(zip(keys, combo)), sub))
    return out


def run_sweep(sc: Scenario, out_dir, threads=1, argv=None) -> int:
    if not sc.sweep:
        raise ParseError("sweep needs at least one sweep.<key> = [...] entry")
    out_dir = Path(out_dir)
    subs = expand_sweep(sc)
    jobs = [(sub, out_dir / f"run_{k:03d}") for k, (_, sub) in enumerate(subs)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_child, jobs))
    else:
        results = [_run_child(j) for j in jobs]
    index = []
    status = 0
    for (over, _), (sub, d), (code, err) in zip(subs, jobs, results):
        index.append({"dir": d.name, "overrides": {k: format_value(v) for k, v in over.items()},
                      "status": code, "error": err})
        status = max(status, code)
    out = Outputs()
    out.add("sweep_index.json", json_bytes(index))
    out.write(out_dir, sc, argv)
    return status


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="nlbath", description="Nonlinear anisotropic bath scenarios.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in TASKS + ("sweep",):
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=True, help="scenario file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        s.add_argument("--threads", type=int, default=1, help="worker processes for sweep")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario)
        if args.seed is not None:
            sc = sc.replace(seed=_coerce("seed", args.seed, None))
        if args.command == "sweep":
            if sc.task is None:
                raise ParseError("sweep scenarios must declare a task", key="task")
            return run_sweep(sc, args.out, max(1, args.threads), argv)
        if args.command == "validate":
            sc = sc.replace(task="validate")
        elif sc.task is None:
            sc = sc.replace(task=args.command)
        elif sc.task != args.command:
            raise ParseError(f"scenario declares task {sc.task!r} but {args.command!r} was requested", key="task")
        return run(sc, args.out, argv)
    except (ParseError, ValidationError) as exc:
        print(f"nlbath: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"nlbath: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

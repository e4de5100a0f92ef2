import json
import math
from pathlib import Path

import numpy as np
import pytest

from nlbath.model import Envelope, build_grid, coupling1, coupling2, coupling3, random_structure

HERE = Path(__file__).parent
ROOT = HERE.parent
SCENARIOS = ROOT / "scenarios"

ANISO = [[1.0, 0.2, 0.0], [0.1, 0.8, 0.3], [0.0, 0.2, 1.2]]

LOR = Envelope("lorentzian", 1.0, 2.0, 0.5)
GAU = Envelope("gaussian", 0.5, 1.0, 0.3)
CON = Envelope("constant", 0.6, 0.0, 0.5, cutoff=2.0)


@pytest.fixture(scope="session")
def frozen():
    return json.loads((HERE / "oracles" / "frozen.json").read_text())


def family_set(n_points=48):
    """The three shipped envelope families with couplings of every order."""
    out = []
    for name, env, cut in (("lorentzian", LOR, 12.0), ("gaussian", GAU, GAU.band_limit()), ("constant", CON, 2.0)):
        c1 = coupling1(env, ANISO)
        c2 = coupling2(env, random_structure(2, 3))
        c3 = coupling3(env, random_structure(3, 4, 0.5))
        out.append((name, c1, c2, c3, build_grid("gl", n_points, cut)))
    return out


# ---------------------------------------------------------------------------
# acceptance summary

_ACCEPTANCE = {}


@pytest.fixture
def accept():
    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

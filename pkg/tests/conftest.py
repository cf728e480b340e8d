import functools

import numpy as np
import pytest

import tpwave.cli
import tpwave.control
from helpers import ACCEPTANCE, ACCEPTANCE_COUNT, CG_HISTORIES

# every CG history produced anywhere in the session feeds the monotonicity gate.
# Installed at import so test modules that import cg_solve get the wrapper.
_original_cg_solve = tpwave.control.cg_solve


@functools.wraps(_original_cg_solve)
def _recording_cg_solve(*args, **kwargs):
    try:
        u0, hist = _original_cg_solve(*args, **kwargs)
    except Exception as exc:
        if getattr(exc, "history", None) is not None:
            CG_HISTORIES.append(exc.history)
        raise
    CG_HISTORIES.append(hist)
    return u0, hist


tpwave.control.cg_solve = _recording_cg_solve
tpwave.cli.cg_solve = _recording_cg_solve


def pytest_collection_modifyitems(config, items):
    # the monotonicity criterion inspects every run, so it goes last
    last = [it for it in items if "monotone_functional" in it.name]
    items[:] = [it for it in items if it not in last] + last


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    if not any("test_acceptance" in str(r.nodeid) for rs in terminalreporter.stats.values()
               for r in rs if hasattr(r, "nodeid")):
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, ACCEPTANCE_COUNT + 1):
        passed, detail = ACCEPTANCE.get(k, (False, "not run"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

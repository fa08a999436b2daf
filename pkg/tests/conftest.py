import math

import numpy as np
import pytest

from transtab import models
from transtab.dynamics import IntegratorConfig

E = math.e


@pytest.fixture(scope="session")
def saddle():
    return models.saddle_field()


@pytest.fixture(scope="session")
def two_gen():
    """Single machine against the reference: P=0.5, D=0.5, E=(1,1), Y=1."""
    return models.classical_swing_field(models.SwingParams.single_machine(0.5, 0.5))


@pytest.fixture(scope="session")
def ne39_doc():
    doc, _ = models.load_params_file("ne39.json")
    return doc


@pytest.fixture(scope="session")
def ne39_x0(ne39_doc):
    eq = ne39_doc["equilibrium"]
    return np.concatenate([eq["delta"], eq["omega"]])


def ne39_field(D=0.5, fault=None):
    block = {"id": "network_swing", "file": "ne39.json", "overrides": {"D": D}}
    if fault:
        block["fault"] = fault
    return models.build_field(block)


@pytest.fixture
def cfg():
    return IntegratorConfig()


def rel_frob(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def ne39_post_fault(D, t_P=0.30, h=1e-2):
    """Post-fault field and state after isolating generator index 5 for ``t_P`` s."""
    vf = ne39_field(D)
    doc, _ = models.load_params_file("ne39.json")
    eq = doc["equilibrium"]
    sc = models.FaultScenario(vf, ne39_field(D, {"isolate": [5]}), vf, 0.0, t_P,
                              np.concatenate([eq["delta"], eq["omega"]]))
    _, x_P = models.fault_trajectory(sc, t_P, IntegratorConfig(h=h))
    return vf, x_P


ACCEPTANCE = []


def record_criterion(num, title, ok, detail=""):
    """Log one PASS/FAIL line and fail the calling test when ``ok`` is false."""
    line = f"[{num:>2}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append((num, line))
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

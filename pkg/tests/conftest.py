import numpy as np
import pytest

from dynmask import LoopSystems, TransferFunction, pole_placement_controller, shift_zeros, tf_to_ss

_ACCEPTANCE = []


@pytest.fixture
def plant_tf():
    return TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])


@pytest.fixture
def cipher_tf(plant_tf):
    return shift_zeros(plant_tf, 0.2)


@pytest.fixture
def controller(plant_tf):
    return pole_placement_controller(plant_tf)


@pytest.fixture
def masked(plant_tf, cipher_tf, controller):
    return LoopSystems(tf_to_ss(plant_tf), tf_to_ss(cipher_tf), controller)


@pytest.fixture
def unmasked(plant_tf, controller):
    return LoopSystems(tf_to_ss(plant_tf), tf_to_ss(plant_tf), controller)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")

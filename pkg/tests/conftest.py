import numpy as np
import pytest

from delayeso.model import NOMINAL_DC_DRIVE, REAL_DC_DRIVE, dc_drive_plant, dc_drive_truth
from delayeso.signals import constant_profile, dc_drive_torque_profile
from delayeso.sim import Setup, TruePlant

# Acceptance results collected by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def drive_setup(truth=REAL_DC_DRIVE, model=NOMINAL_DC_DRIVE, t_end=80.0, torque=None):
    """Real drive observed through the nominal model, 110 V input."""
    A, B, Dw = dc_drive_truth(truth)
    plant = dc_drive_plant(model)
    torque = dc_drive_torque_profile() if torque is None else torque
    return Setup(TruePlant(A, B, Dw, plant.C), plant, torque, constant_profile([110.0], t_end))


@pytest.fixture
def fig2_setup():
    return drive_setup()

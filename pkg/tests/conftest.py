import numpy as np
import pytest
import torch

CRITERIA = []  # (number, line) from the acceptance suite

from splatworld.synthworld import Complexity, make_camera_rig, synthesize


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_clips():
    """Three 16x16, 3-view, 7-frame clips."""
    clips, _ = synthesize(7, 3, n_views=3, n_frames=7, H=16, W=16)
    return clips


@pytest.fixture
def cam32():
    return make_camera_rig(1, 90, 32, 32)[0]


def static_complexity(**kw):
    base = dict(v_max=0.0, ego_speed=(0.0, 0.0), moving_prob=0.0)
    base.update(kw)
    return Complexity(**base)


@pytest.fixture
def criterion(capsys):
    """Report one acceptance criterion: prints a PASS/FAIL line and records it for the summary."""

    def report(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        CRITERIA.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models; minutes to tens of minutes on one CPU core")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA):
            terminalreporter.write_line(line)

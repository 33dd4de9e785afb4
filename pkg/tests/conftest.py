import numpy as np
import pytest

from pirnn.core import G
from pirnn.ground_motion import SynthesisConfig, build_dataset, synthesize_suite
from pirnn.integrators import IntegratorConfig
from pirnn.structural_models import BoucWenParams, boucwen_sdof


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiments")


@pytest.fixture(scope="session")
def tiny_sdof():
    """Six short hysteretic SDOF records (2 s at 50 Hz), split 4/2."""
    gms = synthesize_suite(6, SynthesisConfig(duration=2.0, dt=0.02, seed=3, amplitude=0.4 * G))
    model = boucwen_sdof(BoucWenParams(beta=62500.0, gamma=62500.0))
    return build_dataset(model, gms, IntegratorConfig(), split=(4, 2), seed=0)


@pytest.fixture
def tiny_arrays(tiny_sdof):
    ag, Y = tiny_sdof.arrays("train")
    agv, Yv = tiny_sdof.arrays("val")
    return ag, Y, agv, Yv


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict: ``criterion(n, ok, detail)``."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

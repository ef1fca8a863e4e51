import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mecopt.harness import draw_seeds
from mecopt.scenario import build_scenario, draw_channel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_instance(k: int = 4, request_bits: float = 20e3, seed: int = 0, csi_mode: str = "perfect", **compute):
    config = {"users_per_cell": k, "request_bits": request_bits}
    if compute:
        config["compute"] = compute
    layout_seed, channel_seed = draw_seeds(seed, 0)
    scn = build_scenario(config, seed=layout_seed)
    return scn, draw_channel(scn, seed=channel_seed, csi_mode=csi_mode)


@pytest.fixture(scope="session")
def instance4():
    return make_instance(4)


@pytest.fixture(scope="session")
def instances_by_k():
    return {k: make_instance(k, seed=10 + k) for k in (1, 2, 3, 4)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_line(name: str, passed: bool, detail: str) -> None:
    """Record and print one PASS/FAIL line for the acceptance summary."""
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

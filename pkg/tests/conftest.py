"""Shared fixtures: trained networks are built once per session."""

import numpy as np
import pytest

from dccm.dataset import GridSpec, generate_dataset
from dccm.dccm_trainer import DccmModel, TrainConfig, train_dccm
from dccm.system_model import make_cstr, scalar_unstable_plant

COARSE_CSTR_GRID = GridSpec(state_step=1 / 10, input_step=1 / 5, param_step=1 / 2)
SCALAR_GRID = GridSpec(state_step=0.1, input_step=0.5, param_step=1.0)


@pytest.fixture(scope="session")
def cstr():
    return make_cstr()


@pytest.fixture(scope="session")
def scalar_plant():
    return scalar_unstable_plant()


@pytest.fixture(scope="session")
def scalar_trained(scalar_plant):
    ds = generate_dataset(scalar_plant, SCALAR_GRID)
    cfg = TrainConfig(log_every=0)
    net, report = train_dccm(ds, cfg, seed=0)
    return ds, cfg, net, report


@pytest.fixture(scope="session")
def cstr_trained(cstr):
    ds = generate_dataset(cstr, COARSE_CSTR_GRID)
    cfg = TrainConfig(log_every=0)
    net, report = train_dccm(ds, cfg, seed=0)
    return ds, cfg, net, report


@pytest.fixture(scope="session")
def cstr_dccm(cstr_trained):
    return DccmModel(cstr_trained[2], 2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenario_traces(cstr_dccm):
    """Closed-loop traces for the three reactor scenarios (default seeds)."""
    from dccm.sim import ScenarioConfig, run_closed_loop
    cfgs = {
        "A": ScenarioConfig(r_true=(1.0,), r_star=(1.0,)),
        "B": ScenarioConfig(r_true=(1.0,), r_star=(3.0,)),
        "C": ScenarioConfig(r_true=(1.0,), r_star=(3.0,), learning_enabled=True, learning_start_step=10),
    }
    return {k: (cfg, run_closed_loop(cfg, cstr_dccm)) for k, cfg in cfgs.items()}


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])

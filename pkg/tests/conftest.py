import numpy as np
import pytest

import intent_rrs.channel.channel as channel
import intent_rrs.scenario.scenario as scenario


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run slow acceptance tests",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def catalog():
    return scenario.load_catalog()


@pytest.fixture
def small_scenario(catalog):
    return scenario.build_scenario(
        0,
        [
            (1, "Control case 2", 4),
            (3, "Robotic diagnosis", 4),
            (5, "VR gaming", 2),
        ],
        catalog,
        seed=7,
    )


@pytest.fixture
def small_grid(small_scenario):
    rng = np.random.default_rng(11)
    trajectories = channel.simulate_mobility(small_scenario, rng, steps=20)
    return channel.generate_se_grid(
        trajectories, channel.ChannelParams(), rng
    )


@pytest.fixture
def flat_grid(small_scenario):
    """Constant SE of 5 bits/s/Hz on every UE and RB."""
    values = np.full((20, small_scenario.ue_total, 135), 5.0, np.float32)
    return channel.SEGrid(values, {})

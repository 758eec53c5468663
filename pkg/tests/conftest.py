import pytest

from coopkitchen.env import KitchenEnv
from coopkitchen.layouts import BUNDLED_LAYOUTS, load_layout
from coopkitchen.motion import get_library

EXPERIMENT_LAYOUTS = (
    "cramped_room",
    "asymmetric_advantages",
    "coordination_ring",
    "forced_coordination",
    "counter_circuit",
)


@pytest.fixture(scope="session")
def layouts():
    return {name: load_layout(name) for name in BUNDLED_LAYOUTS}


@pytest.fixture(scope="session")
def envs(layouts):
    return {name: KitchenEnv(layouts[name]) for name in layouts}


@pytest.fixture(scope="session")
def micro_env(layouts):
    return KitchenEnv(layouts["micro"], cook_time=2)


@pytest.fixture(scope="session")
def libraries(layouts):
    return {name: get_library(layouts[name]) for name in layouts}

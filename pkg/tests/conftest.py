import pytest

from incentive_seeking.config import load_preset, resolve


@pytest.fixture(scope="session")
def static_cfg():
    return resolve(load_preset("mnpass_static"))


@pytest.fixture(scope="session")
def dynamic_cfg():
    return resolve(load_preset("mnpass_dynamic"))

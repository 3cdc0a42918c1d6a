import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geoshadow.geometry import example_system, quadratic_system
from geoshadow.symbolic import FastStateModel, ReducedMapParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def example():
    return example_system(mu=0.1)


@pytest.fixture(scope="session")
def quadratic():
    return quadratic_system(mu=0.1)


@pytest.fixture
def make_params(example):
    def build(eps=1e-2, eta=0.0, fields=None, lam=0.5, r=1.0, **kw):
        fs = example if fields is None else fields
        return ReducedMapParams(fs, FastStateModel.default(fs.n, r, lam), eps, eta, **kw)
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

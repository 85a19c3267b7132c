import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weaksup_pose.pipeline import DatasetSpec, make_dataset

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")

# property tests that back the invariant suite run at least this many cases
PROPERTY = settings(max_examples=200, deadline=None)


@pytest.fixture(scope="session")
def small_scenes():
    scenes, _ = make_dataset(DatasetSpec(8, seed=3))
    return scenes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, (criterion, passed, detail); echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, ok, detail in sorted(ACCEPTANCE):
            terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")

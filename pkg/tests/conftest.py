import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from metaxai import cli
from metaxai.fixture import write_fixture
from metaxai.meta_data import assemble_meta_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory):
    return write_fixture(tmp_path_factory.mktemp("fixture"))


@pytest.fixture(scope="session")
def fixture_data(fixture_paths):
    return assemble_meta_dataset(fixture_paths["stat_csv"], fixture_paths["eval_csv"], fixture_paths["config_csv"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_pipeline(fx: dict, out) -> float:
    """ingest -> train -> explain all with default settings; returns wall seconds."""
    t0 = time.perf_counter()
    assert cli.main(["--out", str(out), "ingest", "--stat", str(fx["stat_csv"]), "--eval", str(fx["eval_csv"]),
                     "--configs", str(fx["config_csv"])]) == 0
    assert cli.main(["--out", str(out), "train"]) == 0
    assert cli.main(["--out", str(out), "explain", "all"]) == 0
    return time.perf_counter() - t0


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory, fixture_paths, fixture_data):
    """One default-settings pipeline run on the 20-dataset fixture, shared by the slow tests."""
    root = tmp_path_factory.mktemp("e2e")
    seconds = run_pipeline(fixture_paths, root / "run1")
    return {"root": root, "fixture": fixture_paths, "run1": root / "run1", "seconds": seconds,
            "data": fixture_data}

import numpy as np
import pytest

from capcompress import pipeline
from capcompress.toydata import bundled_config_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    return pipeline.Config.load(bundled_config_path())


@pytest.fixture(scope="session")
def toy_data(toy_cfg):
    return pipeline.load_dataset(toy_cfg)


@pytest.fixture(scope="session")
def toy_baseline(toy_cfg, toy_data):
    """Baseline trained once per session on the bundled toy set."""
    model, losses, features = pipeline.train_baseline(toy_cfg, toy_data)
    return model, losses, features


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

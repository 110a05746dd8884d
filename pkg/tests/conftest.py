import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

VERDICTS = {}  # criterion number -> verdict line, filled by the acceptance tests


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY = {
    "synth": {"component_pool_per_class": 40, "single_positive_pool": 40, "single_negative_pool": 40,
              "train_cap_per_class": 16, "val_cap_per_class": 6, "augment_k": 1},
    "train": {"epochs": 1},
}


def run_tiny(out, config_path, seed=5):
    from pedk.cli import main

    code = main(["repro-all", "--config", str(config_path), "--out", str(out), "--seed", str(seed), "--workers", "1"])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory):
    import json

    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_config):
    """A complete miniature run directory shared by the CLI and acceptance tests."""
    return run_tiny(tmp_path_factory.mktemp("run") / "out", tiny_config)

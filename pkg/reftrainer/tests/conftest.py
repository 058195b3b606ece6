import json
import sys

import pytest

from reftrainer.demo import make_demo
from reftrainer.model import RefConfig, RefTrainer


@pytest.fixture
def demo_paths(tmp_path):
    config, scenario = make_demo(seed=1)
    config_path = tmp_path / "config.json"
    scenario_path = tmp_path / "scenario.json"
    config_path.write_text(json.dumps(config))
    scenario_path.write_text(json.dumps(scenario))
    return config_path, scenario_path


@pytest.fixture
def demo_trainer():
    config, _ = make_demo(seed=1)
    return RefTrainer(RefConfig.from_dict(config))


def server_command(config_path):
    return [sys.executable, "-m", "reftrainer", str(config_path)]

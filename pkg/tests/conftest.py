import pytest
import torch

from contexthoi.config import ModelConfig, RunConfig, SwitchConfig
from contexthoi.model import ContextHOI
from contexthoi.synthetic import SyntheticSpec, generate_synthetic

OBJECTS = ["cup", "dog", "bike"]
VERBS = ["hold", "ride", "walk", "feed"]
HOI_PAIRS = [(o, v) for o in range(3) for v in range(4)]


def make_model(switches: SwitchConfig | None = None, seed: int = 0, **overrides) -> ContextHOI:
    torch.manual_seed(seed)
    cfg = ModelConfig(**overrides)
    return ContextHOI(cfg, switches or SwitchConfig(), OBJECTS, VERBS, HOI_PAIRS)


@pytest.fixture
def model():
    return make_model()


@pytest.fixture(scope="session")
def tiny_data():
    return generate_synthetic(SyntheticSpec(num_images=8, seed=3))


@pytest.fixture
def desk_cfg(tmp_path):
    cfg = RunConfig.from_profile("desk")
    cfg.output_dir = str(tmp_path / "run")
    cfg.optim.epochs = 2
    return cfg


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in results:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

import numpy as np
import pytest

from cskd.config import DataSpec, OptimConfig, TrainConfig
from cskd.losses import LossConfig
from cskd.models import MLPSpec, ModelParams, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    """A 3-input, 4-class MLP with non-zero biases (keeps ReLU inputs off the kink)."""
    spec = MLPSpec(input_dim=3, n_classes=4, hidden=(6, 5))
    params = init_params(spec, seed=7)
    r = np.random.default_rng(99)
    for name, t in params.tensors.items():
        if name.endswith(".bias"):
            t.data[:] = r.uniform(0.1, 0.5, size=t.shape)
    return params


def rebind(params: ModelParams, tensors) -> ModelParams:
    """Same architecture, parameter tensors replaced in canonical order."""
    return ModelParams(params.spec, dict(zip(params.tensors, tensors)))


def tiny_config(**kw) -> TrainConfig:
    """Fast synthetic run used across harness and CLI tests."""
    base = dict(
        data=DataSpec(kind="synth", classes=4, per_class=20, n_samples=None, dim=2, spread=0.5, seed=3),
        model={"arch": "mlp", "hidden": [8, 6]},
        loss=LossConfig(kind="cskd"),
        optimizer=OptimConfig(lr0=0.05),
        lr_drops=(2,),
        epochs=3,
        batch_size=16,
        seed=5,
    )
    base.update(kw)
    return TrainConfig(**base)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

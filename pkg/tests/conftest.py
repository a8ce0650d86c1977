import numpy as np
import pytest

from config import ExperimentSpec, TrainConfig
from core.auction import AuctionConfig
from core.tensor import Tensor, backward


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run long acceptance checks')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    """Provide a seeded generator"""
    return np.random.default_rng(1234)


@pytest.fixture
def config_2x2() -> AuctionConfig:
    return AuctionConfig(2, 2)


@pytest.fixture
def config_2x3() -> AuctionConfig:
    return AuctionConfig(2, 3)


@pytest.fixture
def small_train_config() -> TrainConfig:
    """Tiny networks and short loops for fast tests"""
    return TrainConfig(
        iterations=3,
        batch_size=8,
        inner_steps=2,
        validation_inner_steps=2,
        validation_interval=2,
        validation_samples=8,
        checkpoint_interval=2,
        log_interval=1,
        dataset_size=32,
        hidden_layers=1,
        hidden_units=4,
        d_model=4,
        heads=2,
    )


@pytest.fixture
def small_spec(small_train_config, tmp_path) -> ExperimentSpec:
    return ExperimentSpec(setting='A', n=2, m=2, mechanism='canet',
                          output_dir=str(tmp_path), seed=7, train=small_train_config)


def numerical_gradient(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array"""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + eps
        plus = fn(x)
        x[idx] = original - eps
        minus = fn(x)
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradient(op, *arrays: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between backward() and finite differences for sum(op(*tensors) * weights)"""
    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*inputs)
    weights = np.random.default_rng(0).uniform(0.5, 1.5, size=out.shape)
    backward((out * weights).sum())
    worst = 0.0
    for i, tensor in enumerate(inputs):
        def scalar(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x)
            return float(np.sum(op(*args).data * weights))
        numeric = numerical_gradient(scalar, arrays[i].copy(), eps)
        worst = max(worst, relative_error(tensor.grad, numeric))
    return worst


@pytest.fixture
def gradcheck():
    return check_gradient


@pytest.fixture
def finite_diff():
    """(numerical_gradient, relative_error) helpers"""
    return numerical_gradient, relative_error

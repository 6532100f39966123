import numpy as np
import pytest

from hetfed.schemas import ExperimentConfig
from hetfed.zoo import Conv, Linear, MaxPool, ModelSpec, ReLU, build_extractor

FD_STEP = 1e-5


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numerical_gradient(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x``"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = f(x)
        flat[i] = original - step
        minus = f(x)
        flat[i] = original
        g[i] = (plus - minus) / (2 * step)
    return grad


# Entry-wise denominators never drop below this share of the largest entry
FLOOR_SHARE = 1e-3
MIN_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Worst entry-wise relative error ``|a - n| / max(|a| + |n|, floor)``. The
    floor keeps entries that are zero up to finite-difference round-off from
    dominating.
    """
    analytic = np.ravel(np.asarray(analytic, dtype=np.float64))
    numeric = np.ravel(np.asarray(numeric, dtype=np.float64))
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    floor = max(MIN_FLOOR, FLOOR_SHARE * float(np.max(np.abs(numeric))))
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def tiny_cnn(num_classes: int = 3, input_shape=(1, 6, 6)) -> ModelSpec:
    """A miniature client model with every layer type, for gradient checks"""
    layers = (
        Conv("conv1", 3, 2),
        ReLU("relu1"),
        MaxPool("pool1"),
        Linear("fc1", 4),
        ReLU("relu2"),
        Linear("fc2", num_classes),
    )
    return ModelSpec("tiny", tuple(input_shape), layers, num_classes)


def tiny_extractor(input_shape=(1, 6, 6)) -> ModelSpec:
    return build_extractor(tuple(input_shape), kernel=3, hidden=2)


def synthetic_config(**overrides) -> ExperimentConfig:
    base = dict(
        mode="pfedes",
        dataset="synthetic",
        synthetic_classes=4,
        synthetic_per_class=40,
        synthetic_shape=(1, 16, 16),
        synthetic_sigma=0.1,
        num_clients=4,
        rounds=2,
        classes_per_client=2,
        extractor_epochs=1,
        batch_size=16,
        seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)

import numpy as np

from .tensor import Tensor


def he_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """Zero-mean normal weights with variance ``2 / fan_in``."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(w.astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

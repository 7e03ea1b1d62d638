import numpy as np
import pytest

from robustbank.mlp import MlpParams


def flat_tensors(tensors):
    return np.concatenate([t.ravel() for t in tensors])


def set_tensors_from_vector(tensors, vec):
    offset = 0
    for t in tensors:
        t[...] = vec[offset : offset + t.size].reshape(t.shape)
        offset += t.size


def central_differences(loss_fn, params: MlpParams, h: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of loss_fn(params) over all trainable tensors."""
    tensors = params.trainable_tensors()
    base = flat_tensors(tensors)
    grad = np.zeros_like(base)
    for j in range(base.size):
        for sign, slot in ((+1.0, 0), (-1.0, 1)):
            vec = base.copy()
            vec[j] += sign * h
            set_tensors_from_vector(tensors, vec)
            if slot == 0:
                up = loss_fn(params)
            else:
                down = loss_fn(params)
        grad[j] = (up - down) / (2.0 * h)
    set_tensors_from_vector(tensors, base)
    return grad


def relative_errors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

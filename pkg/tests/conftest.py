import numpy as np
import pytest

from melharm import harmonics, spectro


@pytest.fixture(scope="session")
def bank():
    return spectro.build_mel_filterbank()


@pytest.fixture(scope="session")
def blinders(bank):
    return harmonics.build_all_blinders(bank)


@pytest.fixture(scope="session")
def stft_cfg():
    return spectro.StftConfig()


def numerical_gradient(f, x, eps=1e-5):
    """Central finite differences of a scalar function at array x (64-bit)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        hi = f(x)
        x[i] = orig - eps
        lo = f(x)
        x[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
        it.iternext()
    return grad


def relative_error(a, b, floor=1e-12):
    """Max difference normalized by the larger magnitude; `floor` keeps
    finite-difference noise on all-but-zero gradients from dominating."""
    denom = max(np.abs(a).max(), np.abs(b).max(), floor)
    return np.abs(a - b).max() / denom

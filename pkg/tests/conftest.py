"""
Pytest configuration and fixtures for cst-seld tests.
"""
import sys
from pathlib import Path

# Add src directory to path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from cst_seld.config import preset, run_config_from_mapping  # noqa: E402
from cst_seld.enums import Precision  # noqa: E402
from cst_seld.tensor import Tensor, default_precision  # noqa: E402


@pytest.fixture
def float64():
    """Run the test with float64 as the default tensor precision."""
    with default_precision(Precision.FLOAT64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_model():
    """One CST block, 8 channels, 16 mel bands, 50-frame windows."""
    return preset("micro", input_frames=50, mel_bands=16)


@pytest.fixture
def micro_run(tmp_path):
    """RunConfig around the micro model with paths under tmp_path."""
    return run_config_from_mapping(
        {
            "preset": "micro",
            "mel_bands": 16,
            "input_frames": 50,
            "epochs": 1,
            "batch_size": 2,
            "data_dir": str(tmp_path / "data"),
            "checkpoint_dir": str(tmp_path / "ckpt"),
            "report_dir": str(tmp_path / "reports"),
        }
    )


def numeric_gradient(fn, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the scalar ``fn(array)``."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = fn(array)
        flat[i] = saved - eps
        lo = fn(array)
        flat[i] = saved
        out[i] = (hi - lo) / (2 * eps)
    return grad


def check_gradient(build, *arrays: np.ndarray, atol: float = 1e-6, rtol: float = 1e-5) -> None:
    """
    Compare autodiff and finite-difference gradients.

    ``build`` maps float64 tensors to a scalar Tensor; every input array is
    checked in turn.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    for k, array in enumerate(arrays):

        def scalar(values, k=k):
            inputs = [Tensor(a) for a in arrays]
            inputs[k] = Tensor(values)
            return build(*inputs).item()

        expected = numeric_gradient(scalar, array.copy())
        np.testing.assert_allclose(tensors[k].grad, expected, atol=atol, rtol=rtol)


@pytest.fixture
def gradcheck(float64):
    return check_gradient


@pytest.fixture
def numgrad(float64):
    """Central differences of a scalar numpy function, for gradients that are not the forward's."""
    return numeric_gradient

"""
Shared test fixtures: project path, the slow marker and a central
finite-difference gradient checker
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src import diffcore as dc  # noqa: E402
from src.taxonomy.tree import Taxonomy  # noqa: E402

FD_STEP = 1e-5


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow directional experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def numeric_gradient(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar fn at x"""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fn(plus) - fn(minus)) / (2 * h)
    return grad


def check_gradient(build, x: np.ndarray, rtol: float = 1e-4, atol: float = 1e-7):
    """
    build(tensor) -> scalar Tensor. Compares backward() against central
    differences elementwise.
    """
    leaf = dc.tensor(x, requires_grad=True)
    out = build(leaf)
    dc.backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    numeric = numeric_gradient(lambda v: build(dc.tensor(v)).item(), x)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture
def small_taxonomy():
    """2-4-8 tree: level 2 class c sits under c // 2, level 3 class c under c // 2"""
    return Taxonomy(level_sizes=(2, 4, 8), parents=((0, 0, 1, 1), (0, 0, 1, 1, 2, 2, 3, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

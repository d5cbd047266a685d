# tests/conftest.py
import math
import shutil
import tempfile

import numpy as np
import pytest

from coupling import TrigPoly
from data_storage import DataStorage
from spectral import ComplexField, Grid2D


@pytest.fixture
def small_grid():
    """64×64，边长 8π"""
    return Grid2D(64, 8 * math.pi)


@pytest.fixture
def grid():
    """128×128，边长 8π"""
    return Grid2D(128, 8 * math.pi)


@pytest.fixture
def gaussian(grid):
    return ComplexField.gaussian(grid, amplitude=1.0, width=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def cos_spec():
    """g(y) = 1 + cos(y1)"""
    return TrigPoly.from_coeffs({(0, 0): 1.0, (1, 0): 0.5, (-1, 0): 0.5})


@pytest.fixture
def mean_zero_cos():
    """g(y) = cos(y1)"""
    return TrigPoly.from_coeffs({(1, 0): 0.5, (-1, 0): 0.5})


@pytest.fixture
def test_storage():
    """创建临时输出目录"""
    temp_dir = tempfile.mkdtemp()
    storage = DataStorage(temp_dir)

    yield storage

    # 测试结束后清理
    shutil.rmtree(temp_dir, ignore_errors=True)


def random_band_limited(grid, rng, max_mode=6, real=False):
    """系数只在 |j| ≤ max_mode 的模态上非零的随机场，sup 范数归一"""
    coefficients = np.zeros(grid.shape, dtype=np.complex128)
    size = 2 * max_mode + 1
    block = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    index = np.arange(-max_mode, max_mode + 1) % grid.points_per_axis
    coefficients[np.ix_(index, index)] = block
    values = np.fft.ifft2(coefficients) * grid.points_per_axis**2
    if real:
        values = values.real
    return ComplexField(grid, values / np.max(np.abs(values)))


@pytest.fixture
def band_limited(rng):
    """生成随机带限场的工厂"""

    def factory(grid, max_mode=6, real=False):
        return random_band_limited(grid, rng, max_mode, real)

    return factory

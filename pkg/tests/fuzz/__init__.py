import shutil
import tempfile

import numpy as np
from hypothesis import strategies as st

from data_storage import DataStorage
from spectral import ComplexField


class BaseFuzzTest:
    """模糊测试基础类，提供共享功能"""

    @staticmethod
    def setup_temp_storage():
        """创建临时输出目录环境"""
        temp_dir = tempfile.mkdtemp()
        return {"storage": DataStorage(temp_dir), "temp_dir": temp_dir}

    @staticmethod
    def cleanup_temp_storage(env):
        """清理临时输出目录环境"""
        shutil.rmtree(env["temp_dir"], ignore_errors=True)

    @staticmethod
    def band_limited_field(grid, seed, max_mode=6):
        """由种子生成的随机带限场，只在 |j| ≤ max_mode 的模态上有系数"""
        rng = np.random.default_rng(seed)
        coefficients = np.zeros(grid.shape, dtype=np.complex128)
        size = 2 * max_mode + 1
        block = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
        index = np.arange(-max_mode, max_mode + 1) % grid.points_per_axis
        coefficients[np.ix_(index, index)] = block
        values = np.fft.ifft2(coefficients) * grid.points_per_axis**2
        return ComplexField(grid, values / np.max(np.abs(values)))


@st.composite
def trig_poly_payloads(draw, max_mode=4, max_terms=5):
    """满足厄米对称、零频非负的三角多项式 JSON 负载"""
    half_plane = st.tuples(
        st.integers(min_value=0, max_value=max_mode),
        st.integers(min_value=-max_mode, max_value=max_mode),
    ).filter(lambda k: k[0] > 0 or k[1] > 0)
    coefficient = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False, allow_infinity=False)
    chosen = draw(st.dictionaries(half_plane, st.tuples(coefficient, coefficient), max_size=max_terms))

    terms = [{"k": [0, 0], "re": draw(st.floats(min_value=0.0, max_value=3.0))}]
    for (k1, k2), (re, im) in sorted(chosen.items()):
        terms.append({"k": [k1, k2], "re": re, "im": im})
        terms.append({"k": [-k1, -k2], "re": re, "im": -im})
    return {"kind": "trig_poly", "terms": terms}

import math

import hypothesis
import numpy as np
from hypothesis import strategies as st

from spectral import (
    Grid2D,
    bernstein_ratio,
    forward_transform,
    free_propagator,
    helmholtz_product_identity_residual,
    inverse_transform,
    lp_norm,
    lp_project_high,
    lp_project_low,
)

from . import BaseFuzzTest

GRID = Grid2D(64, 8 * math.pi)
seeds = st.integers(min_value=0, max_value=2**32 - 1)
cutoffs = st.floats(min_value=1.0, max_value=4.0, allow_nan=False)


class TestSpectralFuzz(BaseFuzzTest):
    """模糊测试谱方法基础运算的恒等式"""

    @hypothesis.given(seed=seeds, max_mode=st.integers(min_value=0, max_value=20))
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_transform_round_trip(self, seed, max_mode):
        """正变换后再逆变换回到原场"""
        field = self.band_limited_field(GRID, seed, max_mode)
        restored = inverse_transform(forward_transform(field), GRID)
        assert np.max(np.abs(restored.values - field.values)) <= 1e-12

    @hypothesis.given(first=seeds, second=seeds)
    @hypothesis.settings(max_examples=50, deadline=None)
    def test_product_identity(self, first, second):
        """无混叠的场对上乘积恒等式成立"""
        F = self.band_limited_field(GRID, first)
        G = self.band_limited_field(GRID, second)
        assert helmholtz_product_identity_residual(F, G) <= 1e-10

    @hypothesis.given(seed=seeds, cutoff=cutoffs)
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_partition_of_unity(self, seed, cutoff):
        """低频与高频投影之和恢复原场"""
        field = self.band_limited_field(GRID, seed, max_mode=12)
        total = lp_project_low(field, cutoff) + lp_project_high(field, cutoff)
        assert np.max(np.abs(total.values - field.values)) <= 1e-12

    @hypothesis.given(seed=seeds, cutoff=cutoffs)
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_bernstein_bounded(self, seed, cutoff):
        """L² → L⁴ 的 Bernstein 比值不超过 1"""
        field = self.band_limited_field(GRID, seed, max_mode=12)
        assert bernstein_ratio(field, cutoff, 2, 4) <= 1.0

    @hypothesis.given(seed=seeds, t=st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_free_propagator_is_unitary(self, seed, t):
        """自由传播保持 L² 范数"""
        field = self.band_limited_field(GRID, seed)
        assert math.isclose(lp_norm(free_propagator(field, t), 2), lp_norm(field, 2), rel_tol=1e-12)

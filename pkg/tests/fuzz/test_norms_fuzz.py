import math

import hypothesis
import numpy as np
from hypothesis import strategies as st

from norms import STRICHARTZ_PAIRS, mixed_norm, spacetime_l4_diff, strichartz_norm
from solver import Trajectory
from spectral import Grid2D

from . import BaseFuzzTest

GRID = Grid2D(32, 4 * math.pi)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestNormsFuzz(BaseFuzzTest):
    """模糊测试时空混合范数的范数公理"""

    def random_trajectory(self, seed, count=4):
        fields = [self.band_limited_field(GRID, seed + i, max_mode=4) for i in range(count)]
        return Trajectory.from_fields(fields, np.arange(count) * 0.1)

    @hypothesis.given(
        seed=seeds,
        modulus=st.floats(min_value=0.0, max_value=100.0, allow_nan=False),
        phase=st.floats(min_value=0.0, max_value=2 * math.pi, allow_nan=False),
    )
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_homogeneity(self, seed, modulus, phase):
        """‖cu‖ = |c|·‖u‖"""
        traj = self.random_trajectory(seed)
        scaled = traj.scaled(modulus * complex(math.cos(phase), math.sin(phase)))
        for pair in STRICHARTZ_PAIRS:
            expected = modulus * mixed_norm(traj, pair)
            assert math.isclose(mixed_norm(scaled, pair), expected, rel_tol=1e-10, abs_tol=1e-12)

    @hypothesis.given(first=seeds, second=seeds, third=seeds)
    @hypothesis.settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, first, second, third):
        """L⁴ 时空差满足三角不等式且对称"""
        a, b, c = (self.random_trajectory(seed) for seed in (first, second, third))
        assert spacetime_l4_diff(a, c) <= spacetime_l4_diff(a, b) + spacetime_l4_diff(b, c) + 1e-12
        assert math.isclose(spacetime_l4_diff(a, b), spacetime_l4_diff(b, a), rel_tol=1e-14)

    @hypothesis.given(seed=seeds)
    @hypothesis.settings(max_examples=50, deadline=None)
    def test_strichartz_is_maximum(self, seed):
        """Strichartz 范数是各容许对混合范数的最大值"""
        traj = self.random_trajectory(seed)
        values = [mixed_norm(traj, pair) for pair in STRICHARTZ_PAIRS]
        assert strichartz_norm(traj) == max(values)
        assert all(value > 0 for value in values)

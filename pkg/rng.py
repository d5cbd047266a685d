"""
基于计数器的随机数模块

每个格点的取值是 (seed, trial, k1, k2) 的纯函数：对键逐段做 SplitMix64
混合，不依赖调用顺序，因此并行求值与串行求值结果逐位一致。
"""

import numpy as np

_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_UNIT = 2.0**-53


def _as_uint64(values) -> np.ndarray:
    array = np.asarray(values)
    if array.dtype == np.uint64:
        return array
    return array.astype(np.int64).view(np.uint64)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 终结函数"""
    with np.errstate(over="ignore"):
        z = z + _GOLDEN_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


class SiteRandom:
    """以格点坐标为计数器的 64 位随机源

    Args:
        seed: 64 位种子（可为负数，按补码解释）
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _mix64(np.asarray(self.seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))

    def bits(self, trial, k1, k2) -> np.ndarray:
        trial, k1, k2 = np.broadcast_arrays(
            _as_uint64(trial), _as_uint64(k1), _as_uint64(k2)
        )
        state = _mix64(self._key ^ trial)
        state = _mix64(state ^ k1)
        return _mix64(state ^ k2)

    def uniform(self, trial, k1, k2) -> np.ndarray:
        """[0, 1) 上的均匀分布，53 位精度"""
        return (self.bits(trial, k1, k2) >> np.uint64(11)).astype(np.float64) * _UNIT

"""
时空范数模块

在存储时刻上计算混合范数 L^q_t L^r_x（空间 Riemann 和，时间梯形公式）、
有限容许对集合上的 Strichartz 范数，以及 Duhamel 误差泛函
w(t) = ∫₀ᵗ e^{i(t-s)Δ}[(g(n·)-ḡ)|u|²u](s) ds 的 L⁴ 时空范数。
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from coupling import check_nyquist, evaluate, mean_value
from solver import Trajectory

logger = logging.getLogger(__name__)

ADMISSIBLE_TOLERANCE = 1e-12
PROVENANCE_TOLERANCE = 1e-12
REFINEMENT_WARNING = 0.05
_SERIES_THRESHOLD = 1e-2


class SamplingMismatchError(ValueError):
    """两条轨迹的网格或时刻不一致"""


class ProvenanceError(ValueError):
    """轨迹不是以常数耦合 ḡ 积分得到的"""


@dataclass(frozen=True)
class AdmissiblePair:
    """Schrödinger 容许对 1/q + 1/r = 1/2，端点 (2, ∞) 除外"""

    q: float
    r: float

    def __post_init__(self):
        if not (self.q >= 2 and self.r >= 2):
            raise ValueError(f"容许对要求 q, r ≥ 2: ({self.q}, {self.r})")
        if abs(1 / self.q + 1 / self.r - 0.5) > ADMISSIBLE_TOLERANCE:
            raise ValueError(f"({self.q}, {self.r}) 不满足 1/q + 1/r = 1/2")
        if self.q == 2 and math.isinf(self.r):
            raise ValueError("二维端点 (2, ∞) 不是容许对")

    @property
    def label(self) -> str:
        def fmt(value: float) -> str:
            return "inf" if math.isinf(value) else f"{value:g}"

        return f"({fmt(self.q)},{fmt(self.r)})"


STRICHARTZ_PAIRS: Tuple[AdmissiblePair, ...] = (
    AdmissiblePair(math.inf, 2.0),
    AdmissiblePair(8.0, 8.0 / 3.0),
    AdmissiblePair(6.0, 3.0),
    AdmissiblePair(4.0, 4.0),
    AdmissiblePair(3.0, 6.0),
    AdmissiblePair(8.0 / 3.0, 8.0),
)
L4_PAIR = AdmissiblePair(4.0, 4.0)


def _spatial_norms(values: np.ndarray, spacing: float, r: float) -> np.ndarray:
    modulus = np.abs(values)
    if math.isinf(r):
        return modulus.max(axis=(1, 2))
    return (np.sum(modulus**r, axis=(1, 2)) * spacing**2) ** (1.0 / r)


def _temporal_norm(profile: np.ndarray, step: float, q: float) -> float:
    if math.isinf(q):
        return float(np.max(profile))
    if len(profile) < 2:
        raise ValueError("有限 q 的时间求积至少需要两个时刻")
    return float(trapezoid(profile**q, dx=step) ** (1.0 / q))


def _mixed_norm_values(values: np.ndarray, step: float, spacing: float, pair: AdmissiblePair) -> float:
    return _temporal_norm(_spatial_norms(values, spacing, pair.r), step, pair.q)


def mixed_norm(traj: Trajectory, pair: AdmissiblePair) -> float:
    """‖u‖_{L^q_t L^r_x}"""
    if not isinstance(pair, AdmissiblePair):
        pair = AdmissiblePair(*pair)
    return _mixed_norm_values(traj.values, traj.spacing, traj.grid.spacing, pair)


def strichartz_norm(traj: Trajectory, pairs: Iterable[AdmissiblePair] = STRICHARTZ_PAIRS) -> float:
    """固定容许对集合上混合范数的最大值"""
    return max(mixed_norm(traj, pair) for pair in pairs)


def _check_sampling(a: Trajectory, b: Trajectory):
    if a.grid != b.grid:
        raise SamplingMismatchError(f"网格不一致: {a.grid} vs {b.grid}")
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise SamplingMismatchError("存储时刻不一致")


def spacetime_l4_diff(a: Trajectory, b: Trajectory) -> float:
    """‖a - b‖_{L⁴_{t,x}}

    Raises:
        SamplingMismatchError: 网格或时刻不一致
    """
    _check_sampling(a, b)
    return _mixed_norm_values(a.values - b.values, a.spacing, a.grid.spacing, L4_PAIR)


@dataclass(frozen=True)
class NormReport:
    l4_spacetime: float
    mixed: Dict[AdmissiblePair, float]
    mass_initial: float
    mass_final: float

    @property
    def strichartz(self) -> float:
        return max(self.mixed.values())

    def to_dict(self) -> dict:
        return {
            "l4_spacetime": self.l4_spacetime,
            "strichartz": self.strichartz,
            "mixed": {pair.label: value for pair, value in self.mixed.items()},
            "mass_initial": self.mass_initial,
            "mass_final": self.mass_final,
        }


def norm_report(traj: Trajectory, pairs: Iterable[AdmissiblePair] = STRICHARTZ_PAIRS) -> NormReport:
    mixed = {pair: mixed_norm(traj, pair) for pair in pairs}
    masses = _spatial_norms(traj.values[[0, -1]], traj.grid.spacing, 2.0) ** 2
    return NormReport(
        l4_spacetime=mixed[L4_PAIR] if L4_PAIR in mixed else mixed_norm(traj, L4_PAIR),
        mixed=mixed,
        mass_initial=float(masses[0]),
        mass_final=float(masses[1]),
    )


def quadrature_refinement(traj: Trajectory, pair: AdmissiblePair = L4_PAIR) -> float:
    """隔一个时刻抽样后范数的相对变化，作为时间求积的收敛指示"""
    fine = mixed_norm(traj, pair)
    coarse = mixed_norm(traj.subsampled(2), pair)
    if fine == 0:
        return 0.0 if coarse == 0 else math.inf
    return abs(fine - coarse) / fine


def _filon_weights(omega: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """对线性插值的被积函数精确积分 e^{-iω(τ-s)} 的权重

    z = -iωτ，φ₁ = (e^z-1)/z，φ₂ = (e^z-1-z)/z²；
    左端点权重 τ(φ₁-φ₂)，右端点权重 τφ₂。
    """
    theta = -omega * step
    z = 1j * theta
    em1 = -2.0 * np.sin(theta / 2) ** 2 + 1j * np.sin(theta)
    small = np.abs(theta) < _SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    phi1 = np.where(small, 0, em1 / safe)
    phi2 = np.where(small, 0, (em1 - z) / safe**2)
    zs = z[small]
    phi1[small] = 1 + zs / 2 + zs**2 / 6 + zs**3 / 24 + zs**4 / 120 + zs**5 / 720
    phi2[small] = 0.5 + zs / 6 + zs**2 / 24 + zs**3 / 120 + zs**4 / 720 + zs**5 / 5040
    return step * (phi1 - phi2), step * phi2


def _check_provenance(spec, traj: Trajectory):
    cfg = traj.config
    if cfg is None:
        raise ProvenanceError("轨迹缺少积分配置，无法确认是均化解")
    g_bar = mean_value(spec)
    deviation = float(np.max(np.abs(cfg.coupling - g_bar)))
    if deviation > PROVENANCE_TOLERANCE * max(1.0, abs(g_bar)):
        raise ProvenanceError(f"轨迹的耦合场偏离 ḡ={g_bar:.6g} 达 {deviation:.3e}")


def duhamel_error(
    spec,
    n: int,
    u_traj: Trajectory,
    method: str = "trapezoid",
    strict_provenance: bool = True,
) -> float:
    """Duhamel 误差泛函的 L⁴_{t,x} 范数

    递推 w_{m+1} = e^{iΔτ}w_m + (在 [t_m, t_{m+1}] 上对被积函数的求积)，τ 为存储间隔。

    Args:
        spec: 耦合规格
        n: 振荡尺度
        u_traj: 以 g ≡ ḡ 积分得到的均化解
        method: "trapezoid" 为梯形公式；"filon" 对传播子精确积分、被积函数线性插值
        strict_provenance: 是否核对 u_traj 的耦合场

    Raises:
        ProvenanceError: u_traj 不是均化解
        NyquistError: g(n·) 无法在网格上分辨
    """
    if method not in ("trapezoid", "filon"):
        raise ValueError(f"未知的求积方法: {method!r}")
    if strict_provenance:
        _check_provenance(spec, u_traj)
    grid = u_traj.grid
    check_nyquist(spec, n, grid)
    if len(u_traj) < 2:
        raise ValueError("Duhamel 误差至少需要两个时刻")

    deviation = evaluate(spec, n, grid).values.real - mean_value(spec)
    step = u_traj.spacing
    omega = grid.wavenumber_norm_sq
    propagator = np.exp(-1j * step * omega)
    if method == "filon":
        left, right = _filon_weights(omega, step)
    else:
        left, right = 0.5 * step * propagator, np.full(omega.shape, 0.5 * step)

    def integrand(values: np.ndarray) -> np.ndarray:
        return sfft.fft2(deviation * np.abs(values) ** 2 * values)

    spacing = grid.spacing
    l4_profile = np.zeros(len(u_traj))
    state = np.zeros(grid.shape, dtype=np.complex128)
    previous = integrand(u_traj.values[0])
    for index in range(1, len(u_traj)):
        current = integrand(u_traj.values[index])
        state = propagator * state + left * previous + right * current
        w = sfft.ifft2(state)
        l4_profile[index] = (np.sum(np.abs(w) ** 4) * spacing**2) ** 0.25
        previous = current
    return _temporal_norm(l4_profile, step, 4.0)


def duhamel_refinement(
    spec, n: int, u_traj: Trajectory, method: str = "trapezoid", strict_provenance: bool = True
) -> float:
    """存储间隔加倍后 Duhamel 误差的相对变化，超过 5% 时记录警告"""
    fine = duhamel_error(spec, n, u_traj, method, strict_provenance)
    coarse = duhamel_error(spec, n, u_traj.subsampled(2), method, strict_provenance)
    if fine == 0:
        return 0.0 if coarse == 0 else math.inf
    change = abs(fine - coarse) / fine
    if change > REFINEMENT_WARNING:
        logger.warning("n=%d 时 Duhamel 误差对存储间隔敏感: 相对变化 %.2f%%", n, 100 * change)
    return change

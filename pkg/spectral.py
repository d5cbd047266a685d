"""
谱方法基础模块，负责周期网格、傅里叶变换与对角乘子
包含 Littlewood-Paley 投影、自由传播子以及若干调和分析性质检验

变换约定：系数相对物理原点定义，平面波 e^{ik·x}（k 在网格上）对应单位系数。
系数数组一律采用 FFT 顺序（与 Grid2D.wavevectors 对齐）。
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """两个对象不在同一网格上"""


class NyquistError(ValueError):
    """频率超出网格可分辨范围"""


class BandwidthError(ValueError):
    """输入带宽过高，乘积会产生混叠"""


@dataclass(frozen=True)
class Grid2D:
    """周期正方形计算区域 [-L/2, L/2)^2

    Args:
        points_per_axis: 每个方向的采样点数 N_g，必须是不小于 8 的 2 的幂
        side_length: 区域边长 L
    """

    points_per_axis: int = 256
    side_length: float = 16 * math.pi

    def __post_init__(self):
        count = self.points_per_axis
        if (
            isinstance(count, bool)
            or not isinstance(count, (int, np.integer))
            or count < 8
            or count & (count - 1)
        ):
            raise ValueError(f"每轴点数必须是不小于8的2的幂: {count!r}")
        length = float(self.side_length)
        if not math.isfinite(length) or length <= 0:
            raise ValueError(f"区域边长必须为正数: {self.side_length!r}")
        object.__setattr__(self, "points_per_axis", int(count))
        object.__setattr__(self, "side_length", length)

    @property
    def spacing(self) -> float:
        return self.side_length / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.points_per_axis, self.points_per_axis)

    @property
    def nyquist(self) -> float:
        """可分辨的最大波数 π·N_g/L"""
        return math.pi * self.points_per_axis / self.side_length

    @cached_property
    def mode_indices(self) -> np.ndarray:
        """FFT 顺序下的整数模态编号 j"""
        count = self.points_per_axis
        return np.rint(np.fft.fftfreq(count) * count).astype(np.int64)

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        """FFT 顺序下的单轴波数 2πj/L"""
        return 2 * math.pi * self.mode_indices / self.side_length

    @property
    def wavenumbers(self) -> np.ndarray:
        """升序排列的单轴波数，j 从 -N_g/2 到 N_g/2-1"""
        return np.sort(self.axis_wavenumbers)

    @cached_property
    def coordinates(self) -> np.ndarray:
        return -self.side_length / 2 + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """物理空间坐标 (x1, x2)，第0维对应 x1"""
        return tuple(np.meshgrid(self.coordinates, self.coordinates, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        x1, x2 = self.mesh
        return np.hypot(x1, x2)

    @cached_property
    def wavevectors(self) -> Tuple[np.ndarray, np.ndarray]:
        return tuple(
            np.meshgrid(self.axis_wavenumbers, self.axis_wavenumbers, indexing="ij")
        )

    @cached_property
    def wavenumber_norm_sq(self) -> np.ndarray:
        k1, k2 = self.wavevectors
        return k1**2 + k2**2

    @cached_property
    def origin_phase(self) -> np.ndarray:
        # 原点位于 -L/2，相位因子 e^{iξL/2} 恰为 (-1)^{j1+j2}
        j1, j2 = np.meshgrid(self.mode_indices, self.mode_indices, indexing="ij")
        return np.where((j1 + j2) % 2 == 0, 1.0, -1.0)

    def check_nyquist(self, frequency: float, context: str = ""):
        """Nyquist 保护：要求 frequency < π·N_g/L（严格）

        Raises:
            NyquistError: 频率达到或超过 Nyquist 波数
        """
        if not frequency < self.nyquist:
            raise NyquistError(
                f"{context}频率 {frequency:.6g} 不低于 Nyquist 波数 {self.nyquist:.6g}"
            )

    def mode_index(self, k: Sequence[float]) -> Tuple[int, int]:
        """波矢 k 在系数数组中的位置"""
        scale = self.side_length / (2 * math.pi)
        index = []
        for component in k:
            j = scale * float(component)
            if abs(j - round(j)) > 1e-9:
                raise ValueError(f"波矢 {tuple(k)} 不在网格上")
            index.append(int(round(j)) % self.points_per_axis)
        return tuple(index)

    def companion(self, n: int) -> "Grid2D":
        """边长缩小 n 倍、点数相同的伴随网格"""
        return Grid2D(self.points_per_axis, self.side_length / n)

    def describe(self) -> dict:
        return {"N_g": self.points_per_axis, "L": self.side_length}


def _frozen_array(values, grid: Grid2D, label: str) -> np.ndarray:
    array = np.array(values, dtype=np.complex128)
    if array.shape != grid.shape:
        raise ValueError(f"{label}形状 {array.shape} 与网格 {grid.shape} 不符")
    if not np.isfinite(array).all():
        raise ValueError(f"{label}包含 NaN 或 Inf")
    array.flags.writeable = False
    return array


def _require_same_grid(first: Grid2D, second: Grid2D):
    if first != second:
        raise GridMismatchError(f"网格不一致: {first} 与 {second}")


@dataclass(frozen=True, eq=False)
class ComplexField:
    """网格上的复值采样，构造后不可变

    Args:
        grid: 所在网格
        values: N_g×N_g 复数数组，按物理空间行优先存放
    """

    grid: Grid2D
    values: np.ndarray

    # numpy 标量参与运算时回退到本类的反射方法
    __array_ufunc__ = None

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, self.grid, "场值"))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    @classmethod
    def constant(cls, grid: Grid2D, value: complex) -> "ComplexField":
        return cls(grid, np.full(grid.shape, value, dtype=np.complex128))

    @classmethod
    def from_function(
        cls, grid: Grid2D, func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ) -> "ComplexField":
        x1, x2 = grid.mesh
        return cls(grid, np.broadcast_to(func(x1, x2), grid.shape))

    @classmethod
    def plane_wave(
        cls, grid: Grid2D, k: Sequence[float], amplitude: complex = 1.0
    ) -> "ComplexField":
        """A·e^{ik·x}，受 Nyquist 保护"""
        k1, k2 = float(k[0]), float(k[1])
        grid.check_nyquist(math.hypot(k1, k2), "平面波")
        x1, x2 = grid.mesh
        return cls(grid, amplitude * np.exp(1j * (k1 * x1 + k2 * x2)))

    @classmethod
    def gaussian(
        cls,
        grid: Grid2D,
        amplitude: float = 1.0,
        width: float = 1.0,
        center: Sequence[float] = (0.0, 0.0),
    ) -> "ComplexField":
        """A·exp(-|x-x0|²/(2w²))"""
        x1, x2 = grid.mesh
        r_sq = (x1 - center[0]) ** 2 + (x2 - center[1]) ** 2
        return cls(grid, amplitude * np.exp(-r_sq / (2 * width**2)))

    def _combine(self, other, operation) -> "ComplexField":
        if isinstance(other, ComplexField):
            _require_same_grid(self.grid, other.grid)
            return ComplexField(self.grid, operation(self.values, other.values))
        if np.isscalar(other):
            return ComplexField(self.grid, operation(self.values, other))
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, np.add)

    def __radd__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    def __rmul__(self, other):
        return self._combine(other, np.multiply)

    def __truediv__(self, other):
        if not np.isscalar(other):
            return NotImplemented
        return ComplexField(self.grid, self.values / other)

    def __neg__(self):
        return ComplexField(self.grid, -self.values)

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def shifted(self, steps: Tuple[int, int]) -> "ComplexField":
        """按整数网格步平移"""
        return ComplexField(self.grid, np.roll(self.values, steps, axis=(0, 1)))


@dataclass(frozen=True, eq=False)
class SpectralDiagonal:
    """对角傅里叶乘子，采样值与 FFT 顺序的波矢对齐"""

    grid: Grid2D
    values: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self):
        object.__setattr__(
            self, "values", _frozen_array(self.values, self.grid, "乘子")
        )

    @classmethod
    def constant(cls, grid: Grid2D, value: complex) -> "SpectralDiagonal":
        return cls(grid, np.full(grid.shape, value, dtype=np.complex128))

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.values.imag == 0))

    def __mul__(self, other):
        if isinstance(other, SpectralDiagonal):
            _require_same_grid(self.grid, other.grid)
            return SpectralDiagonal(self.grid, self.values * other.values)
        if np.isscalar(other):
            return SpectralDiagonal(self.grid, self.values * other)
        return NotImplemented

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, SpectralDiagonal):
            _require_same_grid(self.grid, other.grid)
            return SpectralDiagonal(self.grid, self.values + other.values)
        return NotImplemented

    def __rsub__(self, other):
        if np.isscalar(other):
            return SpectralDiagonal(self.grid, other - self.values)
        return NotImplemented


def _smooth_step(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    positive = t > 0
    out[positive] = np.exp(-1.0 / t[positive])
    return out


def lp_bump(r) -> np.ndarray:
    """Littlewood-Paley 径向截断 m(r)

    r ≤ 1 时恰为 1，r ≥ 2 时恰为 0，中间为 C^∞ 过渡
    m(r) = ψ(2-r) / (ψ(2-r) + ψ(r-1))，ψ(t) = exp(-1/t)（t > 0）。
    """
    r = np.asarray(r, dtype=float)
    inner = _smooth_step(2.0 - r)
    outer = _smooth_step(r - 1.0)
    return inner / (inner + outer)


def _check_cutoff(cutoff: float):
    if not cutoff > 0:
        raise ValueError(f"截断频率 N 必须为正: {cutoff!r}")


def helmholtz_symbol(grid: Grid2D) -> SpectralDiagonal:
    return SpectralDiagonal(grid, 1.0 / (grid.wavenumber_norm_sq + 1.0))


def laplacian_symbol(grid: Grid2D) -> SpectralDiagonal:
    return SpectralDiagonal(grid, -grid.wavenumber_norm_sq)


def lp_low_symbol(grid: Grid2D, cutoff: float) -> SpectralDiagonal:
    _check_cutoff(cutoff)
    return SpectralDiagonal(grid, lp_bump(np.sqrt(grid.wavenumber_norm_sq) / cutoff))


def lp_high_symbol(grid: Grid2D, cutoff: float) -> SpectralDiagonal:
    return 1.0 - lp_low_symbol(grid, cutoff)


def propagator_symbol(grid: Grid2D, t: float) -> SpectralDiagonal:
    """e^{itΔ} 的符号 e^{-it|ξ|²}"""
    return SpectralDiagonal(grid, np.exp(-1j * t * grid.wavenumber_norm_sq))


def gradient_symbols(grid: Grid2D) -> Tuple[SpectralDiagonal, SpectralDiagonal]:
    """iξ1, iξ2；奇数阶导数在 Nyquist 模态上置零"""
    k1, k2 = grid.wavevectors
    nyquist_index = -grid.points_per_axis // 2
    j1, j2 = np.meshgrid(grid.mode_indices, grid.mode_indices, indexing="ij")
    s1 = np.where(j1 == nyquist_index, 0.0, 1j * k1)
    s2 = np.where(j2 == nyquist_index, 0.0, 1j * k2)
    return SpectralDiagonal(grid, s1), SpectralDiagonal(grid, s2)


def forward_transform(f: ComplexField) -> np.ndarray:
    """正变换，平面波映射为单位系数"""
    count = f.grid.points_per_axis
    return sfft.fft2(f.values) * (f.grid.origin_phase / count**2)


def inverse_transform(coefficients: np.ndarray, grid: Grid2D) -> ComplexField:
    count = grid.points_per_axis
    return ComplexField(grid, sfft.ifft2(coefficients * grid.origin_phase) * count**2)


def apply_multiplier(f: ComplexField, multiplier: SpectralDiagonal) -> ComplexField:
    """invT(M ⊙ T(f))

    Raises:
        GridMismatchError: 场与乘子不在同一网格
    """
    _require_same_grid(f.grid, multiplier.grid)
    return ComplexField(f.grid, sfft.ifft2(multiplier.values * sfft.fft2(f.values)))


def inv_helmholtz(f: ComplexField) -> ComplexField:
    return apply_multiplier(f, helmholtz_symbol(f.grid))


def gradient(f: ComplexField) -> Tuple[ComplexField, ComplexField]:
    s1, s2 = gradient_symbols(f.grid)
    return apply_multiplier(f, s1), apply_multiplier(f, s2)


def gradient_modulus(f: ComplexField) -> np.ndarray:
    d1, d2 = gradient(f)
    return np.sqrt(np.abs(d1.values) ** 2 + np.abs(d2.values) ** 2)


def lp_project_low(f: ComplexField, cutoff: float) -> ComplexField:
    return apply_multiplier(f, lp_low_symbol(f.grid, cutoff))


def lp_project_high(f: ComplexField, cutoff: float) -> ComplexField:
    return apply_multiplier(f, lp_high_symbol(f.grid, cutoff))


def lp_project_band(f: ComplexField, cutoff: float) -> ComplexField:
    """二进环带投影 P_N = P_{≤N} - P_{≤N/2}"""
    symbol = lp_low_symbol(f.grid, cutoff).values - lp_low_symbol(f.grid, cutoff / 2).values
    return apply_multiplier(f, SpectralDiagonal(f.grid, symbol))


def free_propagator(f: ComplexField, t: float) -> ComplexField:
    return apply_multiplier(f, propagator_symbol(f.grid, t))


def lp_norm_values(values: np.ndarray, spacing: float, p: float) -> float:
    """离散 Lᵖ 范数，Riemann 权重 spacing²；p = ∞ 取最大值"""
    modulus = np.abs(values)
    if math.isinf(p):
        return float(np.max(modulus))
    return float((np.sum(modulus**p) * spacing**2) ** (1.0 / p))


def lp_norm(f: ComplexField, p: float) -> float:
    return lp_norm_values(f.values, f.grid.spacing, p)


def mass(f: ComplexField) -> float:
    """质量 ∫|f|²"""
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.spacing**2)


def _support_extent(f: ComplexField, tolerance: float) -> Tuple[float, float]:
    coefficients = np.abs(forward_transform(f))
    peak = coefficients.max()
    if peak == 0:
        return 0.0, 0.0
    k1, k2 = f.grid.wavevectors
    support = coefficients > tolerance * peak
    return float(np.max(np.abs(k1[support]))), float(np.max(np.abs(k2[support])))


def helmholtz_product_identity_residual(
    F: ComplexField, G: ComplexField, tolerance: float = 1e-13
) -> float:
    """乘积恒等式的残差

    (-Δ+1)^{-1}(FG) 与 F·H + (-Δ+1)^{-1}(ΔF·H) + 2(-Δ+1)^{-1}(∇F·∇H)
    之差的最大模，其中 H = (-Δ+1)^{-1}G。

    Args:
        F: 第一个因子
        G: 第二个因子
        tolerance: 判定频谱支撑的相对阈值

    Returns:
        残差的 sup 范数

    Raises:
        BandwidthError: 任一输入的频谱达到 Nyquist/2
    """
    _require_same_grid(F.grid, G.grid)
    limit = F.grid.nyquist / 2
    for label, field in (("F", F), ("G", G)):
        extent = max(_support_extent(field, tolerance))
        if extent >= limit:
            raise BandwidthError(
                f"{label} 的带宽 {extent:.6g} 不低于 Nyquist/2 = {limit:.6g}，乘积会混叠"
            )

    H = inv_helmholtz(G)
    lhs = inv_helmholtz(F * G)
    dF1, dF2 = gradient(F)
    dH1, dH2 = gradient(H)
    laplace_F = apply_multiplier(F, laplacian_symbol(F.grid))
    rhs = (
        F * H
        + inv_helmholtz(laplace_F * H)
        + 2 * inv_helmholtz(dF1 * dH1 + dF2 * dH2)
    )
    return (lhs - rhs).sup_norm()


def _check_exponents(p: float, q: float):
    if not (1 <= p <= q <= math.inf):
        raise ValueError(f"要求 1 ≤ p ≤ q ≤ ∞，收到 p={p}, q={q}")


def bernstein_ratio(f: ComplexField, cutoff: float, p: float, q: float) -> float:
    """‖P_{≤N}f‖_q / (N^{2/p-2/q}‖f‖_p)"""
    _check_exponents(p, q)
    _check_cutoff(cutoff)
    denominator = cutoff ** (2 / p - 2 / q) * lp_norm(f, p)
    if denominator == 0:
        return 0.0
    return lp_norm(lp_project_low(f, cutoff), q) / denominator


def bernstein_gradient_ratio(f: ComplexField, cutoff: float, p: float) -> float:
    """‖∇P_N f‖_p / (N‖P_N f‖_p)，环带上的导数 Bernstein 比值"""
    _check_exponents(p, p)
    _check_cutoff(cutoff)
    band = lp_project_band(f, cutoff)
    denominator = cutoff * lp_norm(band, p)
    if denominator == 0:
        return 0.0
    return lp_norm_values(gradient_modulus(band), f.grid.spacing, p) / denominator


def sample_coefficients(
    coefficients: np.ndarray, grid: Grid2D, points: np.ndarray
) -> np.ndarray:
    """在任意点处求三角插值 Σ c_ξ e^{iξ·x}，只累加非零系数"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    support = coefficients != 0
    k1, k2 = grid.wavevectors
    phase = np.outer(points[:, 0], k1[support]) + np.outer(points[:, 1], k2[support])
    return np.exp(1j * phase) @ coefficients[support]


def sample_at(f: ComplexField, points: np.ndarray) -> np.ndarray:
    return sample_coefficients(forward_transform(f), f.grid, points)


def lp_decay_check(
    f: ComplexField,
    support_radius: float,
    cutoff: float,
    p: float,
    c: float,
    sample_points: np.ndarray,
) -> float:
    """支撑外 P_{≤N}f 的归一化衰减泛函

    返回 max |P_{≤N}f(x)|·((|x|-R_s)N)^c / (N^{2/p}‖f‖_p)，
    采样点须满足 2R_s < |x| ≤ L/2 - R_s。

    Raises:
        ValueError: N·R_s ≤ 1 或采样点违反环绕保护
    """
    _check_cutoff(cutoff)
    if cutoff * support_radius <= 1:
        raise ValueError(f"要求 N·R_s > 1，收到 {cutoff * support_radius:.6g}")
    points = np.atleast_2d(np.asarray(sample_points, dtype=float))
    radii = np.hypot(points[:, 0], points[:, 1])
    upper = f.grid.side_length / 2 - support_radius
    bad = (radii <= 2 * support_radius) | (radii > upper)
    if bad.any():
        raise ValueError(
            f"采样点须满足 {2 * support_radius:.6g} < |x| ≤ {upper:.6g}，"
            f"违规点 {points[bad][0].tolist()}"
        )

    outside = f.grid.radius > support_radius
    peak = f.sup_norm()
    if outside.any() and peak > 0:
        tail = float(np.max(np.abs(f.values[outside])))
        if tail > 1e-13 * peak:
            logger.warning("场在支撑半径外的尾部 %.3e 超过 1e-13 相对阈值", tail / peak)

    norm = lp_norm(f, p)
    if norm == 0:
        return 0.0
    coefficients = forward_transform(f) * lp_low_symbol(f.grid, cutoff).values
    projected = np.abs(sample_coefficients(coefficients, f.grid, points))
    weights = ((radii - support_radius) * cutoff) ** c
    return float(np.max(projected * weights)) / (cutoff ** (2 / p) * norm)

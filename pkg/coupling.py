"""
耦合函数模块，负责构造、校验与求值非线性项前的系数 g

支持五类规格：三角多项式、拟周期函数、采样周期函数、合金型随机势以及凸组合。
规格以 pydantic 模型表示，JSON 序列化时用 kind 字段区分类型。
"""

import hashlib
import json
import logging
import math
from functools import cached_property, lru_cache
from typing import Annotated, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
from scipy import integrate, special

from rng import SiteRandom
from spectral import ComplexField, Grid2D

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-12
MODE_TOLERANCE = 1e-12
TRUNCATION_TAIL = 1e-10
MAX_ALLOY_CUTOFF = 12.0


class _SpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrigTerm(_SpecModel):
    """单个傅里叶项 c_k e^{ik·y}"""

    k: Tuple[int, ...]
    re: float
    im: float = 0.0

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


def _collect_hermitian(terms: Sequence[TrigTerm], dimension: int) -> Dict[tuple, complex]:
    coefficients: Dict[tuple, complex] = {}
    for term in terms:
        if len(term.k) != dimension:
            raise ValueError(f"频率 {term.k} 的维数应为 {dimension}")
        if term.k in coefficients:
            raise ValueError(f"频率 {term.k} 重复出现")
        if not (math.isfinite(term.re) and math.isfinite(term.im)):
            raise ValueError(f"频率 {term.k} 的系数不是有限数")
        coefficients[term.k] = term.value

    for k, value in coefficients.items():
        partner = coefficients.get(tuple(-x for x in k), 0j)
        if abs(partner - value.conjugate()) > HERMITIAN_TOLERANCE:
            raise ValueError(f"系数不满足厄米对称: c{k}={value}, c_(-k)={partner}")

    zero = coefficients.get((0,) * dimension, 0j)
    if zero.imag != 0 or zero.real < 0:
        raise ValueError(f"零频系数必须为非负实数: {zero}")
    return coefficients


class TrigPoly(_SpecModel):
    """g(y) = Σ c_k e^{ik·y}，k ∈ ℤ²"""

    kind: Literal["trig_poly"] = "trig_poly"
    terms: List[TrigTerm]

    @model_validator(mode="after")
    def _validate(self):
        _collect_hermitian(self.terms, 2)
        return self

    @classmethod
    def from_coeffs(cls, coeffs: Dict[Tuple[int, int], complex]) -> "TrigPoly":
        terms = [
            TrigTerm(k=tuple(k), re=complex(c).real, im=complex(c).imag)
            for k, c in coeffs.items()
        ]
        return cls(terms=terms)

    @cached_property
    def coefficients(self) -> Dict[tuple, complex]:
        return _collect_hermitian(self.terms, 2)


class QuasiPeriodic(_SpecModel):
    """g(y) = G(Ay)，G 是 d 维环面上的三角多项式，A 为 d×2 矩阵"""

    kind: Literal["quasi_periodic"] = "quasi_periodic"
    terms: List[TrigTerm]
    matrix: List[List[float]]

    @model_validator(mode="after")
    def _validate(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != 2 or matrix.shape[0] < 1:
            raise ValueError(f"矩阵 A 必须为 d×2，收到形状 {matrix.shape}")
        if not np.isfinite(matrix).all():
            raise ValueError("矩阵 A 包含非有限数")
        coefficients = _collect_hermitian(self.terms, matrix.shape[0])
        for k in coefficients:
            if any(k) and np.linalg.norm(np.asarray(k) @ matrix) <= HERMITIAN_TOLERANCE:
                raise ValueError(f"频率 {k} 满足 k·A = 0，A 的行在 ℤ 上线性相关")
        return self

    @cached_property
    def coefficients(self) -> Dict[tuple, complex]:
        return _collect_hermitian(self.terms, len(self.matrix))

    def frequencies(self) -> Tuple[np.ndarray, np.ndarray]:
        """平面频率 kA 与对应系数"""
        matrix = np.asarray(self.matrix, dtype=float)
        keys = list(self.coefficients)
        freqs = np.array([np.asarray(k, dtype=float) @ matrix for k in keys])
        return freqs.reshape(-1, 2), np.array([self.coefficients[k] for k in keys])


class PeriodicSampled(_SpecModel):
    """[0, P)² 上的 M×M 实值采样，按三角插值延拓为周期函数"""

    kind: Literal["periodic_sampled"] = "periodic_sampled"
    samples: List[List[float]]
    period: float = 2 * math.pi

    @model_validator(mode="after")
    def _validate(self):
        array = np.asarray(self.samples, dtype=float)
        if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] < 2:
            raise ValueError(f"采样必须是 M×M 方阵，收到形状 {array.shape}")
        if not np.isfinite(array).all():
            raise ValueError("采样包含非有限数")
        if not self.period > 0:
            raise ValueError(f"周期必须为正: {self.period}")
        if array.mean() < -1e-12 * max(1.0, float(np.abs(array).max())):
            raise ValueError(f"采样均值 {array.mean():.6g} 为负")
        return self

    @classmethod
    def from_csv(cls, file_path: str, period: float = 2 * math.pi) -> "PeriodicSampled":
        """从 CSV 读取环面采样，每行对应一个 y1 取值"""
        samples = np.loadtxt(file_path, delimiter=",", ndmin=2)
        return cls(samples=samples.tolist(), period=period)

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float)

    @cached_property
    def modes(self) -> Tuple[np.ndarray, np.ndarray]:
        """显著傅里叶模态的频率 (K, 2) 与系数 (K,)"""
        size = self.array.shape[0]
        coefficients = np.fft.fft2(self.array) / size**2
        index = np.rint(np.fft.fftfreq(size) * size)
        m1, m2 = np.meshgrid(index, index, indexing="ij")
        keep = np.abs(coefficients) > MODE_TOLERANCE * np.abs(coefficients).max()
        scale = 2 * math.pi / self.period
        freqs = scale * np.stack([m1[keep], m2[keep]], axis=1)
        return freqs, coefficients[keep]


class BumpEnvelope(_SpecModel):
    """合金势的单格点剖面 φ

    profile 为 "bump" 时 φ(x) = a·exp(1 - 1/(1-(|x|/ρ)²))（|x| < ρ），
    为 "algebraic" 时 φ(x) = a·⟨x⟩^{-(2+ε)}。
    声明的包络为 |φ(x)| ≤ C⟨x⟩^{-(2+ε)}。
    """

    profile: Literal["bump", "algebraic"] = "bump"
    radius: float = Field(default=0.5, gt=0)
    amplitude: float = 1.0
    decay_exponent: float = Field(default=1.0, gt=0)
    envelope_constant: Optional[float] = None

    @model_validator(mode="after")
    def _validate(self):
        if not math.isfinite(self.amplitude):
            raise ValueError("剖面幅值必须是有限数")
        constant = self.declared_constant
        r = np.linspace(0.0, max(4 * self.radius, 50.0), 4001)
        envelope = constant * (1 + r**2) ** (-(2 + self.decay_exponent) / 2)
        if np.any(np.abs(self.profile_values(r)) > envelope * (1 + 1e-9)):
            raise ValueError(f"剖面超出声明的包络 C={constant}, ε={self.decay_exponent}")
        return self

    @property
    def declared_constant(self) -> float:
        if self.envelope_constant is not None:
            return self.envelope_constant
        if self.profile == "bump":
            return abs(self.amplitude) * (1 + self.radius**2) ** ((2 + self.decay_exponent) / 2)
        return abs(self.amplitude)

    def profile_values(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.profile == "algebraic":
            return self.amplitude * (1 + r**2) ** (-(2 + self.decay_exponent) / 2)
        s = r / self.radius
        out = np.zeros_like(r)
        inside = s < 1
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def cutoff_radius(self) -> float:
        """格点求和的截断半径，尾部贡献低于 1e-10"""
        if self.profile == "bump":
            return self.radius
        epsilon = self.decay_exponent
        radius = (2 * math.pi * self.declared_constant / (epsilon * TRUNCATION_TAIL)) ** (
            1 / epsilon
        )
        if radius > MAX_ALLOY_CUTOFF:
            logger.warning(
                "截断半径 %.3g 超过上限 %.3g，尾部误差约 %.3e",
                radius,
                MAX_ALLOY_CUTOFF,
                2 * math.pi * self.declared_constant * MAX_ALLOY_CUTOFF**-epsilon / epsilon,
            )
            return MAX_ALLOY_CUTOFF
        return radius

    def spectral_extent(self) -> float:
        """单位尺度下剖面的有效最高频率 4π/ρ"""
        scale = self.radius if self.profile == "bump" else 1.0
        return 4 * math.pi / scale

    def integral(self) -> float:
        """∫φ"""
        if self.profile == "algebraic":
            return 2 * math.pi * self.amplitude / self.decay_exponent
        return _bump_integral(self.radius, self.amplitude)

    def fourier(self, xi) -> np.ndarray:
        """径向傅里叶变换 φ̂(ξ) = ∫φ(x)e^{-iξ·x}dx，按 |ξ| 求值"""
        xi = np.abs(np.asarray(xi, dtype=float))
        if self.profile == "algebraic":
            order = self.decay_exponent / 2
            out = np.full(xi.shape, 2 * math.pi * self.amplitude / self.decay_exponent)
            positive = xi > 0
            z = xi[positive]
            out[positive] = (
                2 * math.pi * self.amplitude
                * z**order * special.kv(order, z)
                / (2**order * special.gamma(order + 1))
            )
            return out
        flat = [_bump_fourier(self.radius, self.amplitude, float(v)) for v in xi.ravel()]
        return np.asarray(flat).reshape(xi.shape)


def _unit_bump(s: float) -> float:
    return math.exp(1.0 - 1.0 / (1.0 - s * s)) if s < 1 else 0.0


@lru_cache(maxsize=None)
def _bump_integral(radius: float, amplitude: float) -> float:
    value, _ = integrate.quad(lambda s: _unit_bump(s) * s, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return 2 * math.pi * amplitude * radius**2 * value


@lru_cache(maxsize=4096)
def _bump_fourier(radius: float, amplitude: float, xi: float) -> float:
    value, _ = integrate.quad(
        lambda s: _unit_bump(s) * special.j0(xi * radius * s) * s,
        0.0,
        1.0,
        limit=200,
        epsabs=1e-15,
        epsrel=1e-12,
    )
    return 2 * math.pi * amplitude * radius**2 * value


class BernoulliLaw(_SpecModel):
    """两点分布：以概率 p_high 取 high，否则取 low"""

    kind: Literal["bernoulli"] = "bernoulli"
    low: float = -1.0
    high: float = 1.0
    p_high: float = Field(default=0.5, ge=0, le=1)

    @model_validator(mode="after")
    def _validate(self):
        if self.low > self.high:
            raise ValueError("要求 low ≤ high")
        if self.mean < -1e-12:
            raise ValueError(f"分布均值 {self.mean:.6g} 为负")
        return self

    @property
    def mean(self) -> float:
        return self.p_high * self.high + (1 - self.p_high) * self.low

    @property
    def variance(self) -> float:
        p = self.p_high
        return p * (1 - p) * (self.high - self.low) ** 2

    @property
    def central_fourth_moment(self) -> float:
        p = self.p_high
        return p * (1 - p) * (self.high - self.low) ** 4 * ((1 - p) ** 3 + p**3)

    @property
    def bound(self) -> float:
        return max(abs(self.low), abs(self.high))

    def draw(self, uniform: np.ndarray) -> np.ndarray:
        return np.where(uniform < self.p_high, self.high, self.low)

    def shifted(self, offset: float) -> "BernoulliLaw":
        return BernoulliLaw(low=self.low + offset, high=self.high + offset, p_high=self.p_high)


class UniformLaw(_SpecModel):
    """[low, high] 上的均匀分布"""

    kind: Literal["uniform"] = "uniform"
    low: float
    high: float

    @model_validator(mode="after")
    def _validate(self):
        if not self.low < self.high:
            raise ValueError("要求 low < high")
        if self.mean < -1e-12:
            raise ValueError(f"分布均值 {self.mean:.6g} 为负")
        return self

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2

    @property
    def variance(self) -> float:
        return (self.high - self.low) ** 2 / 12

    @property
    def central_fourth_moment(self) -> float:
        return (self.high - self.low) ** 4 / 80

    @property
    def bound(self) -> float:
        return max(abs(self.low), abs(self.high))

    def draw(self, uniform: np.ndarray) -> np.ndarray:
        return self.low + (self.high - self.low) * uniform

    def shifted(self, offset: float) -> "UniformLaw":
        return UniformLaw(low=self.low + offset, high=self.high + offset)


SiteLaw = Annotated[Union[BernoulliLaw, UniformLaw], Field(discriminator="kind")]


class Alloy(_SpecModel):
    """合金型随机势 g(y) = Σ_k X_k φ(y - k)，X_k 独立同分布"""

    kind: Literal["alloy"] = "alloy"
    bump: BumpEnvelope = BumpEnvelope()
    law: SiteLaw = BernoulliLaw()
    seed: int = Field(default=0, ge=-(2**63), le=2**64 - 1)

    def site_values(self, trial, k1, k2) -> np.ndarray:
        return self.law.draw(SiteRandom(self.seed).uniform(trial, k1, k2))

    def with_seed(self, seed: int) -> "Alloy":
        return self.model_copy(update={"seed": seed})


class ConvexTerm(_SpecModel):
    weight: float = Field(ge=0)
    spec: "CouplingSpec"


class Convex(_SpecModel):
    """凸组合 Σ w_i g_i，权重非负且和为 1"""

    kind: Literal["convex"] = "convex"
    terms: List[ConvexTerm]

    @model_validator(mode="after")
    def _validate(self):
        if not self.terms:
            raise ValueError("凸组合至少需要一项")
        total = math.fsum(term.weight for term in self.terms)
        if abs(total - 1.0) > 1e-15:
            raise ValueError(f"权重之和为 {total!r}，应为 1")
        return self


CouplingSpec = Annotated[
    Union[TrigPoly, QuasiPeriodic, PeriodicSampled, Alloy, Convex],
    Field(discriminator="kind"),
]
ConvexTerm.model_rebuild()
Convex.model_rebuild()

_SPEC_ADAPTER = TypeAdapter(CouplingSpec)


class LatticeBox(NamedTuple):
    """格点区域 [k1_min, k1_max] × [k2_min, k2_max]（闭区间）"""

    k1_min: int
    k1_max: int
    k2_min: int
    k2_max: int


def coupling_from_json(text: str):
    return _SPEC_ADAPTER.validate_json(text)


def coupling_from_dict(payload: dict):
    return _SPEC_ADAPTER.validate_python(payload)


def coupling_to_json(spec) -> str:
    return _SPEC_ADAPTER.dump_json(spec).decode("utf-8")


def spec_id(spec) -> str:
    """规格的短哈希标识"""
    canonical = json.dumps(_SPEC_ADAPTER.dump_python(spec, mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def max_frequency(spec) -> float:
    """规格在单位尺度下的最高频率"""
    if isinstance(spec, TrigPoly):
        support = [math.hypot(*k) for k, c in spec.coefficients.items() if c != 0]
        return max(support, default=0.0)
    if isinstance(spec, QuasiPeriodic):
        freqs, _ = spec.frequencies()
        return float(np.max(np.hypot(freqs[:, 0], freqs[:, 1]))) if len(freqs) else 0.0
    if isinstance(spec, PeriodicSampled):
        freqs, _ = spec.modes
        return float(np.max(np.hypot(freqs[:, 0], freqs[:, 1]))) if len(freqs) else 0.0
    if isinstance(spec, Alloy):
        return spec.bump.spectral_extent()
    if isinstance(spec, Convex):
        return max(max_frequency(term.spec) for term in spec.terms)
    raise TypeError(f"未知的耦合规格类型: {type(spec).__name__}")


def check_nyquist(spec, n: int, grid: Grid2D):
    grid.check_nyquist(n * max_frequency(spec), f"g({n}x) ")


def _check_scale(n: int):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"尺度 n 必须是正整数: {n!r}")


def mode_sum(freqs: np.ndarray, coefficients: np.ndarray, n: int, grid: Grid2D) -> np.ndarray:
    """Σ c_t e^{in f_t·x}，按坐标轴可分离地求值"""
    if len(coefficients) == 0:
        return np.zeros(grid.shape)
    x = grid.coordinates
    e1 = np.exp(1j * n * np.outer(freqs[:, 0], x)) * coefficients[:, None]
    e2 = np.exp(1j * n * np.outer(freqs[:, 1], x))
    return e1.T @ e2


def alloy_lattice_period(n: int, side_length: float) -> Optional[int]:
    """n·L 为整数时格点在环面上周期闭合，返回周期；否则返回 None"""
    extent = n * side_length
    period = round(extent)
    if period > 0 and abs(extent - period) <= 1e-9:
        return int(period)
    return None


def alloy_field(spec: Alloy, n: int, grid: Grid2D, trial: int = 0) -> np.ndarray:
    """合金势 g(n·) 在网格上的实值采样"""
    bump = spec.bump
    cutoff = bump.cutoff_radius()
    reach = int(math.ceil(cutoff))
    x1, x2 = grid.mesh
    y1, y2 = n * x1, n * x2
    base1, base2 = np.floor(y1), np.floor(y2)
    period = alloy_lattice_period(n, grid.side_length)
    if period is None:
        logger.warning("n·L=%.6g 非整数，合金势在环面接缝处不连续", n * grid.side_length)
    source = SiteRandom(spec.seed)

    total = np.zeros(grid.shape)
    for d1 in range(-reach, reach + 2):
        for d2 in range(-reach, reach + 2):
            k1 = base1 + d1
            k2 = base2 + d2
            distance = np.hypot(y1 - k1, y2 - k2)
            inside = distance < cutoff
            if not inside.any():
                continue
            s1 = k1[inside].astype(np.int64)
            s2 = k2[inside].astype(np.int64)
            if period is not None:
                s1 = (s1 + period // 2) % period - period // 2
                s2 = (s2 + period // 2) % period - period // 2
            draws = spec.law.draw(source.uniform(trial, s1, s2))
            total[inside] += draws * bump.profile_values(distance[inside])
    return total


def evaluate(spec, n: int, grid: Grid2D) -> ComplexField:
    """在网格上采样 g(n·x)

    Args:
        spec: 耦合规格
        n: 振荡尺度，正整数
        grid: 计算网格

    Returns:
        实值 ComplexField

    Raises:
        NyquistError: n 倍最高频率超出网格分辨能力
    """
    _check_scale(n)
    check_nyquist(spec, n, grid)
    if isinstance(spec, TrigPoly):
        keys = list(spec.coefficients)
        freqs = np.asarray(keys, dtype=float).reshape(-1, 2)
        coefficients = np.array([spec.coefficients[k] for k in keys])
        values = mode_sum(freqs, coefficients, n, grid)
        imaginary = float(np.max(np.abs(values.imag)))
        if imaginary > 1e-12 * max(1.0, float(np.max(np.abs(values.real)))):
            logger.warning("三角多项式求值的虚部 %.3e 超出容差", imaginary)
        return ComplexField(grid, values.real)
    if isinstance(spec, QuasiPeriodic):
        freqs, coefficients = spec.frequencies()
        return ComplexField(grid, mode_sum(freqs, coefficients, n, grid).real)
    if isinstance(spec, PeriodicSampled):
        freqs, coefficients = spec.modes
        # 对实采样取实部即得到对称分配 Nyquist 模态后的实插值
        return ComplexField(grid, mode_sum(freqs, coefficients, n, grid).real)
    if isinstance(spec, Alloy):
        return ComplexField(grid, alloy_field(spec, n, grid))
    if isinstance(spec, Convex):
        total = np.zeros(grid.shape)
        for term in spec.terms:
            total = total + term.weight * evaluate(term.spec, n, grid).real
        return ComplexField(grid, total)
    raise TypeError(f"未知的耦合规格类型: {type(spec).__name__}")


def mean_value(spec) -> float:
    """均化常数 ḡ"""
    if isinstance(spec, TrigPoly):
        return spec.coefficients.get((0, 0), 0j).real
    if isinstance(spec, QuasiPeriodic):
        return spec.coefficients.get((0,) * len(spec.matrix), 0j).real
    if isinstance(spec, PeriodicSampled):
        return float(spec.array.mean())
    if isinstance(spec, Alloy):
        return spec.law.mean * spec.bump.integral()
    if isinstance(spec, Convex):
        return math.fsum(term.weight * mean_value(term.spec) for term in spec.terms)
    raise TypeError(f"未知的耦合规格类型: {type(spec).__name__}")


def sample_alloy(spec: Alloy, region: LatticeBox, trial: int = 0) -> np.ndarray:
    """在格点区域上抽取 X_k，返回形状 (k1 个数, k2 个数) 的数组"""
    if region.k1_max < region.k1_min or region.k2_max < region.k2_min:
        raise ValueError(f"格点区域为空: {region}")
    k1 = np.arange(region.k1_min, region.k1_max + 1, dtype=np.int64)
    k2 = np.arange(region.k2_min, region.k2_max + 1, dtype=np.int64)
    s1, s2 = np.meshgrid(k1, k2, indexing="ij")
    return spec.site_values(trial, s1, s2)


def convex_combine(terms: Sequence[Tuple[float, object]]) -> Convex:
    """由 (权重, 规格) 序列构造凸组合"""
    return Convex(terms=[ConvexTerm(weight=w, spec=s) for w, s in terms])


def alloy_split(spec: Alloy) -> Tuple[Alloy, Alloy]:
    """拆分为均值为零的涨落部分与周期部分 g = g1 + g2"""
    mu = spec.law.mean
    fluctuation = spec.model_copy(update={"law": spec.law.shifted(-mu)})
    periodic = spec.model_copy(update={"law": BernoulliLaw(low=mu, high=mu)})
    return fluctuation, periodic


def alloy_sup_bound(spec: Alloy, lattice_radius: int = 64) -> float:
    """sup|X|·C·Σ⟨k⟩^{-(2+ε)}，含截断尾部的积分估计"""
    exponent = 2 + spec.bump.decay_exponent
    k = np.arange(-lattice_radius, lattice_radius + 1, dtype=float)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    lattice_sum = np.sum((1 + k1**2 + k2**2) ** (-exponent / 2))
    tail = 2 * math.pi * lattice_radius ** (-spec.bump.decay_exponent) / spec.bump.decay_exponent
    return spec.law.bound * spec.bump.declared_constant * (lattice_sum + tail)


def reseed(spec, seed: int):
    """把规格中所有合金项的种子替换为 seed"""
    if isinstance(spec, Alloy):
        return spec.with_seed(seed)
    if isinstance(spec, Convex):
        terms = [ConvexTerm(weight=t.weight, spec=reseed(t.spec, seed)) for t in spec.terms]
        return Convex(terms=terms)
    return spec

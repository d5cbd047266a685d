"""
非共振条件模块

度量 (-Δ+1)^{-1}(g(n·)-ḡ) 及其梯度在球内和全环面上的 sup 范数，
拟合关于 n 的衰减速率，并对合金型随机势做四阶矩的 Monte-Carlo 估计。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from coupling import (
    Alloy,
    Convex,
    PeriodicSampled,
    QuasiPeriodic,
    TrigPoly,
    alloy_field,
    alloy_lattice_period,
    alloy_split,
    evaluate,
    mean_value,
    max_frequency,
    mode_sum,
    spec_id,
)
from spectral import (
    ComplexField,
    Grid2D,
    apply_multiplier,
    gradient_modulus,
    helmholtz_symbol,
    inv_helmholtz,
    lp_low_symbol,
)

logger = logging.getLogger(__name__)

MIN_TRIALS = 100
ALLOY_SIDE_LENGTH = 8.0
QUADRATIC_SLOPE_RANGE = (-2.3, -1.7)
TRIAL_CHUNK = 50


@dataclass(frozen=True)
class ResonanceEntry:
    n: int
    sup_value: float
    grad_sup_value: float


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    residual: float


@dataclass(frozen=True)
class ResonanceReport:
    """一组 n 上的共振量测结果

    Args:
        spec_id: 耦合规格的短哈希
        ball_radius: 取 sup 的球半径 R
        entries: 按 n 升序排列的 (n, sup, grad_sup)
        fit: sup 值的对数-对数拟合，无法拟合时为 None
        global_sup: 全环面上 |h_n| 的最大值（对所有 n 取最大）
        global_grad_sup: 全环面上 |∇h_n| 的最大值
        uniform_bound: uniform_bound_check 在同一组 n 上的最坏比值
    """

    spec_id: str
    ball_radius: float
    entries: Tuple[ResonanceEntry, ...]
    fit: Optional[DecayFit]
    global_sup: float
    global_grad_sup: float
    uniform_bound: Optional[float] = None

    def __post_init__(self):
        ns = [entry.n for entry in self.entries]
        if ns != sorted(set(ns)):
            raise ValueError(f"n 必须严格升序且互不相同: {ns}")
        for entry in self.entries:
            if entry.sup_value < 0 or entry.grad_sup_value < 0:
                raise ValueError(f"n={entry.n} 的 sup 值为负")

    def rows(self) -> List[list]:
        return [[e.n, e.sup_value, e.grad_sup_value] for e in self.entries]

    def verdicts(self) -> dict:
        """界检验结论：sup 是否严格递减、拟合斜率是否为负、是否落在 n^{-2} 区间"""
        sups = [e.sup_value for e in self.entries]
        slope = self.fit.slope if self.fit is not None else None
        low, high = QUADRATIC_SLOPE_RANGE
        return {
            "strictly_decreasing": all(a > b for a, b in zip(sups, sups[1:])),
            "decays": slope is not None and slope < 0,
            "quadratic_rate": slope is not None and low < slope < high,
        }

    def summary(self) -> dict:
        fit = None
        if self.fit is not None:
            fit = {
                "slope": self.fit.slope,
                "intercept": self.fit.intercept,
                "residual": self.fit.residual,
            }
        return {
            "spec_id": self.spec_id,
            "ball_radius": self.ball_radius,
            "fit": fit,
            "global_sup": self.global_sup,
            "global_grad_sup": self.global_grad_sup,
            "uniform_bound": self.uniform_bound,
            "verdicts": self.verdicts(),
        }


def _has_alloy(spec) -> bool:
    if isinstance(spec, Convex):
        return any(_has_alloy(term.spec) for term in spec.terms)
    return isinstance(spec, Alloy)


def resolving_grid(spec, n_values: Iterable[int]) -> Grid2D:
    """能分辨 g(max n ·) 的默认网格

    边长取 Grid2D() 的默认值，含合金项时取 8（使格点在环面上闭合）；
    点数从 256 起按 2 的幂加倍，直到 max_n·max_frequency 严格低于 Nyquist 波数。
    """
    side_length = ALLOY_SIDE_LENGTH if _has_alloy(spec) else Grid2D().side_length
    frequency = max(n_values, default=1) * max_frequency(spec)
    grid = Grid2D(Grid2D().points_per_axis, side_length)
    while not frequency < grid.nyquist:
        grid = Grid2D(2 * grid.points_per_axis, side_length)
    if grid.points_per_axis > Grid2D().points_per_axis:
        logger.info("默认网格加密到 %s 以分辨 n·ξ = %.6g", grid.describe(), frequency)
    return grid


def _default_radius(grid: Grid2D, radius: Optional[float]) -> float:
    if radius is None:
        return grid.side_length / 4
    if not 0 < radius <= grid.side_length / 2:
        raise ValueError(f"球半径 R={radius} 须满足 0 < R ≤ L/2 = {grid.side_length / 2}")
    return float(radius)


def resonance_field(spec, n: int, grid: Grid2D, subtract_mean: bool = True) -> ComplexField:
    """h_n = (-Δ+1)^{-1}(g(n·) - ḡ)"""
    g = evaluate(spec, n, grid)
    if subtract_mean:
        g = g - mean_value(spec)
    return inv_helmholtz(g)


def _resonance_measures(spec, n, radius, grid, subtract_mean=True):
    h = resonance_field(spec, n, grid, subtract_mean)
    modulus = h.modulus
    grad = gradient_modulus(h)
    ball = grid.radius <= radius
    return (
        float(np.max(modulus[ball])),
        float(np.max(grad[ball])),
        float(np.max(modulus)),
        float(np.max(grad)),
    )


def resonance_sup_norm(
    spec, n: int, radius: Optional[float] = None, grid: Optional[Grid2D] = None
) -> Tuple[float, float]:
    """球 |x| ≤ R 内 |h_n| 与 |∇h_n| 的网格最大值

    Args:
        spec: 耦合规格
        n: 振荡尺度
        radius: 球半径，默认 L/4
        grid: 计算网格，默认取 resolving_grid(spec, [n])

    Returns:
        (sup, grad_sup)
    """
    grid = grid or resolving_grid(spec, [n])
    radius = _default_radius(grid, radius)
    sup, grad_sup, _, _ = _resonance_measures(spec, n, radius, grid)
    return sup, grad_sup


def uniform_bound_check(
    spec, n_list: Sequence[int], grid: Optional[Grid2D] = None, subtract_mean: bool = True
) -> float:
    """max_n (sup|h_n| + sup|∇h_n|) / ‖g(n·)‖_∞，在全环面上取 sup

    subtract_mean=False 时不减去 ḡ，对应 (-Δ+1)^{-1}g(n·) 本身的一致界。
    """
    if not n_list:
        raise ValueError("n 列表不能为空")
    grid = grid or resolving_grid(spec, n_list)
    worst = 0.0
    for n in n_list:
        scale = evaluate(spec, n, grid).sup_norm()
        if scale == 0:
            continue
        h = resonance_field(spec, n, grid, subtract_mean)
        ratio = (h.sup_norm() + float(np.max(gradient_modulus(h)))) / scale
        logger.debug("n=%d 一致界比值 %.6g", n, ratio)
        worst = max(worst, ratio)
    return worst


def decay_fit(pairs: Iterable[Tuple[float, float]], skip_preasymptotic: bool = True) -> DecayFit:
    """对 (log n, log value) 做最小二乘直线拟合

    Args:
        pairs: (n, value) 序列
        skip_preasymptotic: 是否丢弃 n = 1

    Returns:
        斜率、截距与拟合误差的均方根

    Raises:
        ValueError: 有效点少于 3 个或存在非正值
    """
    points = [(float(n), float(v)) for n, v in pairs if not (skip_preasymptotic and n == 1)]
    if len(points) < 3:
        raise ValueError(f"拟合至少需要 3 个点，当前 {len(points)} 个")
    if any(v <= 0 for _, v in points):
        raise ValueError("存在非正值，共振量恰为零的情形需由调用方单独处理")
    x = np.log([n for n, _ in points])
    y = np.log([v for _, v in points])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
    return DecayFit(float(slope), float(intercept), residual)


def build_resonance_report(
    spec, n_values: Sequence[int], radius: Optional[float] = None, grid: Optional[Grid2D] = None
) -> ResonanceReport:
    grid = grid or resolving_grid(spec, n_values)
    radius = _default_radius(grid, radius)
    entries = []
    global_sup = global_grad = 0.0
    for n in sorted(n_values):
        sup, grad_sup, whole, whole_grad = _resonance_measures(spec, n, radius, grid)
        entries.append(ResonanceEntry(int(n), sup, grad_sup))
        global_sup = max(global_sup, whole)
        global_grad = max(global_grad, whole_grad)
        logger.info("n=%d: sup=%.6e, grad_sup=%.6e", n, sup, grad_sup)

    fit = None
    try:
        fit = decay_fit([(e.n, e.sup_value) for e in entries])
    except ValueError as exc:
        logger.info("跳过衰减拟合: %s", exc)
    uniform_bound = uniform_bound_check(spec, n_values, grid)
    return ResonanceReport(
        spec_id(spec), radius, tuple(entries), fit, global_sup, global_grad, uniform_bound
    )


def closed_form_resonance(spec, n: int, grid: Grid2D, radius: Optional[float] = None) -> float:
    """三角多项式与拟周期规格的直接求和 max |Σ_{k≠0} c_k e^{in f_k·x}/(n²|f_k|²+1)|"""
    radius = _default_radius(grid, radius)
    if isinstance(spec, TrigPoly):
        keys = [k for k in spec.coefficients if any(k)]
        freqs = np.asarray(keys, dtype=float).reshape(-1, 2)
        coefficients = np.array([spec.coefficients[k] for k in keys])
    elif isinstance(spec, QuasiPeriodic):
        freqs, coefficients = spec.frequencies()
        nonzero = np.hypot(freqs[:, 0], freqs[:, 1]) > 0
        freqs, coefficients = freqs[nonzero], coefficients[nonzero]
    else:
        raise TypeError("直接求和只适用于三角多项式或拟周期规格")
    weights = coefficients / (n**2 * (freqs[:, 0] ** 2 + freqs[:, 1] ** 2) + 1)
    values = mode_sum(freqs, weights, n, grid)
    return float(np.max(np.abs(values[grid.radius <= radius])))


def periodic_resonance_bound(spec: PeriodicSampled, n: int) -> float:
    """有界周期耦合的 n^{-2} 上界 Σ_{k≠0} |c_k| / (n²|k|²)"""
    freqs, coefficients = spec.modes
    norm_sq = freqs[:, 0] ** 2 + freqs[:, 1] ** 2
    nonzero = norm_sq > 0
    return float(np.sum(np.abs(coefficients[nonzero]) / (n**2 * norm_sq[nonzero])))


def kernel_l2_squared(grid: Grid2D, cutoff: float) -> float:
    """∫|K|²，K 的乘子为 m(ξ/N)/(|ξ|²+1)，按 Parseval 在网格上求和"""
    symbol = lp_low_symbol(grid, cutoff).values.real * helmholtz_symbol(grid).values.real
    return float(np.sum(symbol**2)) / grid.side_length**2


@dataclass(frozen=True)
class MomentEstimate:
    """合金势四阶矩估计

    estimate/stderr 来自单个角点，corner_estimate 为多角点平均（只有一个角点时为 None）。
    exact_moment 是线性型 Σ(X_k-μ)a_k 四阶矩的精确值。
    """

    n: int
    cutoff: float
    trials: int
    estimate: float
    stderr: float
    bound: float
    exact_moment: float
    corner_estimate: Optional[float]
    corner_stderr: Optional[float]
    riemann_sum: float
    riemann_limit: float

    @property
    def bound_satisfied(self) -> bool:
        return self.estimate <= self.bound + 5 * self.stderr

    def row(self) -> list:
        return [
            self.n,
            self.cutoff,
            self.trials,
            self.estimate,
            self.stderr,
            self.bound,
            self.exact_moment,
            self.bound_satisfied,
        ]


@dataclass(frozen=True, eq=False)
class AlloyMomentProblem:
    """固定 (规格, N, n, 网格) 后的线性响应

    对每个角点 x0，(-Δ+1)^{-1}P_{≤N}g(n·)(x0) = Σ_k X_k a_k，
    a_k 由剖面的径向傅里叶变换在低频模态上精确求和得到。
    """

    spec: Alloy
    cutoff: float
    n: int
    grid: Grid2D
    sites: np.ndarray
    responses: Tuple[np.ndarray, ...]
    kernel_l2: float = field(default=0.0)

    def fourth_powers(self, trial_indices: Sequence[int]) -> np.ndarray:
        """每次试验、每个角点上的 v⁴，形状 (试验数, 角点数)"""
        trials = np.asarray(trial_indices, dtype=np.int64)
        mu = self.spec.law.mean
        out = np.empty((len(trials), len(self.responses)))
        for start in range(0, len(trials), TRIAL_CHUNK):
            chunk = trials[start : start + TRIAL_CHUNK]
            draws = self.spec.site_values(
                chunk[:, None, None], self.sites[None, :, None], self.sites[None, None, :]
            )
            centred = draws - mu
            for column, response in enumerate(self.responses):
                values = (centred * response[None]).reshape(len(chunk), -1).sum(axis=1)
                out[start : start + len(chunk), column] = values**4
        return out


def _lattice_response(spec: Alloy, cutoff, n, grid, corner, sites) -> np.ndarray:
    symbol = lp_low_symbol(grid, cutoff).values.real * helmholtz_symbol(grid).values.real
    support = symbol != 0
    k1, k2 = grid.wavevectors
    xi1, xi2 = k1[support], k2[support]
    profile = spec.bump.fourier(np.hypot(xi1, xi2) / n)
    weights = symbol[support] * profile / (grid.side_length**2 * n**2)
    positions = sites / n
    e1 = np.exp(1j * np.outer(corner[0] - positions, xi1)) * weights
    e2 = np.exp(1j * np.outer(corner[1] - positions, xi2))
    return (e1 @ e2.T).real


def _corners(n: int, grid: Grid2D, corner_count: int) -> List[Tuple[float, float]]:
    if corner_count == 1:
        return [(0.0, 0.0)]
    if corner_count != 4:
        raise ValueError(f"角点数只能为 1 或 4: {corner_count}")
    offset = round(grid.side_length / 4 * n) / n
    return [(s1 * offset, s2 * offset) for s1 in (-1, 1) for s2 in (-1, 1)]


def prepare_alloy_moment(
    spec: Alloy, cutoff: float, n: int, grid: Grid2D, corner_count: int = 1
) -> AlloyMomentProblem:
    grid.check_nyquist(n * spec.bump.spectral_extent(), f"合金剖面 g({n}x) ")
    grid.check_nyquist(2 * cutoff, "P_{≤N} ")
    period = alloy_lattice_period(n, grid.side_length)
    if period is None:
        raise ValueError(f"n·L = {n * grid.side_length:.6g} 不是整数，格点无法在环面上闭合")
    sites = np.arange(period, dtype=np.int64) - period // 2
    responses = tuple(
        _lattice_response(spec, cutoff, n, grid, corner, sites)
        for corner in _corners(n, grid, corner_count)
    )
    return AlloyMomentProblem(spec, cutoff, n, grid, sites, responses, kernel_l2_squared(grid, cutoff))


def summarize_alloy_moment(problem: AlloyMomentProblem, powers: np.ndarray) -> MomentEstimate:
    """按试验编号顺序归约；math.fsum 精确求和，结果与分块方式无关"""
    trials = powers.shape[0]

    def mean_and_error(values: np.ndarray) -> Tuple[float, float]:
        mean = math.fsum(values) / trials
        variance = math.fsum((values - mean) ** 2) / (trials - 1)
        return mean, math.sqrt(variance / trials)

    estimate, stderr = mean_and_error(powers[:, 0])
    corner_estimate = corner_stderr = None
    if powers.shape[1] > 1:
        corner_estimate, corner_stderr = mean_and_error(powers.mean(axis=1))

    law = problem.spec.law
    response = problem.responses[0]
    s2 = float(np.sum(response**2))
    s4 = float(np.sum(response**4))
    sigma4 = law.variance**2
    exact = 3 * sigma4 * s2**2 + (law.central_fourth_moment - 3 * sigma4) * s4
    integral = problem.spec.bump.integral()
    bound = 4 * problem.n**-4 * integral**4 * problem.kernel_l2**2 * sigma4
    return MomentEstimate(
        n=problem.n,
        cutoff=problem.cutoff,
        trials=trials,
        estimate=estimate,
        stderr=stderr,
        bound=bound,
        exact_moment=exact,
        corner_estimate=corner_estimate,
        corner_stderr=corner_stderr,
        riemann_sum=problem.n**2 * s2,
        riemann_limit=integral**2 * problem.kernel_l2,
    )


def alloy_moment_estimate(
    spec: Alloy,
    cutoff: float = 1.0,
    n: int = 2,
    trials: int = 400,
    seed: Optional[int] = None,
    grid: Optional[Grid2D] = None,
    corner_count: int = 1,
) -> MomentEstimate:
    """E|(-Δ+1)^{-1}P_{≤N}g(n·)(x0)|⁴ 的 Monte-Carlo 估计

    Args:
        spec: 合金规格（剖面、分布、种子）
        cutoff: Littlewood-Paley 截断 N
        n: 振荡尺度
        trials: 独立实现数，至少 100
        seed: 覆盖规格中的种子
        grid: 计算网格，默认 L=8, N_g=1024
        corner_count: 1 或 4 个角点

    Returns:
        MomentEstimate

    Raises:
        ValueError: 试验数不足、网格与格点不相容
        NyquistError: 剖面在尺度 n 下无法分辨
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"试验数至少为 {MIN_TRIALS}，收到 {trials}")
    if seed is not None:
        spec = spec.with_seed(seed)
    grid = grid or Grid2D(1024, 8.0)
    problem = prepare_alloy_moment(spec, cutoff, n, grid, corner_count)
    return summarize_alloy_moment(problem, problem.fourth_powers(range(trials)))


def alloy_realization_value(problem: AlloyMomentProblem, trial: int) -> float:
    """用完整场计算单次实现在原点角点处的值，用于核对线性响应"""
    fluctuation, _ = alloy_split(problem.spec)
    field_values = alloy_field(fluctuation, problem.n, problem.grid, trial)
    symbol = lp_low_symbol(problem.grid, problem.cutoff) * helmholtz_symbol(problem.grid)
    smoothed = apply_multiplier(ComplexField(problem.grid, field_values), symbol)
    centre = problem.grid.points_per_axis // 2
    return float(smoothed.values[centre, centre].real)

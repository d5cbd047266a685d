"""
时间积分模块

用 Strang 分裂求解 i∂t u + Δu = g(x)|u|²u：线性半步、精确非线性流、线性半步。
非线性流 w ↦ w·exp(-i g |w|² dt) 逐点保模，因此质量守恒只受舍入误差影响。
"""

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

from coupling import evaluate
from spectral import ComplexField, Grid2D, GridMismatchError, lp_norm_values, mass

logger = logging.getLogger(__name__)

TAIL_LIMIT = 0.01


class SimulationError(RuntimeError):
    """积分过程中出现 NaN 或 Inf"""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message}（第 {step} 步，t={time:.6g}）")
        self.step = step
        self.time = time


class StopReason(Enum):
    """爆破探测的终止原因"""

    HORIZON = "horizon"
    THRESHOLD = "threshold"
    RESOLUTION_LIMIT = "resolution-limit"


def _real_coupling(grid: Grid2D, g_field: Optional[ComplexField]) -> np.ndarray:
    if g_field is None:
        return np.zeros(grid.shape)
    if g_field.grid != grid:
        raise GridMismatchError(f"耦合场网格 {g_field.grid} 与求解网格 {grid} 不一致")
    values = g_field.values
    scale = max(1.0, float(np.max(np.abs(values.real))))
    if float(np.max(np.abs(values.imag))) > 1e-12 * scale:
        raise ValueError("耦合场必须是实值")
    return values.real.copy()


@dataclass(frozen=True, eq=False)
class SimConfig:
    """单次积分的参数

    Args:
        grid: 计算网格
        dt: 时间步长
        T: 积分终止时刻
        store_every: 每隔多少步保存一次状态，须整除总步数
        g_field: 实值耦合场，None 表示零耦合
        dealias: 非线性步后是否施加 2/3 截断
    """

    grid: Grid2D
    dt: float = 1e-3
    T: float = 1.0
    store_every: int = 10
    g_field: Optional[ComplexField] = None
    dealias: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError(f"dt 与 T 必须为正: dt={self.dt}, T={self.T}")
        if self.dt > self.T:
            raise ValueError(f"dt={self.dt} 大于 T={self.T}")
        ratio = self.T / self.dt
        steps = round(ratio)
        if abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T/dt = {ratio!r} 不是整数")
        # 步数取整后反推步长，保证 steps·dt = T
        object.__setattr__(self, "dt", self.T / steps)
        if not isinstance(self.store_every, (int, np.integer)) or self.store_every < 1:
            raise ValueError(f"store_every 必须是正整数: {self.store_every!r}")
        if steps % self.store_every:
            raise ValueError(f"store_every={self.store_every} 不能整除总步数 {steps}")
        object.__setattr__(self, "_coupling", _real_coupling(self.grid, self.g_field))

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def store_spacing(self) -> float:
        return self.dt * self.store_every

    @property
    def coupling(self) -> np.ndarray:
        return self._coupling

    @property
    def coupling_field(self) -> ComplexField:
        return ComplexField(self.grid, self._coupling)

    def with_coupling(self, g_field: Optional[ComplexField]) -> "SimConfig":
        return dataclasses.replace(self, g_field=g_field)

    def describe(self) -> dict:
        return {
            "grid": self.grid.describe(),
            "dt": self.dt,
            "T": self.T,
            "store_every": self.store_every,
            "dealias": self.dealias,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """等间隔时刻上的解，values 形状为 (时刻数, N_g, N_g)"""

    grid: Grid2D
    times: np.ndarray
    values: np.ndarray
    config: Optional[SimConfig] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=np.complex128)
        if times.ndim != 1 or len(times) == 0:
            raise ValueError("轨迹至少需要一个时刻")
        if values.shape != (len(times),) + self.grid.shape:
            raise ValueError(f"场数组形状 {values.shape} 与时刻数/网格不符")
        if times[0] != 0:
            raise ValueError("轨迹必须从 t=0 开始")
        if len(times) > 1:
            steps = np.diff(times)
            if not np.allclose(steps, steps[0], rtol=1e-12, atol=0) or steps[0] <= 0:
                raise ValueError("时刻必须等间隔递增")
        if not np.isfinite(values).all():
            raise ValueError("轨迹包含 NaN 或 Inf")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_fields(
        cls, fields: Sequence[ComplexField], times, config: Optional[SimConfig] = None
    ) -> "Trajectory":
        grid = fields[0].grid
        for field in fields:
            if field.grid != grid:
                raise GridMismatchError("轨迹中的场必须在同一网格上")
        return cls(grid, times, np.stack([f.values for f in fields]), config)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @cached_property
    def fields(self) -> Tuple[ComplexField, ...]:
        return tuple(ComplexField(self.grid, v) for v in self.values)

    def scaled(self, factor: complex) -> "Trajectory":
        return Trajectory(self.grid, self.times, self.values * factor, self.config)

    def subsampled(self, stride: int) -> "Trajectory":
        """每隔 stride 个时刻取一个，要求端点仍被保留"""
        if (len(self.times) - 1) % stride:
            raise ValueError(f"步长 {stride} 无法保留末端时刻")
        return Trajectory(self.grid, self.times[::stride], self.values[::stride], self.config)


def _half_step_symbol(grid: Grid2D, dt: float) -> np.ndarray:
    return np.exp(-0.5j * dt * grid.wavenumber_norm_sq)


def _nonlinear_flow(values: np.ndarray, coupling: np.ndarray, dt: float) -> np.ndarray:
    return values * np.exp(-1j * dt * coupling * np.abs(values) ** 2)


def _dealias_mask(grid: Grid2D) -> np.ndarray:
    keep = np.abs(grid.mode_indices) < grid.points_per_axis / 3
    return np.logical_and.outer(keep, keep)


def strang_step(u: ComplexField, dt: float, g_field: Optional[ComplexField] = None) -> ComplexField:
    """e^{i(dt/2)Δ} ∘ 𝒩_dt ∘ e^{i(dt/2)Δ}，dt 可为负（时间反演）"""
    coupling = _real_coupling(u.grid, g_field)
    half = _half_step_symbol(u.grid, dt)
    values = sfft.ifft2(half * sfft.fft2(u.values))
    values = _nonlinear_flow(values, coupling, dt)
    return ComplexField(u.grid, sfft.ifft2(half * sfft.fft2(values)))


def evolve(u0: ComplexField, cfg: SimConfig) -> Trajectory:
    """从 u0 积分到 cfg.T，每 store_every 步保存一次（含两端）

    相邻两个线性半步在非保存时刻合并为一个整步。

    Raises:
        SimulationError: 某一步出现 NaN 或 Inf
    """
    grid = cfg.grid
    if u0.grid != grid:
        raise GridMismatchError(f"初值网格 {u0.grid} 与配置网格 {grid} 不一致")
    dt = cfg.dt
    coupling = cfg.coupling
    half = _half_step_symbol(grid, dt)
    full = half * half
    mask = _dealias_mask(grid) if cfg.dealias else None

    snapshots: List[np.ndarray] = [u0.values]
    coefficients = sfft.fft2(u0.values) * half
    for step in range(1, cfg.steps + 1):
        values = _nonlinear_flow(sfft.ifft2(coefficients), coupling, dt)
        if not np.isfinite(values).all():
            raise SimulationError("积分出现非有限值", step, step * dt)
        coefficients = sfft.fft2(values)
        if mask is not None:
            coefficients = coefficients * mask
        if step % cfg.store_every == 0:
            coefficients = coefficients * half
            snapshots.append(sfft.ifft2(coefficients))
            if step < cfg.steps:
                coefficients = coefficients * half
        else:
            coefficients = coefficients * full

    times = np.arange(len(snapshots)) * cfg.store_spacing
    trajectory = Trajectory(grid, times, np.stack(snapshots), cfg)
    initial = mass(u0)
    if initial > 0:
        drift = abs(mass(trajectory.fields[-1]) - initial) / initial
        if drift > 1e-10 and not cfg.dealias:
            logger.warning("质量相对漂移 %.3e 超过 1e-10", drift)
        logger.debug("积分完成: %d 步，质量漂移 %.3e", cfg.steps, drift)
    return trajectory


def _final_state(u0: ComplexField, cfg: SimConfig) -> np.ndarray:
    endpoint_cfg = dataclasses.replace(cfg, store_every=cfg.steps)
    return evolve(u0, endpoint_cfg).values[-1]


def self_convergence_ratio(u0: ComplexField, cfg: SimConfig) -> float:
    """‖u_dt - u_{dt/2}‖ / ‖u_{dt/2} - u_{dt/4}‖，二阶格式应接近 4"""
    coarse = _final_state(u0, cfg)
    medium = _final_state(u0, dataclasses.replace(cfg, dt=cfg.dt / 2))
    fine = _final_state(u0, dataclasses.replace(cfg, dt=cfg.dt / 4))
    spacing = cfg.grid.spacing
    return lp_norm_values(coarse - medium, spacing, 2) / lp_norm_values(medium - fine, spacing, 2)


def scaling_symmetry_check(v_traj: Trajectory, n: int, alpha: float, spec) -> float:
    """尺度对称性检验

    在边长 L/n 的伴随网格上以 w0(x) = n^{1-α/2} v(0, nx) 为初值、
    n^α g(n·) 为耦合积分到 T/n²，与 n^{1-α/2} v(T, n·) 比较。

    Args:
        v_traj: 在网格 G 上以 g(x) 为耦合得到的轨迹
        n: 尺度
        alpha: 耦合放大指数
        spec: 耦合规格

    Returns:
        相对 L² 偏差
    """
    cfg = v_traj.config
    if cfg is None:
        raise ValueError("轨迹缺少积分配置，无法重放")
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"尺度 n 必须是正整数: {n!r}")
    expected = evaluate(spec, 1, v_traj.grid).values.real
    if np.max(np.abs(cfg.coupling - expected)) > 1e-12 * max(1.0, np.max(np.abs(expected))):
        raise ValueError("轨迹的耦合场与 n=1 时的规格不一致")

    companion = v_traj.grid.companion(n)
    amplitude = n ** (1 - alpha / 2)
    w0 = ComplexField(companion, amplitude * v_traj.values[0])
    g_eff = n**alpha * evaluate(spec, n, companion)
    horizon = float(v_traj.times[-1])
    companion_cfg = SimConfig(
        companion,
        dt=cfg.dt / n**2,
        T=horizon / n**2,
        store_every=cfg.steps,
        g_field=g_eff,
        dealias=cfg.dealias,
    )
    w_end = evolve(w0, companion_cfg).values[-1]
    target = amplitude * v_traj.values[-1]
    spacing = companion.spacing
    return lp_norm_values(w_end - target, spacing, 2) / lp_norm_values(w0.values, spacing, 2)


@dataclass(frozen=True)
class GrowthRecord:
    t: float
    sup_norm: float
    kinetic: float
    mass: float
    tail_fraction: float


@dataclass(frozen=True)
class GrowthReport:
    """爆破探测结果；hit_time 只是有限分辨率下的替代时刻"""

    records: Tuple[GrowthRecord, ...]
    stop_reason: StopReason
    hit_time: Optional[float]

    def rows(self) -> List[list]:
        return [[r.t, r.sup_norm, r.kinetic, r.mass, r.tail_fraction] for r in self.records]


def _growth_record(values: np.ndarray, grid: Grid2D, t: float) -> GrowthRecord:
    count = grid.points_per_axis
    power = np.abs(sfft.fft2(values) / count**2) ** 2
    area = grid.side_length**2
    total = float(np.sum(power))
    high = np.sqrt(grid.wavenumber_norm_sq) > grid.nyquist / 2
    return GrowthRecord(
        t=t,
        sup_norm=float(np.max(np.abs(values))),
        kinetic=float(np.sqrt(area * np.sum(grid.wavenumber_norm_sq * power))),
        mass=area * total,
        tail_fraction=float(np.sum(power[high]) / total) if total > 0 else 0.0,
    )


def blowup_probe(
    spec,
    alpha: float,
    n: int,
    u0: ComplexField,
    cfg: SimConfig,
    sup_threshold: float,
    coupling_scale: float = 1.0,
    tail_limit: float = TAIL_LIMIT,
) -> GrowthReport:
    """在 g_eff = s·n^α·g(n·) 下积分并监测增长

    终止条件依次为：sup 范数达到阈值、谱尾能量占比超过 tail_limit、到达 cfg.T。
    coupling_scale 取负值可得到聚焦型耦合。

    Raises:
        ValueError: 阈值不高于初始 sup 范数
        SimulationError: 积分出现非有限值
    """
    if u0.grid != cfg.grid:
        raise GridMismatchError("初值与配置不在同一网格上")
    initial_sup = u0.sup_norm()
    if not sup_threshold > initial_sup:
        raise ValueError(f"阈值 {sup_threshold} 必须大于初始 sup 范数 {initial_sup:.6g}")
    g_eff = coupling_scale * n**alpha * evaluate(spec, n, cfg.grid)
    coupling = g_eff.values.real
    grid, dt = cfg.grid, cfg.dt
    half = _half_step_symbol(grid, dt)

    records = [_growth_record(u0.values, grid, 0.0)]
    values = u0.values
    reason, hit_time = StopReason.HORIZON, None
    for step in range(1, cfg.steps + 1):
        values = sfft.ifft2(half * sfft.fft2(values))
        values = _nonlinear_flow(values, coupling, dt)
        values = sfft.ifft2(half * sfft.fft2(values))
        t = step * dt
        if not np.isfinite(values).all():
            raise SimulationError("爆破探测出现非有限值", step, t)
        record = _growth_record(values, grid, t)
        records.append(record)
        if record.sup_norm >= sup_threshold:
            reason, hit_time = StopReason.THRESHOLD, t
            break
        if record.tail_fraction > tail_limit:
            reason, hit_time = StopReason.RESOLUTION_LIMIT, t
            break

    drift = abs(records[-1].mass - records[0].mass) / max(records[0].mass, 1e-300)
    if drift > 1e-9:
        logger.warning("爆破探测中质量漂移 %.3e 超过 1e-9", drift)
    logger.info("爆破探测结束: %s, t=%.6g", reason.value, records[-1].t)
    return GrowthReport(tuple(records), reason, hit_time)

"""
实验编排模块

负责均化扫描、共振报告、合金 Monte-Carlo、爆破探测与性质测试套件的调度，
结果写入 DataStorage，每次运行附带一份清单（配置哈希、依赖版本、耗时）。
独立的运行或试验分派到有界线程池，汇总在单线程中按配置顺序进行。
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pytest
import scipy.fft as sfft

from config import AlloyMcConfig, BlowupConfig, SimulateConfig, SweepConfig
from coupling import evaluate, mean_value, spec_id
from data_storage import DataStorage
from norms import (
    REFINEMENT_WARNING,
    NormReport,
    duhamel_error,
    duhamel_refinement,
    norm_report,
    spacetime_l4_diff,
)
from resonance import (
    TRIAL_CHUNK,
    DecayFit,
    MomentEstimate,
    ResonanceReport,
    build_resonance_report,
    decay_fit,
    prepare_alloy_moment,
    resonance_sup_norm,
    summarize_alloy_moment,
)
from solver import GrowthReport, Trajectory, blowup_probe, evolve
from spectral import ComplexField, Grid2D
from utils import config_hash, environment_versions

logger = logging.getLogger(__name__)

TESTS_DIR = Path(__file__).resolve().parent / "tests"
DEFAULT_PROPERTY_TAGS = ("spectral", "coupling", "resonance", "solver", "norms")
SWEEP_HEADER = ["n", "l4_diff", "duhamel_error", "duhamel_refinement", "resonance_sup", "error"]
RESONANCE_HEADER = ["n", "sup", "grad_sup"]
ALLOY_HEADER = [
    "n",
    "cutoff",
    "trials",
    "estimate",
    "stderr",
    "bound",
    "exact_moment",
    "bound_satisfied",
]
GROWTH_HEADER = ["t", "sup_norm", "kinetic", "mass", "tail_fraction"]
RUN_OUTPUTS = {
    "sweep": ("sweep.csv", "sweep_summary.json"),
    "simulate": ("trajectory", "simulate_norms.json"),
    "resonance": ("resonance.csv", "resonance_summary.json"),
    "alloy-mc": ("alloy_mc.csv", "alloy_mc_summary.json"),
    "blowup": ("blowup.csv", "blowup_summary.json"),
    "props": ("props_ledger.json",),
}


@dataclass(frozen=True)
class SweepRow:
    n: int
    l4_diff: float
    duhamel_error: float
    duhamel_refinement: float
    resonance_sup: float
    runtime_seconds: float
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_row(self) -> list:
        # 运行时间不进 CSV，保证相同配置输出逐字节一致
        return [
            self.n,
            self.l4_diff,
            self.duhamel_error,
            self.duhamel_refinement,
            self.resonance_sup,
            self.error or "",
        ]


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    homogenized: NormReport
    config_hash: str

    def column(self, name: str) -> List[float]:
        return [getattr(row, name) for row in self.rows]


@dataclass(frozen=True)
class AlloyMcResult:
    estimates: Tuple[MomentEstimate, ...]
    fit: Optional[DecayFit]


def _refinement(spec, n: int, reference: Trajectory, method: str) -> float:
    """存储间隔加倍时 Duhamel 误差的相对变化；区间数为奇数时记为 NaN"""
    if (len(reference) - 1) % 2:
        logger.warning("存储了 %d 个时刻，无法加倍间隔，n=%d 跳过细化自检", len(reference), n)
        return math.nan
    return duhamel_refinement(spec, n, reference, method=method)


class ExperimentHarness:
    """实验调度器

    Args:
        storage: 输出存储，如果为None则使用默认目录
        threads: 线程池大小
    """

    def __init__(self, storage: DataStorage = None, threads: int = 1):
        self.storage = storage or DataStorage()
        if threads < 1:
            raise ValueError(f"线程数必须为正: {threads}")
        self.threads = threads

    def _finish(self, command: str, config, outputs: List[Path], started: float, extra=None) -> Path:
        return self.storage.write_manifest(
            f"{command}_manifest.json",
            command=command,
            config_hash=config_hash(config),
            outputs=outputs,
            versions=environment_versions(),
            wall_clock_seconds=time.perf_counter() - started,
            extra=extra,
        )

    def _sweep_member(
        self, cfg: SweepConfig, n: int, u0: ComplexField, reference: Trajectory
    ) -> SweepRow:
        started = time.perf_counter()
        spec, grid = cfg.coupling, reference.grid
        try:
            traj_n = evolve(u0, cfg.sim.build(grid, evaluate(spec, n, grid)))
            l4 = spacetime_l4_diff(traj_n, reference)
            duhamel = duhamel_error(spec, n, reference, method=cfg.duhamel_method)
            refinement = _refinement(spec, n, reference, cfg.duhamel_method)
            resonance, _ = resonance_sup_norm(spec, n, grid=grid)
        except Exception as e:  # pylint: disable=broad-except
            logger.error("n=%d 运行失败: %s", n, e)
            logger.debug("失败详情", exc_info=True)
            elapsed = time.perf_counter() - started
            error = f"{type(e).__name__}: {e}"
            return SweepRow(n, math.nan, math.nan, math.nan, math.nan, elapsed, error)
        elapsed = time.perf_counter() - started
        logger.info(
            "n=%d: L4 差 %.6e, Duhamel 误差 %.6e (加倍间隔变化 %.2g), %.1fs",
            n,
            l4,
            duhamel,
            refinement,
            elapsed,
        )
        return SweepRow(n, l4, duhamel, refinement, resonance, elapsed)

    def run_homogenization_sweep(self, cfg: SweepConfig) -> SweepResult:
        """先以 g ≡ ḡ 积分一次均化解，再对每个 n 以 g(n·) 积分并与之比较

        单个 n 失败只记录在对应行，其余 n 照常进行。
        """
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["sweep"]):
            grid = cfg.grid.build()
            u0 = cfg.initial_data.build(grid)
            g_bar = mean_value(cfg.coupling)
            logger.info("均化扫描开始: ḡ=%.6g, n=%s, 网格 %s", g_bar, cfg.n_values, grid.describe())

            with sfft.set_workers(self.threads):
                reference = evolve(u0, cfg.sim.build(grid, ComplexField.constant(grid, g_bar)))
            homogenized = norm_report(reference)

            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futures = [pool.submit(self._sweep_member, cfg, n, u0, reference) for n in cfg.n_values]
                rows = tuple(future.result() for future in futures)

            digest = config_hash(cfg)
            result = SweepResult(rows, homogenized, digest)
            outputs = [
                self.storage.export_to_csv("sweep.csv", SWEEP_HEADER, [row.csv_row() for row in rows]),
                self.storage.save_json(
                    "sweep_summary.json",
                    {
                        "config_hash": digest,
                        "spec_id": spec_id(cfg.coupling),
                        "homogenized": homogenized.to_dict(),
                        "failed": [row.n for row in rows if row.failed],
                        "refinement_unstable": [
                            row.n for row in rows if row.duhamel_refinement > REFINEMENT_WARNING
                        ],
                    },
                ),
            ]
            self._finish(
                "sweep",
                cfg,
                outputs,
                started,
                {"runtime_seconds": {str(row.n): row.runtime_seconds for row in rows}},
            )
            return result

    def run_simulation(self, cfg: SimulateConfig) -> Tuple[Trajectory, NormReport]:
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["simulate"]):
            grid = cfg.grid.build()
            u0 = cfg.initial_data.build(grid)
            with sfft.set_workers(self.threads):
                traj = evolve(u0, cfg.sim.build(grid, evaluate(cfg.coupling, cfg.n, grid)))
            report = norm_report(traj)
            outputs = [
                self.storage.save_trajectory(traj, "trajectory"),
                self.storage.save_json("simulate_norms.json", report.to_dict()),
            ]
            self._finish("simulate", cfg, outputs, started)
            logger.info("模拟完成: L4=%.6e, Strichartz=%.6e", report.l4_spacetime, report.strichartz)
            return traj, report

    def run_resonance_report(
        self,
        spec,
        n_values: Sequence[int],
        radius: Optional[float] = None,
        grid: Optional[Grid2D] = None,
    ) -> ResonanceReport:
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["resonance"]):
            grid = grid or Grid2D(256, 8 * math.pi)
            with sfft.set_workers(self.threads):
                report = build_resonance_report(spec, n_values, radius, grid)
            outputs = [
                self.storage.export_to_csv("resonance.csv", RESONANCE_HEADER, report.rows()),
                self.storage.save_json("resonance_summary.json", report.summary()),
            ]
            settings = {
                "coupling": spec.model_dump(mode="json"),
                "n_values": list(n_values),
                "radius": report.ball_radius,
                "grid": grid.describe(),
            }
            self._finish("resonance", settings, outputs, started)
            return report

    def _moment_for(self, cfg: AlloyMcConfig, n: int, grid: Grid2D, pool) -> MomentEstimate:
        problem = prepare_alloy_moment(cfg.coupling, cfg.cutoff, n, grid, cfg.corner_count)
        chunks = [
            range(start, min(start + TRIAL_CHUNK, cfg.trials))
            for start in range(0, cfg.trials, TRIAL_CHUNK)
        ]
        futures = [pool.submit(problem.fourth_powers, chunk) for chunk in chunks]
        powers = np.vstack([future.result() for future in futures])
        estimate = summarize_alloy_moment(problem, powers)
        logger.info(
            "n=%d: E|v|⁴ ≈ %.4e ± %.1e, 上界 %.4e",
            n,
            estimate.estimate,
            estimate.stderr,
            estimate.bound,
        )
        return estimate

    def run_alloy_mc(self, cfg: AlloyMcConfig) -> AlloyMcResult:
        """对每个 n 做四阶矩的 Monte-Carlo 估计，试验按块并行"""
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["alloy-mc"]):
            grid = cfg.grid.build()
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                estimates = tuple(self._moment_for(cfg, n, grid, pool) for n in cfg.n_values)

            fit = None
            try:
                fit = decay_fit([(e.n, e.estimate) for e in estimates], skip_preasymptotic=False)
            except ValueError as exc:
                logger.info("跳过衰减拟合: %s", exc)
            summary = {
                "spec_id": spec_id(cfg.coupling),
                "slope": fit.slope if fit else None,
                "riemann": {str(e.n): [e.riemann_sum, e.riemann_limit] for e in estimates},
                "corner_estimates": {str(e.n): e.corner_estimate for e in estimates},
            }
            outputs = [
                self.storage.export_to_csv("alloy_mc.csv", ALLOY_HEADER, [e.row() for e in estimates]),
                self.storage.save_json("alloy_mc_summary.json", summary),
            ]
            self._finish("alloy-mc", cfg, outputs, started)
            return AlloyMcResult(estimates, fit)

    def run_blowup_probe(self, cfg: BlowupConfig) -> GrowthReport:
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["blowup"]):
            grid = cfg.grid.build()
            u0 = cfg.initial_data.build(grid)
            with sfft.set_workers(self.threads):
                report = blowup_probe(
                    cfg.coupling,
                    cfg.alpha,
                    cfg.n,
                    u0,
                    cfg.sim.build(grid),
                    cfg.sup_threshold,
                    coupling_scale=cfg.coupling_scale,
                    tail_limit=cfg.tail_limit,
                )
            outputs = [
                self.storage.export_to_csv("blowup.csv", GROWTH_HEADER, report.rows()),
                self.storage.save_json(
                    "blowup_summary.json",
                    {"stop_reason": report.stop_reason.value, "hit_time": report.hit_time},
                ),
            ]
            self._finish("blowup", cfg, outputs, started)
            return report

    def run_property_suite(self, tags: Sequence[str] = DEFAULT_PROPERTY_TAGS) -> dict:
        """按标记逐个运行测试套件，返回并保存通过/失败台账"""
        started = time.perf_counter()
        with self.storage.reserved_outputs(RUN_OUTPUTS["props"]):
            entries = []
            for tag in tags:
                tag_started = time.perf_counter()
                exit_code = pytest.main(
                    [str(TESTS_DIR), "-q", "-m", f"{tag} and not slow", "--no-cov", "-p", "no:cacheprovider"]
                )
                entries.append(
                    {
                        "tag": tag,
                        "exit_code": int(exit_code),
                        "passed": exit_code == pytest.ExitCode.OK,
                        "duration_seconds": time.perf_counter() - tag_started,
                    }
                )
                logger.info("套件 %s: 退出码 %d", tag, int(exit_code))

            ledger = {"passed": all(entry["passed"] for entry in entries), "suites": entries}
            outputs = [self.storage.save_json("props_ledger.json", ledger)]
            self._finish("props", {"tags": list(tags)}, outputs, started)
            return ledger

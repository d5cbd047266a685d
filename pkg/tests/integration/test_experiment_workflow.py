import json
import math

import numpy as np
import pytest

import main
from config import AlloyMcConfig, BlowupConfig, ResonanceConfig, SimulateConfig
from coupling import PeriodicSampled
from harness import ExperimentHarness
from spectral import Grid2D

from . import BaseIntegrationTest


@pytest.mark.slow
class TestResonanceWorkflow(BaseIntegrationTest):
    """测试非共振条件的报告流程"""

    def test_periodic_sampled_decay(self, test_storage):
        """五个以上非零模态的周期耦合，衰减斜率接近 -2"""
        # 1. 构造多模态周期样本
        axis = np.arange(64) * 2 * math.pi / 64
        y1, y2 = np.meshgrid(axis, axis, indexing="ij")
        samples = 1.0 + np.cos(y1) + 0.5 * np.sin(2 * y2) + 0.25 * np.cos(y1 + y2) + 0.1 * np.cos(3 * y1 - y2)
        spec = PeriodicSampled(samples=samples.tolist())
        assert len(spec.modes[0]) >= 5

        # 2. 生成报告
        harness = ExperimentHarness(test_storage, threads=2)
        report = harness.run_resonance_report(spec, [2, 4, 8, 16], grid=Grid2D(512, 8 * math.pi))

        # 3. 检查斜率与单调性
        assert -2.3 < report.fit.slope < -1.7
        sups = [entry.sup_value for entry in report.entries]
        self.assert_strictly_decreasing(sups)


@pytest.mark.slow
class TestAlloyWorkflow(BaseIntegrationTest):
    """测试合金模型的四阶矩 Monte-Carlo 流程"""

    def test_acceptance_moments(self, test_storage):
        """默认 bump、每个 n 400 次试验"""
        cfg = AlloyMcConfig()
        assert cfg.n_values == [2, 4, 8]
        assert cfg.trials == 400

        result = ExperimentHarness(test_storage, threads=4).run_alloy_mc(cfg)

        # 每个估计都低于放大 5 个标准误的上界
        assert all(estimate.bound_satisfied for estimate in result.estimates)
        assert -4.8 < result.fit.slope < -3.2


@pytest.mark.slow
class TestCommandLineWorkflow(BaseIntegrationTest):
    """测试命令行的端到端流程：写配置 -> 运行各子命令 -> 检查清单"""

    def test_all_commands(self, tmp_path):
        out = tmp_path / "out"
        small_grid = self.acceptance_grid(128, 8 * math.pi)
        short_run = self.acceptance_run(dt=1e-2, T=0.2, store_every=5)

        # 1. 写出配置文件
        configs = {
            "simulate": SimulateConfig(coupling=self.COSINE, grid=small_grid, sim=short_run),
            "resonance": ResonanceConfig(coupling=self.COSINE, n_values=[4, 8, 16]),
            "alloy-mc": AlloyMcConfig(n_values=[1, 2, 3], trials=100, grid=self.acceptance_grid(256, 8.0)),
            "blowup": BlowupConfig(
                coupling={"kind": "trig_poly", "terms": [{"k": [0, 0], "re": 1.0}]},
                coupling_scale=-1.0,
                sup_threshold=12.0,
                grid=small_grid,
                sim=self.acceptance_run(dt=1e-3, T=0.5, store_every=1),
                initial_data={"gaussian": {"amplitude": 4.0}},
            ),
        }

        # 2. 逐个运行子命令
        for command, cfg in configs.items():
            path = self.write_config(tmp_path, f"{command}.json", cfg)
            argv = [command, "--config", str(path), "--out", str(out), "--threads", "2"]
            assert main.main(argv) == main.EXIT_OK

        # 3. 每个输出只被一个清单引用
        registered = []
        for manifest_path in out.glob("*_manifest.json"):
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            assert len(manifest["config_hash"]) == 64
            assert set(manifest["versions"]) == {"python", "numpy", "scipy", "pydantic"}
            registered.extend(manifest["outputs"])
        assert len(registered) == len(set(registered))
        produced = {p.name for p in out.iterdir() if not p.name.endswith("_manifest.json")}
        assert produced == set(registered)

        # 4. 爆破探测的摘要记录了非 horizon 的终止原因
        summary = json.loads((out / "blowup_summary.json").read_text(encoding="utf-8"))
        assert summary["stop_reason"] != "horizon"

    def test_seed_changes_alloy_output(self, tmp_path):
        """--seed 覆盖配置中的种子"""
        cfg = AlloyMcConfig(n_values=[1, 2, 3], trials=100, grid=self.acceptance_grid(256, 8.0))
        path = self.write_config(tmp_path, "alloy.json", cfg)
        tables = []
        for seed, name in (("1", "a"), ("1", "b"), ("2", "c")):
            out = tmp_path / name
            argv = ["alloy-mc", "--config", str(path), "--seed", seed, "--out", str(out)]
            assert main.main(argv) == main.EXIT_OK
            tables.append((out / "alloy_mc.csv").read_bytes())
        assert tables[0] == tables[1]
        assert tables[0] != tables[2]

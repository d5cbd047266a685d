# tests/test_harness.py
import csv
import json
import math

import pytest

import main
from config import AlloyMcConfig, BlowupConfig, GridSettings, SimSettings, SimulateConfig, SweepConfig
from coupling import TrigPoly
from data_storage import DataStorage
from harness import SWEEP_HEADER, ExperimentHarness
from solver import StopReason
from spectral import Grid2D

pytestmark = pytest.mark.harness

CONSTANT = {"kind": "trig_poly", "terms": [{"k": [0, 0], "re": 1.0}]}
COSINE = {
    "kind": "trig_poly",
    "terms": [{"k": [0, 0], "re": 1.0}, {"k": [1, 0], "re": 0.5}, {"k": [-1, 0], "re": 0.5}],
}
SMALL_GRID = {"points_per_axis": 64, "side_length": 8 * math.pi}
SHORT_RUN = {"dt": 0.01, "T": 0.1, "store_every": 2}
DENSE_RUN = {"dt": 0.01, "T": 0.1, "store_every": 1}


def _sweep_config(coupling, n_values=(2, 4)):
    return SweepConfig(coupling=coupling, n_values=list(n_values), grid=SMALL_GRID, sim=SHORT_RUN)


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def harness(test_storage):
    return ExperimentHarness(test_storage, threads=2)


class TestSweep:
    def test_constant_coupling_is_homogenized(self, harness, test_storage):
        result = harness.run_homogenization_sweep(_sweep_config(CONSTANT))
        assert result.column("l4_diff") == [0.0, 0.0]
        assert result.column("duhamel_error") == [0.0, 0.0]
        rows = _read_csv(test_storage.path_for("sweep.csv"))
        assert rows[0] == SWEEP_HEADER
        assert [row[0] for row in rows[1:]] == ["2", "4"]
        manifest = json.loads(test_storage.path_for("sweep_manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "sweep"
        assert set(manifest["outputs"]) == {"sweep.csv", "sweep_summary.json"}
        assert set(manifest["runtime_seconds"]) == {"2", "4"}

    def test_cosine_sweep_decreases(self, harness):
        result = harness.run_homogenization_sweep(_sweep_config(COSINE, (2, 4, 7)))
        l4 = result.column("l4_diff")
        assert all(value > 0 for value in l4)
        assert l4[0] > l4[-1]
        assert result.homogenized.mass_initial == pytest.approx(result.homogenized.mass_final, rel=1e-10)

    def test_failed_member_is_isolated(self, harness, test_storage, mocker):
        def flaky(spec, n, reference, method):
            if n == 4:
                raise RuntimeError("boom")
            return 0.0

        mocker.patch("harness.duhamel_error", side_effect=flaky)
        result = harness.run_homogenization_sweep(_sweep_config(COSINE, (2, 4, 6)))
        failed = [row for row in result.rows if row.failed]
        assert [row.n for row in failed] == [4]
        assert "RuntimeError: boom" in failed[0].error
        assert math.isnan(failed[0].l4_diff)
        assert not result.rows[0].failed and not result.rows[2].failed
        summary = json.loads(test_storage.path_for("sweep_summary.json").read_text(encoding="utf-8"))
        assert summary["failed"] == [4]

    def test_refinement_column(self, harness, test_storage):
        cfg = SweepConfig(coupling=CONSTANT, n_values=[2, 4], grid=SMALL_GRID, sim=DENSE_RUN)
        result = harness.run_homogenization_sweep(cfg)
        assert result.column("duhamel_refinement") == [0.0, 0.0]
        rows = _read_csv(test_storage.path_for("sweep.csv"))
        column = SWEEP_HEADER.index("duhamel_refinement")
        assert [row[column] for row in rows[1:]] == ["0.0", "0.0"]
        summary = json.loads(test_storage.path_for("sweep_summary.json").read_text(encoding="utf-8"))
        assert summary["refinement_unstable"] == []

    def test_refinement_for_cosine(self, harness):
        cfg = SweepConfig(coupling=COSINE, n_values=[2], grid=SMALL_GRID, sim=DENSE_RUN)
        change = harness.run_homogenization_sweep(cfg).rows[0].duhamel_refinement
        assert math.isfinite(change) and change >= 0

    def test_refinement_needs_even_intervals(self, harness):
        # SHORT_RUN 存 6 个时刻，5 个区间无法两两合并
        result = harness.run_homogenization_sweep(_sweep_config(CONSTANT))
        assert all(math.isnan(value) for value in result.column("duhamel_refinement"))
        assert not any(row.failed for row in result.rows)

    def test_csv_is_deterministic(self, tmp_path):
        cfg = _sweep_config(COSINE)
        outputs = []
        for threads, name in ((1, "a"), (2, "b")):
            storage = DataStorage(str(tmp_path / name))
            ExperimentHarness(storage, threads).run_homogenization_sweep(cfg)
            outputs.append(storage.path_for("sweep.csv").read_bytes())
        assert outputs[0] == outputs[1]


class TestOtherRuns:
    def test_simulation(self, harness, test_storage):
        cfg = SimulateConfig(coupling=COSINE, grid=SMALL_GRID, sim=SHORT_RUN)
        traj, report = harness.run_simulation(cfg)
        assert len(traj) == 6
        assert report.l4_spacetime > 0
        assert (test_storage.path_for("trajectory") / "trajectory.json").exists()
        assert test_storage.path_for("simulate_manifest.json").exists()

    def test_resonance_report(self, harness, test_storage):
        spec = TrigPoly.from_coeffs({(1, 0): 0.5, (-1, 0): 0.5})
        report = harness.run_resonance_report(spec, [4, 8, 16], grid=Grid2D(256, 8 * math.pi))
        assert -2.2 < report.fit.slope < -1.9
        rows = _read_csv(test_storage.path_for("resonance.csv"))
        assert len(rows) == 4
        summary = json.loads(test_storage.path_for("resonance_summary.json").read_text(encoding="utf-8"))
        assert summary["fit"]["slope"] == pytest.approx(report.fit.slope)
        assert summary["uniform_bound"] == pytest.approx(report.uniform_bound)
        assert summary["verdicts"]["quadratic_rate"] is True

    def test_repeated_run_keeps_first_outputs(self, harness, test_storage):
        spec = TrigPoly.from_coeffs({(1, 0): 0.5, (-1, 0): 0.5})
        grid = Grid2D(256, 8 * math.pi)
        harness.run_resonance_report(spec, [4, 8, 16], grid=grid)
        first = test_storage.path_for("resonance.csv").read_bytes()
        with pytest.raises(ValueError):
            harness.run_resonance_report(spec, [2, 4], grid=grid)
        assert test_storage.path_for("resonance.csv").read_bytes() == first

    def test_failed_run_releases_outputs(self, harness, test_storage, mocker):
        mocker.patch("harness.build_resonance_report", side_effect=RuntimeError("boom"))
        spec = TrigPoly.from_coeffs({(1, 0): 0.5, (-1, 0): 0.5})
        with pytest.raises(RuntimeError):
            harness.run_resonance_report(spec, [4, 8])
        mocker.stopall()
        harness.run_resonance_report(spec, [4, 8, 16], grid=Grid2D(256, 8 * math.pi))
        assert test_storage.path_for("resonance_manifest.json").exists()

    def test_alloy_mc(self, harness, test_storage):
        cfg = AlloyMcConfig(
            n_values=[1, 2, 3],
            trials=100,
            grid=GridSettings(points_per_axis=256, side_length=8.0),
        )
        result = harness.run_alloy_mc(cfg)
        assert [e.n for e in result.estimates] == [1, 2, 3]
        assert all(e.trials == 100 for e in result.estimates)
        assert result.fit is not None
        assert len(_read_csv(test_storage.path_for("alloy_mc.csv"))) == 4

    def test_alloy_mc_independent_of_threads(self, tmp_path):
        cfg = AlloyMcConfig(n_values=[2], trials=150, grid=GridSettings(points_per_axis=256, side_length=8.0))
        serial = ExperimentHarness(DataStorage(str(tmp_path / "a")), 1).run_alloy_mc(cfg)
        pooled = ExperimentHarness(DataStorage(str(tmp_path / "b")), 3).run_alloy_mc(cfg)
        assert serial.estimates == pooled.estimates

    def test_blowup_probe(self, harness, test_storage):
        cfg = BlowupConfig(
            coupling=CONSTANT,
            coupling_scale=-1.0,
            sup_threshold=12.0,
            grid={"points_per_axis": 128, "side_length": 8 * math.pi},
            sim=SimSettings(dt=1e-3, T=0.5),
            initial_data={"gaussian": {"amplitude": 4.0}},
        )
        report = harness.run_blowup_probe(cfg)
        assert report.stop_reason is not StopReason.HORIZON
        summary = json.loads(test_storage.path_for("blowup_summary.json").read_text(encoding="utf-8"))
        assert summary["stop_reason"] == report.stop_reason.value
        assert summary["hit_time"] == report.hit_time

    def test_property_suite(self, harness, test_storage, mocker):
        runner = mocker.patch("harness.pytest.main", side_effect=[0, 1])
        ledger = harness.run_property_suite(["spectral", "norms"])
        assert runner.call_count == 2
        assert "spectral and not slow" in runner.call_args_list[0].args[0]
        assert [entry["passed"] for entry in ledger["suites"]] == [True, False]
        assert ledger["passed"] is False
        saved = json.loads(test_storage.path_for("props_ledger.json").read_text(encoding="utf-8"))
        assert saved["suites"][1]["exit_code"] == 1

    def test_rejects_bad_thread_count(self, test_storage):
        with pytest.raises(ValueError):
            ExperimentHarness(test_storage, threads=0)


class TestCommandLine:
    def _config(self, tmp_path, payload):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    def test_sweep_succeeds(self, tmp_path):
        payload = {"coupling": CONSTANT, "n_values": [2], "grid": SMALL_GRID, "sim": SHORT_RUN}
        path = self._config(tmp_path, payload)
        out = tmp_path / "out"
        assert main.main(["sweep", "--config", path, "--out", str(out)]) == main.EXIT_OK
        assert (out / "sweep.csv").exists()

    def test_config_error(self, tmp_path):
        path = self._config(tmp_path, {"coupling": CONSTANT, "unknown": 1})
        assert main.main(["sweep", "--config", path, "--out", str(tmp_path)]) == main.EXIT_CONFIG_ERROR
        missing = str(tmp_path / "missing.json")
        assert main.main(["simulate", "--config", missing]) == main.EXIT_CONFIG_ERROR

    def test_run_failure(self, tmp_path, mocker):
        mocker.patch.object(ExperimentHarness, "run_simulation", side_effect=RuntimeError("boom"))
        path = self._config(tmp_path, {"coupling": CONSTANT, "grid": SMALL_GRID, "sim": SHORT_RUN})
        assert main.main(["simulate", "--config", path, "--out", str(tmp_path)]) == main.EXIT_RUN_FAILURE

    def test_property_failure(self, tmp_path, mocker):
        mocker.patch("harness.pytest.main", return_value=1)
        code = main.main(["props", "--tags", "spectral", "--out", str(tmp_path)])
        assert code == main.EXIT_PROPERTY_FAILURE

    def test_property_success(self, tmp_path, mocker):
        mocker.patch("harness.pytest.main", return_value=0)
        assert main.main(["props", "--tags", "spectral", "--out", str(tmp_path)]) == main.EXIT_OK

    def test_seed_override(self, tmp_path, mocker):
        run = mocker.patch.object(ExperimentHarness, "run_alloy_mc")
        run.return_value.fit = None
        run.return_value.estimates = ()
        grid = {"points_per_axis": 256, "side_length": 8.0}
        path = self._config(tmp_path, {"trials": 100, "n_values": [1, 2, 3], "grid": grid})
        argv = ["alloy-mc", "--config", path, "--seed", "11", "--out", str(tmp_path)]
        assert main.main(argv) == main.EXIT_OK
        assert run.call_args.args[0].coupling.seed == 11

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv(main.THREADS_ENV, "3")
        assert main.default_threads() == 3
        monkeypatch.setenv(main.THREADS_ENV, "many")
        assert main.default_threads() == 1

"""
程序主入口，解析命令行并分派到各个实验
"""

import argparse
import logging
import os
import sys

from pydantic import ValidationError

from config import AlloyMcConfig, BlowupConfig, ResonanceConfig, SimulateConfig, SweepConfig, load_config
from data_storage import DataStorage
from harness import DEFAULT_PROPERTY_TAGS, ExperimentHarness
from utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUN_FAILURE = 2
EXIT_PROPERTY_FAILURE = 3
THREADS_ENV = "HOMOG_THREADS"

CONFIG_MODELS = {
    "simulate": SimulateConfig,
    "sweep": SweepConfig,
    "resonance": ResonanceConfig,
    "alloy-mc": AlloyMcConfig,
    "blowup": BlowupConfig,
}


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning("环境变量 %s=%r 不是整数，使用 1 个线程", THREADS_ENV, value)
        return 1


def parse_arguments(argv=None):
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description="振荡耦合非线性薛定谔方程的均化实验")
    parser.add_argument("--debug", action="store_true", help="启用调试日志")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command in CONFIG_MODELS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", required=True, help="JSON 配置文件")
        sub.add_argument("--out", help="输出目录，覆盖配置中的 outputs")
        sub.add_argument("--threads", type=int, default=None, help=f"线程数，默认取 {THREADS_ENV}")
        sub.add_argument("--seed", type=int, default=None, help="覆盖合金势的随机种子")

    props = subparsers.add_parser("props")
    props.add_argument("--tags", nargs="+", default=list(DEFAULT_PROPERTY_TAGS), help="测试标记")
    props.add_argument("--out", help="输出目录")
    props.add_argument("--threads", type=int, default=None)
    return parser.parse_args(argv)


def _run(harness: ExperimentHarness, command: str, cfg) -> str:
    if command == "simulate":
        _, report = harness.run_simulation(cfg)
        return f"L4={report.l4_spacetime:.6e} Strichartz={report.strichartz:.6e}"
    if command == "sweep":
        result = harness.run_homogenization_sweep(cfg)
        lines = [
            f"n={row.n}: l4_diff={row.l4_diff:.6e} duhamel={row.duhamel_error:.6e}"
            f" refinement={row.duhamel_refinement:.2g}"
            for row in result.rows
        ]
        return "\n".join(lines)
    if command == "resonance":
        report = harness.run_resonance_report(cfg.coupling, cfg.n_values, cfg.radius, cfg.grid.build())
        slope = f"{report.fit.slope:.4f}" if report.fit else "n/a"
        return f"衰减斜率 {slope}"
    if command == "alloy-mc":
        result = harness.run_alloy_mc(cfg)
        slope = f"{result.fit.slope:.4f}" if result.fit else "n/a"
        satisfied = all(e.bound_satisfied for e in result.estimates)
        return f"衰减斜率 {slope}，全部满足上界: {satisfied}"
    report = harness.run_blowup_probe(cfg)
    return f"终止原因 {report.stop_reason.value}，t={report.records[-1].t:.6g}"


def main(argv=None) -> int:
    """主函数，返回退出码"""
    args = parse_arguments(argv)
    setup_logging(args.debug)
    threads = args.threads or default_threads()

    if args.command == "props":
        harness = ExperimentHarness(DataStorage(args.out), threads)
        ledger = harness.run_property_suite(args.tags)
        for entry in ledger["suites"]:
            print(f"{entry['tag']}: {'通过' if entry['passed'] else '失败'}")
        return EXIT_OK if ledger["passed"] else EXIT_PROPERTY_FAILURE

    try:
        cfg = load_config(args.config, CONFIG_MODELS[args.command]).with_seed(args.seed)
    except (OSError, ValidationError, ValueError) as e:
        logger.error("配置错误: %s", e)
        return EXIT_CONFIG_ERROR

    try:
        harness = ExperimentHarness(DataStorage(args.out or cfg.outputs), threads)
        print(_run(harness, args.command, cfg))
    except Exception as e:  # pylint: disable=broad-except
        logger.error("运行失败: %s", e)
        logger.debug("失败详情", exc_info=True)
        return EXIT_RUN_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

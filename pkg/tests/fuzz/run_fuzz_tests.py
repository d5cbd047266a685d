import json
import os
import time
from datetime import datetime

import pytest

FUZZ_TESTS = [
    "tests/fuzz/test_spectral_fuzz.py",
    "tests/fuzz/test_coupling_fuzz.py",
    "tests/fuzz/test_norms_fuzz.py",
    "tests/fuzz/test_storage_fuzz.py",
]
OUTPUT_DIR = "fuzz_results"


def run_fuzz_test(test_file, duration_seconds=3600):
    """在时间预算内以不同的 Hypothesis 种子反复运行单个模糊测试文件

    Args:
        test_file: 测试文件路径
        duration_seconds: 时间预算（秒），至少运行一轮

    Returns:
        轮数、失败种子、耗时与统计文件路径
    """
    print(f"正在运行模糊测试: {test_file}")
    print(f"时间预算: {duration_seconds//3600}小时 {(duration_seconds%3600)//60}分钟")

    crash_dir = os.path.join(OUTPUT_DIR, "crashes")
    os.makedirs(crash_dir, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    test_name = os.path.splitext(os.path.basename(test_file))[0]

    start_time = time.time()
    rounds = 0
    failed_seeds = []
    while True:
        seed = rounds
        result = pytest.main(
            [
                "-q",
                "-o",
                "addopts=",
                test_file,
                f"--hypothesis-seed={seed}",
                "--hypothesis-show-statistics",
                "-p",
                "no:cacheprovider",
            ]
        )
        rounds += 1
        if result != pytest.ExitCode.OK:
            failed_seeds.append(seed)
            crash_file = os.path.join(crash_dir, f"{test_name}_{timestamp}_seed{seed}.json")
            with open(crash_file, "w", encoding="utf-8") as f:
                json.dump(
                    {
                        "test_file": test_file,
                        "seed": seed,
                        "exit_code": int(result),
                        "timestamp": datetime.now().isoformat(),
                        "reproduce": f"pytest {test_file} --hypothesis-seed={seed}",
                    },
                    f,
                    indent=2,
                    ensure_ascii=False,
                )
            print(f"种子 {seed} 发现失败案例，已保存到: {crash_file}")
        if time.time() - start_time >= duration_seconds:
            break

    elapsed_time = time.time() - start_time
    stats_file = os.path.join(OUTPUT_DIR, f"{test_name}_{timestamp}_stats.json")
    stats = {
        "test_file": test_file,
        "start_time": datetime.fromtimestamp(start_time).isoformat(),
        "end_time": datetime.now().isoformat(),
        "duration_seconds": elapsed_time,
        "rounds": rounds,
        "failed_seeds": failed_seeds,
        "passed": not failed_seeds,
    }
    with open(stats_file, "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2, ensure_ascii=False)
    print(f"统计信息已保存到: {stats_file}")

    return {
        "crash_count": len(failed_seeds),
        "rounds": rounds,
        "duration": elapsed_time,
        "stats_file": stats_file,
    }


def main():
    """主函数，依次运行所有模糊测试"""
    print("=== 均化实验工具包 Hypothesis 模糊测试 ===")

    # 每个文件的时间预算（秒）
    duration = int(os.environ.get("FUZZ_SECONDS", 3600))

    results = {}
    total_crashes = 0

    for test_file in FUZZ_TESTS:
        if not os.path.exists(test_file):
            print(f"警告: 模糊测试文件不存在: {test_file}")
            continue

        print(f"\n{'=' * 60}")
        print(f"开始测试: {test_file}")
        print(f"{'=' * 60}")

        try:
            result = run_fuzz_test(test_file, duration)
        except Exception as e:  # pylint: disable=broad-except
            print(f"运行模糊测试时出错: {e}")
            continue
        results[test_file] = result
        total_crashes += result["crash_count"]

    print(f"\n{'=' * 60}")
    print("模糊测试完成！")
    print(f"总测试文件: {len(results)}")
    print(f"总轮数: {sum(r['rounds'] for r in results.values())}")
    print(f"失败轮数: {total_crashes}")

    if total_crashes > 0:
        print(f"⚠️  检测到失败！请检查 {OUTPUT_DIR}/crashes/ 目录")
    else:
        print("✅  未检测到失败，数值恒等式全部成立")

    print(f"详细结果请查看 {OUTPUT_DIR}/ 目录")


if __name__ == "__main__":
    main()

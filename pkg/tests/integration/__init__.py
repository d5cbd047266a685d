import json
import math

from config import GridSettings, SimSettings


class BaseIntegrationTest:
    """集成测试基础类，提供共享功能"""

    COSINE = {
        "kind": "trig_poly",
        "terms": [
            {"k": [0, 0], "re": 1.0},
            {"k": [1, 0], "re": 0.5},
            {"k": [-1, 0], "re": 0.5},
        ],
    }

    @staticmethod
    def acceptance_grid(points_per_axis=512, side_length=16 * math.pi):
        """验收规模的网格设置"""
        return GridSettings(points_per_axis=points_per_axis, side_length=side_length)

    @staticmethod
    def acceptance_run(dt=1e-3, T=1.0, store_every=10):
        """验收规模的时间积分设置"""
        return SimSettings(dt=dt, T=T, store_every=store_every)

    @staticmethod
    def write_config(directory, name, payload):
        """把配置写成 JSON 文件
        Args:
            directory: 目标目录
            name: 文件名
            payload: 配置内容（字典或 pydantic 模型）
        """
        if hasattr(payload, "model_dump"):
            payload = payload.model_dump(mode="json")
        path = directory / name
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
        return path

    @staticmethod
    def assert_strictly_decreasing(values):
        assert all(a > b for a, b in zip(values, values[1:])), f"序列未严格递减: {values}"

    @staticmethod
    def read_manifest(storage, command):
        return json.loads(storage.path_for(f"{command}_manifest.json").read_text(encoding="utf-8"))

"""
数据存储模块，负责场、轨迹与实验结果的持久化

场文件格式：第一行为 JSON 头 {"grid": {"N_g", "L"}, "name", "time"}，
随后是 N_g×N_g 个小端 complex128，行优先。
"""

import csv
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Set

import numpy as np

from solver import SimConfig, Trajectory
from spectral import ComplexField, Grid2D
from utils import ensure_directory_exists

logger = logging.getLogger(__name__)

FIELD_DTYPE = np.dtype("<c16")
FIELD_SUFFIX = ".field"
TRAJECTORY_INDEX = "trajectory.json"


def write_field(path, field: ComplexField, name: str = "", time: float = 0.0) -> Path:
    """按二进制场格式写出单个场"""
    header = {
        "grid": field.grid.describe(),
        "name": name,
        "time": float(time),
    }
    path = Path(path)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(field.values, dtype=FIELD_DTYPE).tobytes())
    return path


def read_field_with_header(path):
    """读取场文件，返回 (场, 头信息)

    Raises:
        ValueError: 头信息缺失或数据长度与网格不符
    """
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        grid = Grid2D(int(header["grid"]["N_g"]), float(header["grid"]["L"]))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"场文件 {path} 的头信息无效: {e}") from e
    expected = grid.points_per_axis**2 * FIELD_DTYPE.itemsize
    if len(payload) != expected:
        raise ValueError(f"场文件 {path} 数据长度 {len(payload)} 与网格不符（应为 {expected}）")
    values = np.frombuffer(payload, dtype=FIELD_DTYPE).reshape(grid.shape)
    return ComplexField(grid, values), header


def read_field(path) -> ComplexField:
    return read_field_with_header(path)[0]


class DataStorage:
    """实验输出目录的封装"""

    def __init__(self, output_dir: str = None):
        """初始化输出目录

        Args:
            output_dir: 输出目录，如果为None则使用程序目录下的 results
        """
        if output_dir is None:
            base_dir = os.path.dirname(os.path.abspath(__file__))
            output_dir = os.path.join(base_dir, "results")
        self.output_dir = ensure_directory_exists(output_dir)
        self._registered: Set[str] = set()
        self._reserved: Set[str] = set()

    def path_for(self, file_name: str) -> Path:
        return self.output_dir / file_name

    @contextmanager
    def reserved_outputs(self, names: Sequence[str]):
        """在写出任何文件之前预留输出名，已登记或已预留的名字立即被拒绝

        块内异常时释放预留；正常结束时未被清单登记的名字同样释放。

        Raises:
            ValueError: 输出已被登记或正被另一次运行预留
        """
        taken = (self._registered | self._reserved).intersection(names)
        if taken:
            raise ValueError(f"输出已被登记: {sorted(taken)}")
        self._reserved.update(names)
        try:
            yield
        finally:
            self._reserved.difference_update(names)

    def save_field(self, field: ComplexField, name: str, time: float = 0.0) -> Path:
        """保存单个场到 <name>.field

        Returns:
            写出的文件路径
        """
        path = write_field(self.path_for(name + FIELD_SUFFIX), field, name, time)
        logger.debug("已保存场 %s", path)
        return path

    def load_field(self, path) -> ComplexField:
        return read_field(path)

    def save_trajectory(self, traj: Trajectory, name: str) -> Path:
        """保存轨迹为目录：每个时刻一个场文件，外加索引 trajectory.json

        若轨迹带有积分配置，耦合场另存为 coupling.field，加载时据此重建配置。
        """
        directory = self.path_for(name)
        directory.mkdir(parents=True, exist_ok=True)
        frames = []
        for index, (t, field) in enumerate(zip(traj.times, traj.fields)):
            frame = f"frame_{index:05d}{FIELD_SUFFIX}"
            write_field(directory / frame, field, name, t)
            frames.append(frame)

        index = {
            "grid": traj.grid.describe(),
            "times": [float(t) for t in traj.times],
            "frames": frames,
            "config": None,
        }
        if traj.config is not None:
            write_field(directory / "coupling.field", traj.config.coupling_field, "coupling")
            index["config"] = traj.config.describe()
        with open(directory / TRAJECTORY_INDEX, "w", encoding="utf-8") as f:
            json.dump(index, f, indent=2, sort_keys=True)
        logger.info("已保存轨迹 %s（%d 个时刻）", directory, len(frames))
        return directory

    def load_trajectory(self, directory) -> Trajectory:
        directory = Path(directory)
        with open(directory / TRAJECTORY_INDEX, encoding="utf-8") as f:
            index = json.load(f)
        fields = [read_field(directory / frame) for frame in index["frames"]]
        config = None
        settings = index.get("config")
        if settings is not None:
            config = SimConfig(
                fields[0].grid,
                dt=settings["dt"],
                T=settings["T"],
                store_every=settings["store_every"],
                g_field=read_field(directory / "coupling.field"),
                dealias=settings["dealias"],
            )
        return Trajectory.from_fields(fields, index["times"], config)

    def export_to_csv(self, file_name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """将表格导出为CSV文件

        Args:
            file_name: 输出目录下的文件名
            header: 表头
            rows: 数据行
        """
        path = self.path_for(file_name)
        with open(path, "w", newline="", encoding="utf-8") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
        return path

    def save_json(self, file_name: str, payload) -> Path:
        path = self.path_for(file_name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        return path

    def write_manifest(
        self,
        file_name: str,
        command: str,
        config_hash: str,
        outputs: List[Path],
        versions: dict,
        wall_clock_seconds: float,
        extra: Optional[dict] = None,
    ) -> Path:
        """写出运行清单；每个输出文件只能被一个清单引用

        Raises:
            ValueError: 输出已被其他清单登记
        """
        names = [os.path.relpath(p, self.output_dir) for p in outputs]
        duplicated = self._registered.intersection(names)
        if duplicated or len(set(names)) != len(names):
            raise ValueError(f"输出已被登记: {sorted(duplicated) or names}")
        self._registered.update(names)
        manifest = {
            "command": command,
            "config_hash": config_hash,
            "outputs": names,
            "versions": versions,
            "wall_clock_seconds": wall_clock_seconds,
        }
        if extra:
            manifest.update(extra)
        path = self.save_json(file_name, manifest)
        logger.info("已写出清单 %s", path)
        return path

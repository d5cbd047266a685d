"""
实验配置模块

所有配置文件为带 schema_version 的 JSON，未知字段一律报错。
"""

import logging
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from coupling import Alloy, CouplingSpec, check_nyquist, reseed
from data_storage import read_field
from solver import SimConfig
from spectral import ComplexField, Grid2D, GridMismatchError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class _ConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSettings(_ConfigModel):
    points_per_axis: int = 256
    side_length: PositiveFloat = 16 * math.pi

    def build(self) -> Grid2D:
        return Grid2D(self.points_per_axis, self.side_length)

    @model_validator(mode="after")
    def _validate(self):
        self.build()
        return self


class SimSettings(_ConfigModel):
    dt: PositiveFloat = 1e-3
    T: PositiveFloat = 1.0
    store_every: int = Field(default=10, ge=1)
    dealias: bool = False

    def build(self, grid: Grid2D, g_field: Optional[ComplexField] = None) -> SimConfig:
        return SimConfig(grid, self.dt, self.T, self.store_every, g_field, self.dealias)


class GaussianData(_ConfigModel):
    amplitude: PositiveFloat = 1.0
    width: PositiveFloat = 1.0
    center: Tuple[float, float] = (0.0, 0.0)


class InitialData(_ConfigModel):
    """初值：高斯参数或场文件路径，二选一"""

    gaussian: Optional[GaussianData] = None
    field_path: Optional[str] = None

    @model_validator(mode="after")
    def _validate(self):
        if (self.gaussian is None) == (self.field_path is None):
            raise ValueError("initial_data 必须且只能指定 gaussian 或 field_path 之一")
        return self

    def build(self, grid: Grid2D) -> ComplexField:
        if self.gaussian is not None:
            g = self.gaussian
            return ComplexField.gaussian(grid, g.amplitude, g.width, g.center)
        field = read_field(self.field_path)
        if field.grid != grid:
            raise GridMismatchError(f"场文件网格 {field.grid} 与配置网格 {grid} 不一致")
        return field


def _default_initial() -> InitialData:
    return InitialData(gaussian=GaussianData())


class _ExperimentConfig(_ConfigModel):
    schema_version: Literal[1] = 1
    coupling: CouplingSpec
    outputs: Optional[str] = None

    def with_seed(self, seed: Optional[int]):
        if seed is None:
            return self
        return self.model_copy(update={"coupling": reseed(self.coupling, seed)})


def _check_scales(n_values: List[int], coupling, grid: Grid2D):
    if not n_values:
        raise ValueError("n_values 不能为空")
    if any(n < 1 for n in n_values):
        raise ValueError(f"n 必须是正整数: {n_values}")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError(f"n_values 必须严格升序且互不相同: {n_values}")
    for n in n_values:
        check_nyquist(coupling, n, grid)


class SweepConfig(_ExperimentConfig):
    n_values: List[int] = [2, 4, 8, 16]
    grid: GridSettings = GridSettings(points_per_axis=512)
    sim: SimSettings = SimSettings()
    initial_data: InitialData = Field(default_factory=_default_initial)
    duhamel_method: Literal["trapezoid", "filon"] = "trapezoid"

    @model_validator(mode="after")
    def _validate(self):
        _check_scales(self.n_values, self.coupling, self.grid.build())
        return self


class SimulateConfig(_ExperimentConfig):
    n: int = Field(default=1, ge=1)
    grid: GridSettings = GridSettings()
    sim: SimSettings = SimSettings()
    initial_data: InitialData = Field(default_factory=_default_initial)

    @model_validator(mode="after")
    def _validate(self):
        check_nyquist(self.coupling, self.n, self.grid.build())
        return self


class ResonanceConfig(_ExperimentConfig):
    n_values: List[int] = [2, 4, 8, 16]
    radius: Optional[PositiveFloat] = None
    grid: GridSettings = GridSettings(side_length=8 * math.pi)

    @model_validator(mode="after")
    def _validate(self):
        _check_scales(self.n_values, self.coupling, self.grid.build())
        return self


class AlloyMcConfig(_ExperimentConfig):
    coupling: Alloy = Alloy()
    n_values: List[int] = [2, 4, 8]
    cutoff: PositiveFloat = 1.0
    trials: int = Field(default=400, ge=100)
    corner_count: Literal[1, 4] = 1
    grid: GridSettings = GridSettings(points_per_axis=1024, side_length=8.0)

    @model_validator(mode="after")
    def _validate(self):
        _check_scales(self.n_values, self.coupling, self.grid.build())
        return self


class BlowupConfig(_ExperimentConfig):
    n: int = Field(default=1, ge=1)
    alpha: float = 0.0
    coupling_scale: float = 1.0
    sup_threshold: PositiveFloat = 10.0
    tail_limit: float = Field(default=0.01, gt=0, lt=1)
    grid: GridSettings = GridSettings()
    sim: SimSettings = SimSettings()
    initial_data: InitialData = Field(default_factory=_default_initial)

    @model_validator(mode="after")
    def _validate(self):
        check_nyquist(self.coupling, self.n, self.grid.build())
        return self


def load_config(path, model: Type[ModelT]) -> ModelT:
    """读取并校验配置文件

    Raises:
        FileNotFoundError: 文件不存在
        pydantic.ValidationError: JSON 非法、字段不合法或存在未知字段
    """
    text = Path(path).read_text(encoding="utf-8")
    config = model.model_validate_json(text)
    logger.debug("已加载配置 %s (%s)", path, model.__name__)
    return config

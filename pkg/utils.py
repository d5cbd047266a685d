"""
工具函数模块，提供共用的辅助功能
"""

import hashlib
import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Dict

from pydantic import BaseModel

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
TRACKED_PACKAGES = ("numpy", "scipy", "pydantic")


def setup_logging(debug: bool = False):
    """配置根日志记录器

    Args:
        debug: 是否输出 DEBUG 级别日志
    """
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO, format=LOG_FORMAT, force=True)


def config_hash(config) -> str:
    """配置的 SHA-256，基于键排序后的规范 JSON

    Args:
        config: pydantic 模型或可序列化为 JSON 的字典

    Returns:
        十六进制摘要
    """
    if isinstance(config, BaseModel):
        config = config.model_dump(mode="json")
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def environment_versions() -> Dict[str, str]:
    """解释器与数值依赖的版本，写入运行清单"""
    versions = {"python": platform.python_version()}
    for package in TRACKED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def ensure_directory_exists(directory_path) -> Path:
    """创建输出目录（含缺失的父目录），返回其 Path"""
    path = Path(directory_path)
    path.mkdir(parents=True, exist_ok=True)
    return path

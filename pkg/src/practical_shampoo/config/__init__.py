"""
配置管理模块
"""

from .config_manager import ConfigManager
from .settings import (
    RootConfig,
    ShampooConfig,
    BaselineConfig,
    ScheduleConfig,
    SchedulerMode,
    ProblemConfig,
    RunConfig,
    load_run_config
)

__all__ = [
    "ConfigManager",
    "RootConfig",
    "ShampooConfig",
    "BaselineConfig",
    "ScheduleConfig",
    "SchedulerMode",
    "ProblemConfig",
    "RunConfig",
    "load_run_config"
]

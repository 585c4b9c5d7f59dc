"""
配置管理器模块

加载 YAML/JSON 配置，叠加到内置默认值之上，并提供点分隔键的读写。
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from ..utils.exceptions import ConfigException
from ..utils.logger import DEFAULT_FORMAT, get_logger
from .settings import RunConfig, load_run_config

# 仓库自带的默认配置；按顺序查找，第一个存在的文件作为合并基底
BUNDLED_CONFIG_PATHS = (
    Path(__file__).resolve().parents[3] / 'config' / 'config.yaml',
    Path('config') / 'config.yaml',
)


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_path: Optional[str] = None):
        """初始化配置管理器

        Args:
            config_path: 配置文件路径（.yaml/.yml/.json）；为空时只使用默认配置（内置值叠加自带的 config/config.yaml）
        """
        self.logger = get_logger('config')
        self.config_path = Path(config_path) if config_path else None
        self.config: Dict[str, Any] = self._get_default_config()
        if self.config_path is not None:
            self.load_config()

    def load_config(self) -> Dict[str, Any]:
        """加载配置文件并合并到默认配置"""
        assert self.config_path is not None
        if not self.config_path.exists():
            raise ConfigException(f"配置文件不存在: {self.config_path}", field_name='config',
                                  field_value=str(self.config_path))
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                if self.config_path.suffix.lower() == '.json':
                    loaded = json.load(f)
                else:
                    loaded = yaml.safe_load(f)
        except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
            self.logger.error(f"加载配置文件失败: {e}")
            raise ConfigException(f"配置文件解析失败: {e}", field_name='config',
                                  field_value=str(self.config_path)) from e

        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigException("配置文件顶层必须是对象", field_name='config')

        self.config = _deep_merge(self.config, loaded)
        self.logger.debug(f"已加载配置文件: {self.config_path}")
        return self.config

    def save_config(self, path: Optional[str] = None) -> bool:
        """保存配置文件

        Args:
            path: 目标路径，默认写回原文件
        """
        target = Path(path) if path else self.config_path
        if target is None:
            return False
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                if target.suffix.lower() == '.json':
                    json.dump(self.config, f, indent=2, ensure_ascii=False)
                else:
                    yaml.dump(self.config, f, default_flow_style=False,
                              allow_unicode=True, indent=2)
            return True
        except OSError as e:
            self.logger.error(f"保存配置文件失败: {e}")
            return False

    def get_config(self) -> Dict[str, Any]:
        """获取完整配置"""
        return self.config

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置项

        Args:
            key: 配置键，支持点分隔的嵌套键
            default: 默认值

        Returns:
            配置值
        """
        value: Any = self.config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key: str, value: Any) -> None:
        """设置配置项

        Args:
            key: 配置键，支持点分隔的嵌套键
            value: 配置值
        """
        keys = key.split('.')
        target = self.config
        for k in keys[:-1]:
            if not isinstance(target.get(k), dict):
                target[k] = {}
            target = target[k]
        target[keys[-1]] = value

    def get_run_config(self) -> RunConfig:
        """把 run 段校验为 RunConfig

        Returns:
            RunConfig 实例
        """
        run_section = copy.deepcopy(self.get('run', {}))
        run_section.setdefault('logging', self.get('logging', {}))
        return load_run_config(run_section)

    def _get_default_config(self) -> Dict[str, Any]:
        """获取默认配置：内置值叠加自带的 config/config.yaml"""
        defaults = _builtin_defaults()
        for path in BUNDLED_CONFIG_PATHS:
            if path.is_file():
                with open(path, 'r', encoding='utf-8') as f:
                    bundled = yaml.safe_load(f) or {}
                self.logger.debug(f"使用自带默认配置: {path}")
                return _deep_merge(defaults, bundled)
        return defaults


def _builtin_defaults() -> Dict[str, Any]:
    """没有自带配置文件时（如仅安装了 wheel）的兜底默认值"""
    return {
        'system': {
            'name': 'practical-shampoo',
            'version': '1.0.0'
        },
        'logging': {
            'level': 'INFO',
            'format': DEFAULT_FORMAT,
            'file_path': None,
            'max_file_size': '100MB',
            'backup_count': 10
        },
        'run': {}
    }


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并字典，override 优先

    顶层没有 run 段时，视为整个文件就是 RunConfig。
    """
    if 'run' not in override and any(k not in ('system', 'logging') for k in override):
        override = {
            **{k: v for k, v in override.items() if k in ('system', 'logging')},
            'run': {k: v for k, v in override.items() if k not in ('system', 'logging')}
        }
    result = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _merge_nested(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def _merge_nested(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    result = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _merge_nested(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result

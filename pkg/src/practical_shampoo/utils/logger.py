"""
日志系统模块

包根 logger 为 practical_shampoo，各组件通过 get_logger('<组件>') 取子 logger。
逆根在工作线程中计算，默认格式带线程名，便于区分 MainThread 与 root-worker。
"""

import logging
import logging.handlers
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

ROOT_LOGGER_NAME = 'practical_shampoo'
DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(threadName)s - %(levelname)s - %(message)s'
RUN_LOG_NAME = 'run.log'

_SIZE_UNITS = {'KB': 1024, 'MB': 1024 ** 2, 'GB': 1024 ** 3, 'B': 1}


def setup_logger(config: Dict[str, Any]) -> logging.Logger:
    """设置日志系统

    Args:
        config: 日志配置字典（level/format/file_path/max_file_size/backup_count）

    Returns:
        配置好的logger实例
    """
    level = getattr(logging, str(config.get('level', 'INFO')).upper())
    formatter = logging.Formatter(config.get('format') or DEFAULT_FORMAT)
    file_path = config.get('file_path')

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(level)

    # 重复调用时不叠加handler
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if file_path:
        Path(file_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            filename=file_path,
            maxBytes=_parse_size(config.get('max_file_size', '100MB')),
            backupCount=config.get('backup_count', 10),
            encoding='utf-8'
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


@contextmanager
def attach_run_log(out_dir: Union[str, Path], file_name: str = RUN_LOG_NAME) -> Iterator[Path]:
    """在运行期间把包内日志额外写到输出目录下的 run.log

    与 metrics.csv、events.csv 放在一起，记录根任务回退、丢弃与发散等事件。
    同一时间只应有一个带输出目录的运行。

    Args:
        out_dir: 运行输出目录（自动创建）
        file_name: 日志文件名

    Yields:
        日志文件路径
    """
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    log_file = path / file_name
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    handler = logging.FileHandler(log_file, mode='w', encoding='utf-8')
    handler.setFormatter(logging.Formatter(DEFAULT_FORMAT))
    logger.addHandler(handler)
    try:
        yield log_file
    finally:
        logger.removeHandler(handler)
        handler.close()


def _parse_size(size_str: Union[str, int]) -> int:
    """解析文件大小字符串

    Args:
        size_str: 大小字符串，如 '100MB', '1GB', '512'

    Returns:
        字节数
    """
    text = str(size_str).upper().strip()
    for suffix, factor in _SIZE_UNITS.items():
        if text.endswith(suffix):
            return int(float(text[:-len(suffix)].strip()) * factor)
    return int(text)


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """获取logger实例

    Args:
        name: 组件名称，默认为包根logger

    Returns:
        logger实例
    """
    if name:
        return logging.getLogger(f'{ROOT_LOGGER_NAME}.{name}')
    return logging.getLogger(ROOT_LOGGER_NAME)

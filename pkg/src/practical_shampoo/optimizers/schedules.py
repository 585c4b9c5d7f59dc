"""
学习率调度

返回乘在基础学习率上的系数，取值在 (0, 1]。
"""

import math
from typing import Any

from pydantic import ValidationError

from ..config.settings import ScheduleConfig
from ..utils.exceptions import ConfigException


def create_schedule(kind: str = 'constant', **params: Any) -> ScheduleConfig:
    """由调度名称与参数构建 ScheduleConfig

    Args:
        kind: constant / linear_warmup / quadratic_warmup / rsqrt_decay / staircase
        **params: ScheduleConfig 的其余字段

    Returns:
        ScheduleConfig
    """
    try:
        return ScheduleConfig(kind=kind, **params)  # type: ignore[arg-type]
    except ValidationError as e:
        raise ConfigException(f"学习率调度配置非法: {kind}", field_name='schedule', field_value=kind) from e


def _warmup(t: int, steps: int) -> float:
    if steps <= 0:
        return 1.0
    return min(1.0, t / steps)


def learning_rate_schedule(t: int, schedule: ScheduleConfig) -> float:
    """第 t 步（从 1 开始）的学习率系数

    Args:
        t: 步数
        schedule: 调度配置

    Returns:
        系数
    """
    if t < 1:
        raise ConfigException(f"调度步数必须 ≥ 1: {t}", field_name='t', field_value=t)

    kind = schedule.kind
    if kind == 'constant':
        return 1.0
    if kind == 'linear_warmup':
        return _warmup(t, schedule.warmup_steps)
    if kind == 'quadratic_warmup':
        return _warmup(t, schedule.warmup_steps) ** 2
    if kind == 'rsqrt_decay':
        d = max(schedule.warmup_steps, 1)
        return math.sqrt(d / max(t, d))
    if kind == 'staircase':
        epoch = t / schedule.steps_per_epoch
        drops = sum(1 for boundary in schedule.decay_boundaries if epoch >= boundary)
        return _warmup(t, schedule.warmup_steps) * schedule.decay_factor ** (-drops)
    raise ConfigException(f"未知的学习率调度: {kind}", field_name='kind', field_value=kind)

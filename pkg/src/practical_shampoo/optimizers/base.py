"""
优化器公共接口
"""

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ..config.settings import ScheduleConfig
from ..utils.exceptions import DimensionException, NumericalException
from ..utils.logger import get_logger
from .schedules import learning_rate_schedule

Params = List[npt.NDArray[np.float64]]


@dataclass
class StepStats:
    """单步汇总指标，供训练循环写入 metrics.csv"""
    eta_t_mean: float
    sign_flip_fraction_mean: float = 0.0
    staleness_mean: float = 0.0
    stats_ms: float = 0.0
    precond_grad_ms: float = 0.0
    root_adopt_events: int = 0


def elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


class Optimizer(ABC):
    """所有优化器的基类

    参数以 float64 数组列表传入，step 原地更新参数。
    """

    name = 'optimizer'

    def __init__(self, shapes: Sequence[Sequence[int]], schedule: Optional[ScheduleConfig] = None,
                 record_timings: bool = False):
        """初始化优化器

        Args:
            shapes: 各参数张量的形状
            schedule: 学习率调度，默认常数
            record_timings: 是否测量分阶段耗时
        """
        self.shapes: List[Tuple[int, ...]] = [tuple(int(d) for d in s) for s in shapes]
        self.schedule = schedule or ScheduleConfig()
        self.record_timings = record_timings
        self.t = 0
        self.logger = get_logger(f'optimizer.{self.name}')

    def step(self, params: Params, grads: Sequence[npt.ArrayLike]) -> StepStats:
        """执行一步更新

        Args:
            params: 参数列表（原地更新）
            grads: 与参数同形状的梯度列表

        Returns:
            StepStats
        """
        if len(params) != len(self.shapes) or len(grads) != len(self.shapes):
            raise DimensionException("参数或梯度个数与优化器不一致",
                                     expected=len(self.shapes), actual=(len(params), len(grads)))
        checked = []
        for shape, param, grad in zip(self.shapes, params, grads):
            g = np.asarray(grad, dtype=np.float64)
            if g.shape != shape or param.shape != shape:
                raise DimensionException("梯度形状不一致", expected=shape, actual=g.shape)
            if not np.all(np.isfinite(g)):
                raise NumericalException("梯度包含非有限值", calculation_type=self.name)
            checked.append(g)

        self.t += 1
        multiplier = learning_rate_schedule(self.t, self.schedule)
        return self._apply(params, checked, multiplier)

    @abstractmethod
    def _apply(self, params: Params, grads: List[npt.NDArray[np.float64]], multiplier: float) -> StepStats:
        """子类实现具体的更新规则"""

    def state_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 't': self.t}

    def close(self) -> None:
        """释放后台资源"""

    def __enter__(self) -> 'Optimizer':
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

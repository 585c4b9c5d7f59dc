"""
优化器工厂
"""

from typing import Optional, Sequence

from ..config.settings import RunConfig
from ..scheduler.root_scheduler import RootScheduler
from .base import Optimizer
from .baselines import Adam, DiagonalAdaGrad, SGDMomentum
from .shampoo import ShampooOptimizer


def create_optimizer(cfg: RunConfig, shapes: Sequence[Sequence[int]],
                     scheduler: Optional[RootScheduler] = None) -> Optimizer:
    """按运行配置创建优化器

    Args:
        cfg: 运行配置
        shapes: 参数形状列表
        scheduler: Shampoo 使用的根调度器，缺省按 cfg.scheduler 创建

    Returns:
        Optimizer 实例
    """
    timings = cfg.timings_enabled
    if cfg.optimizer == 'shampoo':
        return ShampooOptimizer(shapes, cfg.shampoo, cfg.schedule, scheduler=scheduler,
                                mode=cfg.scheduler, record_timings=timings)
    if cfg.optimizer == 'adagrad':
        return DiagonalAdaGrad(shapes, cfg.baseline, cfg.schedule, timings)
    if cfg.optimizer == 'adam':
        return Adam(shapes, cfg.baseline, cfg.schedule, timings)
    return SGDMomentum(shapes, cfg.baseline, cfg.schedule, timings)

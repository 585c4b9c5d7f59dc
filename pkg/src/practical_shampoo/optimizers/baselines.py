"""
基线优化器

对角 AdaGrad（带动量）、Adam、SGD+Momentum。函数形式的单步更新便于与
Shampoo 的嫁接分支逐位对比；类形式实现统一的 Optimizer 接口。
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ..config.settings import BaselineConfig, ScheduleConfig
from ..linalg.dense_core import Matrix, elementwise_power
from ..utils.exceptions import DimensionException
from .base import Optimizer, Params, StepStats


def _same_shape(*arrays: npt.NDArray[np.float64]) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionException("缓冲区形状不一致", expected=arrays[0].shape, actual=sorted(shapes))


def adagrad_step(accum: npt.NDArray[np.float64], grad: npt.NDArray[np.float64], eta: float, beta1: float,
                 momentum: npt.NDArray[np.float64],
                 floor_d: float = 1e-30) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """对角 AdaGrad 一步

    Args:
        accum: 已包含本步 G∘G 的累加器
        grad: 梯度
        eta: 学习率
        beta1: 动量系数
        momentum: 上一步动量
        floor_d: 累加器下限

    Returns:
        (delta, 新动量)
    """
    _same_shape(accum, grad, momentum)
    direction = grad * np.reshape(elementwise_power(np.reshape(accum, (1, -1)), -0.5, floor=floor_d), grad.shape)
    new_momentum = beta1 * momentum + (1.0 - beta1) * direction
    return -eta * new_momentum, new_momentum


def adam_step(m: npt.NDArray[np.float64], v: npt.NDArray[np.float64], grad: npt.NDArray[np.float64],
              t: int, eta: float, beta1: float, beta2: float,
              eps: float = 1e-8) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """带偏差修正的 Adam 一步

    Returns:
        (delta, 新一阶矩, 新二阶矩)
    """
    _same_shape(m, v, grad)
    new_m = beta1 * m + (1.0 - beta1) * grad
    new_v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = new_m / (1.0 - beta1 ** t)
    v_hat = new_v / (1.0 - beta2 ** t)
    return -eta * m_hat / (np.sqrt(v_hat) + eps), new_m, new_v


def sgd_momentum_step(velocity: npt.NDArray[np.float64], grad: npt.NDArray[np.float64], eta: float,
                      beta1: float, weight_decay: float = 0.0,
                      params: Optional[npt.NDArray[np.float64]] = None
                      ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """重球动量 SGD：vel = β₁·vel + G + wd·W，delta = −η·vel"""
    _same_shape(velocity, grad)
    step_grad = grad
    if weight_decay and params is not None:
        step_grad = grad + weight_decay * params
    new_velocity = beta1 * velocity + step_grad
    return -eta * new_velocity, new_velocity


class _BaselineOptimizer(Optimizer):

    def __init__(self, shapes: Sequence[Sequence[int]], cfg: Optional[BaselineConfig] = None,
                 schedule: Optional[ScheduleConfig] = None, record_timings: bool = False):
        super().__init__(shapes, schedule, record_timings)
        self.cfg = cfg or BaselineConfig()

    def _zeros(self) -> List[Matrix]:
        return [np.zeros(shape) for shape in self.shapes]


class DiagonalAdaGrad(_BaselineOptimizer):
    """对角 AdaGrad，L2 项在累加前加到梯度上"""

    name = 'adagrad'

    def __init__(self, shapes: Sequence[Sequence[int]], cfg: Optional[BaselineConfig] = None,
                 schedule: Optional[ScheduleConfig] = None, record_timings: bool = False):
        super().__init__(shapes, cfg, schedule, record_timings)
        self.accum = self._zeros()
        self.momentum = self._zeros()

    def _apply(self, params: Params, grads: List[npt.NDArray[np.float64]], multiplier: float) -> StepStats:
        eta = self.cfg.eta * multiplier
        for i, (param, grad) in enumerate(zip(params, grads)):
            g = grad + self.cfg.weight_decay * param if self.cfg.weight_decay else grad
            self.accum[i] = self.accum[i] + g * g
            delta, self.momentum[i] = adagrad_step(self.accum[i], g, eta, self.cfg.beta1,
                                                   self.momentum[i], self.cfg.floor_d)
            param += delta
        return StepStats(eta_t_mean=eta)


class Adam(_BaselineOptimizer):
    """Adam，L2 项加到梯度上"""

    name = 'adam'

    def __init__(self, shapes: Sequence[Sequence[int]], cfg: Optional[BaselineConfig] = None,
                 schedule: Optional[ScheduleConfig] = None, record_timings: bool = False):
        super().__init__(shapes, cfg, schedule, record_timings)
        self.m = self._zeros()
        self.v = self._zeros()

    def _apply(self, params: Params, grads: List[npt.NDArray[np.float64]], multiplier: float) -> StepStats:
        eta = self.cfg.eta * multiplier
        for i, (param, grad) in enumerate(zip(params, grads)):
            g = grad + self.cfg.weight_decay * param if self.cfg.weight_decay else grad
            delta, self.m[i], self.v[i] = adam_step(self.m[i], self.v[i], g, self.t, eta,
                                                    self.cfg.beta1, self.cfg.beta2, self.cfg.eps)
            param += delta
        return StepStats(eta_t_mean=eta)


class SGDMomentum(_BaselineOptimizer):
    """SGD + 重球动量"""

    name = 'sgd'

    def __init__(self, shapes: Sequence[Sequence[int]], cfg: Optional[BaselineConfig] = None,
                 schedule: Optional[ScheduleConfig] = None, record_timings: bool = False):
        super().__init__(shapes, cfg, schedule, record_timings)
        self.velocity = self._zeros()

    def _apply(self, params: Params, grads: List[npt.NDArray[np.float64]], multiplier: float) -> StepStats:
        eta = self.cfg.eta * multiplier
        for i, (param, grad) in enumerate(zip(params, grads)):
            delta, self.velocity[i] = sgd_momentum_step(self.velocity[i], grad, eta, self.cfg.beta1,
                                                        self.cfg.weight_decay, param)
            param += delta
        return StepStats(eta_t_mean=eta)

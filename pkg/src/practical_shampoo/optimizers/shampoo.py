"""
Practical Shampoo 更新规则

每个块的更新：
    M_t = β₁·M_{t−1} + (1−β₁)·(G / √max(D, floor))           对角嫁接方向
    P_t = β₁·P_{t−1} + (1−β₁)·(root_L · G · root_R)           预条件方向
    delta = −(η·‖M_t‖_F) · P_t / ‖P_t‖_F                       t > τ 且已有逆根
    delta = −η·M_t                                              否则
"""

import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ..config.settings import ScheduleConfig, SchedulerMode, ShampooConfig
from ..linalg.dense_core import Matrix, elementwise_power, frobenius_norm
from ..scheduler.root_scheduler import RootScheduler, create_root_scheduler
from ..utils.exceptions import NumericalException
from .base import Optimizer, Params, StepStats, elapsed_ms
from .partitioner import PartitionPlan, plan_partition
from .preconditioner_state import PreconditionerState, check_gradient, update_diagonal, update_statistics


@dataclass(frozen=True)
class UpdateReport:
    """单个块一步更新的结果"""
    delta: Matrix
    eta_t: float
    graft_norm: float
    precond_norm: float
    sign_flip_fraction: float
    preconditioned: bool = False


def grafted_direction(state: PreconditionerState, grad: Matrix, floor_d: float = 1e-30) -> Matrix:
    """对角 AdaGrad 方向 D^(∘−1/2) ∘ G"""
    return grad * elementwise_power(state.D, -0.5, floor=floor_d)


def preconditioned_gradient(state: PreconditionerState, grad: Matrix) -> Matrix:
    """root_L · G · root_R，未预条件或缺失的一侧省略"""
    out = grad
    if state.precondition_left and state.root_L is not None:
        out = state.root_L @ out
    if state.precondition_right and state.root_R is not None:
        out = out @ state.root_R
    return out


def sign_flip_fraction(grad: Matrix, precond: Matrix) -> float:
    """预条件后符号翻转的坐标比例，两者任一为零的坐标不计"""
    mask = (grad != 0.0) & (precond != 0.0)
    if not mask.any():
        return 0.0
    return float(np.mean(np.sign(grad[mask]) != np.sign(precond[mask])))


def offdiagonal_energy(root: Optional[Matrix]) -> float:
    """‖root − diag(root)‖_F / ‖root‖_F，对角矩阵为 0"""
    if root is None:
        return 0.0
    total = frobenius_norm(root)
    if total == 0.0:
        return 0.0
    return frobenius_norm(root - np.diag(np.diag(root))) / total


def shampoo_step(state: PreconditionerState, grad: npt.ArrayLike, t: int, cfg: ShampooConfig,
                 schedule_multiplier: float = 1.0) -> Tuple[Matrix, UpdateReport]:
    """计算一个块的 Shampoo 更新量

    调用前统计量已用本步梯度更新（update_statistics、update_diagonal）。
    逆根可能过期，也可能尚不存在。

    Args:
        state: 块状态，原地更新 M、P
        grad: 本步梯度块
        t: 当前步数（从 1 开始）
        cfg: Shampoo 配置
        schedule_multiplier: 学习率调度系数

    Returns:
        (delta, UpdateReport)
    """
    g = check_gradient(state, grad)
    eta_base = cfg.eta0 * schedule_multiplier
    beta1 = cfg.beta1

    direction = grafted_direction(state, g, cfg.floor_d)
    state.M = beta1 * state.M + (1.0 - beta1) * direction
    graft_norm = frobenius_norm(state.M)

    report: Optional[UpdateReport] = None
    if t > cfg.tau and state.has_roots and state.preconditioned_sides:
        precond = preconditioned_gradient(state, g)
        if not np.all(np.isfinite(precond)):
            raise NumericalException(f"块 {state.tensor_id} 第 {t} 步预条件方向包含非有限值",
                                     calculation_type='shampoo_step')
        state.P = beta1 * state.P + (1.0 - beta1) * precond
        precond_norm = frobenius_norm(state.P)
        if cfg.graft_momentum:
            numerator, denominator = graft_norm, precond_norm
        else:
            numerator, denominator = frobenius_norm(direction), frobenius_norm(precond)
        if precond_norm > 0.0 and denominator > 0.0:
            delta = -(eta_base * numerator) * (state.P / denominator)
            report = UpdateReport(
                delta=delta,
                eta_t=eta_base * numerator / denominator,
                graft_norm=graft_norm,
                precond_norm=precond_norm,
                sign_flip_fraction=sign_flip_fraction(g, precond),
                preconditioned=True
            )

    if report is None:
        delta = -eta_base * state.M
        report = UpdateReport(
            delta=delta,
            eta_t=eta_base,
            graft_norm=graft_norm,
            precond_norm=frobenius_norm(state.P),
            sign_flip_fraction=0.0
        )

    if not np.all(np.isfinite(report.delta)):
        raise NumericalException(f"块 {state.tensor_id} 第 {t} 步更新量包含非有限值",
                                 calculation_type='shampoo_step')
    return report.delta, report


class ShampooOptimizer(Optimizer):
    """分块 Shampoo 优化器

    按 PartitionPlan 把每个参数切成块，每块持有独立的 PreconditionerState；
    逆根由 RootScheduler 在 κ 步边界提交与收取。
    """

    name = 'shampoo'

    def __init__(self, shapes: Sequence[Sequence[int]], cfg: Optional[ShampooConfig] = None,
                 schedule: Optional[ScheduleConfig] = None,
                 scheduler: Optional[RootScheduler] = None,
                 mode: Optional[SchedulerMode] = None,
                 record_timings: bool = False):
        """初始化优化器

        Args:
            shapes: 参数形状列表
            cfg: Shampoo 配置
            schedule: 学习率调度
            scheduler: 外部提供的根调度器；缺省时按 mode 创建并由本对象关闭
            mode: 调度模式
            record_timings: 是否测量分阶段耗时
        """
        super().__init__(shapes, schedule, record_timings)
        self.cfg = cfg or ShampooConfig()
        self.plans: List[PartitionPlan] = [plan_partition(shape, self.cfg) for shape in self.shapes]
        self.states: Dict[str, PreconditionerState] = {}
        self.block_ids: List[List[str]] = []
        for i, plan in enumerate(self.plans):
            ids = []
            for block in plan.blocks:
                block_id = f"p{i}.b{block.index}"
                self.states[block_id] = PreconditionerState.create(
                    block_id, block.shape, plan.exponents, self.cfg.eps_stat)
                ids.append(block_id)
            self.block_ids.append(ids)

        self._owns_scheduler = scheduler is None
        self.scheduler = scheduler or create_root_scheduler(self.cfg, mode or SchedulerMode(),
                                                            record_timings=record_timings)
        self.logger.info(f"Shampoo 初始化完成: {len(self.shapes)} 个参数, {len(self.states)} 个块")

    def _apply(self, params: Params, grads: List[npt.NDArray[np.float64]], multiplier: float) -> StepStats:
        cfg = self.cfg
        timing = self.record_timings

        start = time.perf_counter() if timing else 0.0
        matrices: List[Matrix] = []
        for plan, ids, param, grad in zip(self.plans, self.block_ids, params, grads):
            g = grad.reshape(plan.shape)
            if cfg.weight_decay:
                g = g + cfg.weight_decay * param.reshape(plan.shape)
            for block_id, block in zip(ids, plan.blocks):
                block_grad = g[block.slices()]
                state = self.states[block_id]
                update_statistics(state, block_grad, cfg.beta2)
                update_diagonal(state, block_grad)
            matrices.append(g)
        stats_ms = elapsed_ms(start) if timing else 0.0

        events = self.scheduler.on_step(self.t, self.states)

        start = time.perf_counter() if timing else 0.0
        etas: List[float] = []
        flips: List[float] = []
        staleness: List[float] = []
        for plan, ids, param, g in zip(self.plans, self.block_ids, params, matrices):
            delta = np.zeros(plan.shape)
            for block_id, block in zip(ids, plan.blocks):
                state = self.states[block_id]
                block_delta, report = shampoo_step(state, g[block.slices()], self.t, cfg, multiplier)
                delta[block.slices()] = block_delta
                etas.append(report.eta_t)
                if report.preconditioned:
                    flips.append(report.sign_flip_fraction)
                    staleness.append(float(state.staleness or 0))
            param += delta.reshape(param.shape)
        precond_grad_ms = elapsed_ms(start) if timing else 0.0

        return StepStats(
            eta_t_mean=float(np.mean(etas)) if etas else 0.0,
            sign_flip_fraction_mean=float(np.mean(flips)) if flips else 0.0,
            staleness_mean=float(np.mean(staleness)) if staleness else 0.0,
            stats_ms=stats_ms,
            precond_grad_ms=precond_grad_ms,
            root_adopt_events=len(events)
        )

    def offdiagonal_energies(self) -> Dict[str, float]:
        """各块当前逆根的非对角能量（两侧取平均）"""
        energies = {}
        for block_id, state in self.states.items():
            values = [offdiagonal_energy(root) for root in (state.root_L, state.root_R) if root is not None]
            if values:
                energies[block_id] = float(np.mean(values))
        return energies

    def state_dict(self) -> Dict[str, Any]:
        data = super().state_dict()
        data['plans'] = [plan.to_dict() for plan in self.plans]
        data['states'] = {block_id: state.to_dict() for block_id, state in self.states.items()}
        return data

    def load_state_dict(self, data: Dict[str, Any]) -> None:
        """从 state_dict 的输出恢复全部块状态"""
        missing = set(self.states) - set(data['states'])
        if missing:
            raise NumericalException(f"检查点缺少块: {sorted(missing)}", calculation_type='checkpoint')
        self.t = int(data['t'])
        self.states = {block_id: PreconditionerState.from_dict(payload)
                       for block_id, payload in data['states'].items()}

    def close(self) -> None:
        if self._owns_scheduler:
            self.scheduler.close()

"""
训练循环

单线程、确定性的训练驱动：
- 每步：取梯度 → optimizer.step（统计量、逆根调度、参数更新）→ 评估损失
- 逐步记录 MetricsRow，列顺序固定（METRICS_COLUMNS）
- 发散（损失超过阈值或非有限）时中止并记录发散步
- 指定 out_dir 时写出 metrics.csv、summary.json、events.csv、checkpoint.json
"""

import json
import math
import time
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..config.settings import RunConfig
from ..linalg.root_solver import condition_number
from ..optimizers.base import Optimizer, Params, elapsed_ms
from ..optimizers.factory import create_optimizer
from ..optimizers.shampoo import ShampooOptimizer
from ..scheduler.root_scheduler import EVENT_COLUMNS, RootJob, RootResult, create_root_scheduler
from ..utils.exceptions import ConfigException, NumericalException
from ..utils.logger import attach_run_log, get_logger
from .problems import create_problem

logger = get_logger('trainer')

METRICS_COLUMNS = [
    'step',
    'wall_ms',
    'stats_ms',
    'precond_grad_ms',
    'root_adopt_events',
    'train_loss',
    'eval_loss',
    'eta_t_mean',
    'staleness_mean',
    'sign_flip_fraction_mean'
]

StepCallback = Callable[[int, Params, Optimizer], None]
RootFn = Callable[[RootJob], Optional[RootResult]]


@dataclass
class TrainResult:
    """一次训练运行的结果"""
    config: RunConfig
    metrics: pd.DataFrame
    events: pd.DataFrame
    summary: Dict[str, Any]
    params: Params = field(default_factory=list)
    checkpoint: Optional[Dict[str, Any]] = None

    @property
    def diverged(self) -> bool:
        return bool(self.summary['diverged'])

    @property
    def final_loss(self) -> float:
        value = self.summary['final_loss']
        return math.nan if value is None else float(value)

    def steps_to(self, threshold: float) -> Optional[int]:
        """首次达到 eval_loss ≤ threshold 的步数，未达到返回 None"""
        reached = self.metrics.loc[self.metrics['eval_loss'] <= threshold, 'step']
        return int(reached.iloc[0]) if len(reached) else None


def _json_float(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _is_diverged(loss: float, limit: float) -> bool:
    return not math.isfinite(loss) or loss > limit


def train(cfg: RunConfig, root_fn: Optional[RootFn] = None, executor: Optional[Executor] = None,
          step_callback: Optional[StepCallback] = None) -> TrainResult:
    """按配置执行一次训练；设置了 out_dir 时运行日志同时写入 out_dir/run.log

    Args:
        cfg: 运行配置
        root_fn: 替换逆根计算函数（测试与延迟实验用）
        executor: 替换 async 模式的执行器
        step_callback: 每步参数更新后调用 callback(t, params, optimizer)

    Returns:
        TrainResult
    """
    if not cfg.out_dir:
        return _train(cfg, root_fn, executor, step_callback)
    with attach_run_log(cfg.out_dir):
        return _train(cfg, root_fn, executor, step_callback)


def _train(cfg: RunConfig, root_fn: Optional[RootFn], executor: Optional[Executor],
           step_callback: Optional[StepCallback]) -> TrainResult:
    problem = create_problem(cfg.problem, cfg.seed)
    params = problem.init_params()
    rng = np.random.default_rng(cfg.seed)
    timing = cfg.timings_enabled

    scheduler = None
    if cfg.optimizer == 'shampoo' and (root_fn is not None or executor is not None):
        scheduler = create_root_scheduler(cfg.shampoo, cfg.scheduler, executor=executor,
                                          root_fn=root_fn, record_timings=timing)
    optimizer = create_optimizer(cfg, problem.shapes, scheduler=scheduler)

    initial_loss = problem.eval_loss(params)
    thresholds = sorted(set(cfg.loss_thresholds), reverse=True)
    reached: Dict[float, Optional[int]] = {th: None for th in thresholds}
    rows: List[Dict[str, Any]] = []
    divergence_step: Optional[int] = None
    divergence_reason: Optional[str] = None
    pending_roots = 0

    logger.info(f"开始训练: optimizer={cfg.optimizer}, problem={problem.name}, steps={cfg.steps}, "
                f"scheduler={cfg.scheduler.kind}, seed={cfg.seed}")
    try:
        for t in range(1, cfg.steps + 1):
            start = time.perf_counter() if timing else 0.0
            grads, train_loss = problem.stochastic_gradient(params, rng)
            try:
                stats = optimizer.step(params, grads)
            except NumericalException as e:
                divergence_step, divergence_reason = t, 'numerical'
                logger.warning(f"第 {t} 步数值失败，训练中止: {e}")
                break
            eval_loss = problem.eval_loss(params)
            wall_ms = elapsed_ms(start) if timing else 0.0

            rows.append({
                'step': t,
                'wall_ms': wall_ms,
                'stats_ms': stats.stats_ms,
                'precond_grad_ms': stats.precond_grad_ms,
                'root_adopt_events': stats.root_adopt_events,
                'train_loss': train_loss,
                'eval_loss': eval_loss,
                'eta_t_mean': stats.eta_t_mean,
                'staleness_mean': stats.staleness_mean,
                'sign_flip_fraction_mean': stats.sign_flip_fraction_mean
            })
            for th in thresholds:
                if reached[th] is None and eval_loss <= th:
                    reached[th] = t

            if _is_diverged(eval_loss, cfg.divergence_loss):
                divergence_step, divergence_reason = t, 'loss'
                logger.warning(f"第 {t} 步发散: loss={eval_loss}")
                break
            if step_callback is not None:
                step_callback(t, params, optimizer)

        if isinstance(optimizer, ShampooOptimizer):
            pending_roots = len(optimizer.scheduler.drain())
    finally:
        optimizer.close()
        if scheduler is not None:
            scheduler.close()

    metrics = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    if isinstance(optimizer, ShampooOptimizer):
        events = optimizer.scheduler.event_log.to_frame()
    else:
        events = pd.DataFrame(columns=EVENT_COLUMNS)

    final_loss = float(metrics['eval_loss'].iloc[-1]) if len(metrics) else initial_loss
    summary: Dict[str, Any] = {
        'optimizer': cfg.optimizer,
        'problem': problem.name,
        'seed': cfg.seed,
        'steps_requested': cfg.steps,
        'steps_completed': len(metrics),
        'initial_loss': _json_float(initial_loss),
        'final_loss': _json_float(final_loss),
        'best_loss': _json_float(float(metrics['eval_loss'].min())) if len(metrics) else _json_float(initial_loss),
        'diverged': divergence_step is not None,
        'divergence_step': divergence_step,
        'divergence_reason': divergence_reason,
        'steps_to_threshold': {repr(th): step for th, step in reached.items()},
        'scheduler': cfg.scheduler.kind
    }
    checkpoint = None
    if isinstance(optimizer, ShampooOptimizer):
        energies = optimizer.offdiagonal_energies()
        summary['plans'] = [plan.to_dict() for plan in optimizer.plans]
        summary['offdiagonal_energy'] = energies
        summary['offdiagonal_energy_mean'] = float(np.mean(list(energies.values()))) if energies else 0.0
        summary['root_stats'] = asdict(optimizer.scheduler.stats)
        summary['pending_roots'] = pending_roots
    if cfg.checkpoint:
        checkpoint = optimizer.state_dict()

    result = TrainResult(config=cfg, metrics=metrics, events=events, summary=summary,
                         params=params, checkpoint=checkpoint)
    logger.info(f"训练结束: {len(metrics)} 步, final_loss={final_loss:.6g}, diverged={summary['diverged']}")
    if cfg.out_dir:
        write_run_outputs(result, cfg.out_dir)
    return result


def write_run_outputs(result: TrainResult, out_dir: Union[str, Path]) -> Path:
    """写出一次运行的全部产物

    Args:
        result: 训练结果
        out_dir: 输出目录（自动创建）

    Returns:
        输出目录路径
    """
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(path / 'metrics.csv', index=False)
    result.events.to_csv(path / 'events.csv', index=False)
    with open(path / 'summary.json', 'w', encoding='utf-8') as f:
        json.dump(result.summary, f, ensure_ascii=False, indent=2)
    if result.checkpoint is not None:
        with open(path / 'checkpoint.json', 'w', encoding='utf-8') as f:
            json.dump(result.checkpoint, f)
    logger.info(f"运行产物已写入 {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def trace_condition(cfg: RunConfig, block_id: str = 'p0.b0', side: str = 'left',
                    every: int = 1) -> pd.DataFrame:
    """训练过程中记录某个块统计量的条件数

    Args:
        cfg: 运行配置（必须为 shampoo）
        block_id: 块标识，形如 p{参数序号}.b{块序号}
        side: left / right
        every: 采样间隔

    Returns:
        DataFrame，列为 step, condition
    """
    if cfg.optimizer != 'shampoo':
        raise ConfigException("条件数追踪只支持 shampoo", field_name='optimizer', field_value=cfg.optimizer)
    if every < 1:
        raise ConfigException(f"采样间隔必须 ≥ 1: {every}", field_name='every', field_value=every)

    rows: List[Dict[str, Any]] = []

    def record(t: int, params: Params, optimizer: Optimizer) -> None:
        assert isinstance(optimizer, ShampooOptimizer)
        state = optimizer.states.get(block_id)
        if state is None:
            raise ConfigException(f"未知块: {block_id}", field_name='block_id', field_value=block_id)
        stat = state.statistic(side)
        if stat is None:
            raise ConfigException(f"块 {block_id} 的 {side} 侧未做预条件", field_name='side', field_value=side)
        if t % every == 0:
            rows.append({'step': t, 'condition': condition_number(stat)})

    train(cfg.model_copy(update={'out_dir': None, 'checkpoint': False}), step_callback=record)
    return pd.DataFrame(rows, columns=['step', 'condition'])

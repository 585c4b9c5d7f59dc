"""
逆根调度器

训练线程在 κ 步边界提交统计量快照并收取已完成的逆根：
- async：线程池后台计算，训练步从不等待；每个 (块, 侧) 至多一个在途任务，
  排队中的旧任务会被新提交取代
- sync_delayed(d)：边界处同步计算，结果在 d 步之后才收取，轨迹可逐位复现

同一快照的各侧逆根全部就绪后才整体收取（单块原子收取），且只收取更新的快照。
"""

import threading
import time
from concurrent.futures import Executor, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Set, Tuple

import numpy as np
import pandas as pd

from ..config.settings import RootConfig, SchedulerMode, ShampooConfig
from ..linalg.dense_core import Matrix, mat_power_oracle
from ..linalg.root_solver import (
    RootDiagnostics,
    condition_number,
    inverse_pth_root,
    regularized_matrix,
    root_residual,
)
from ..optimizers.preconditioner_state import PreconditionerState, adopt_roots
from ..utils.exceptions import NumericalException, exception_handler
from ..utils.logger import get_logger

logger = get_logger('root_scheduler')

EVENT_COLUMNS = ['step', 'event', 'tensor_id', 'side', 'snapshot_step', 'ms']
RIDGE_RETRY_FACTOR = 10.0
RIDGE_RETRY_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class RootJob:
    """逆根计算任务，snapshot 是只读副本"""
    tensor_id: str
    side: str
    snapshot: Matrix
    snapshot_step: int
    exponent: float
    root_cfg: RootConfig


@dataclass(frozen=True, eq=False)
class RootResult:
    """逆根计算结果"""
    tensor_id: str
    side: str
    root: Matrix
    snapshot_step: int
    diagnostics: RootDiagnostics
    compute_ms: float = 0.0


@dataclass(frozen=True)
class AdoptionEvent:
    """一次块级收取"""
    step: int
    tensor_id: str
    snapshot_step: int
    staleness: int


@dataclass
class SchedulerStats:
    """调度器统计信息"""
    submitted: int = 0
    completed: int = 0
    adopted: int = 0
    dropped: int = 0
    superseded: int = 0


def make_root_job(state: PreconditionerState, side: str, root_cfg: RootConfig) -> RootJob:
    """从块状态截取一侧统计量快照

    Args:
        state: 块状态
        side: left / right
        root_cfg: 基础根配置，p 由该侧指数决定

    Returns:
        RootJob
    """
    stat = state.statistic(side)
    exponent = state.exponent(side)
    if stat is None or exponent is None:
        raise NumericalException(f"块 {state.tensor_id} 的 {side} 侧未做预条件", calculation_type='root_job')
    snapshot = stat.copy()
    snapshot.setflags(write=False)
    p = int(round(-1.0 / exponent))
    return RootJob(
        tensor_id=state.tensor_id,
        side=side,
        snapshot=snapshot,
        snapshot_step=state.stats_step,
        exponent=exponent,
        root_cfg=root_cfg.model_copy(update={'p': p})
    )


@exception_handler((NumericalException,), default_return=None, log_error=False)
def _coupled_newton(snapshot: Matrix, cfg: RootConfig) -> Optional[Tuple[Matrix, RootDiagnostics]]:
    root, diagnostics = inverse_pth_root(snapshot, cfg)
    return (root, diagnostics) if diagnostics.converged else None


@exception_handler((NumericalException,), default_return=None, log_error=False)
def _eig_oracle(snapshot: Matrix, cfg: RootConfig) -> Optional[Tuple[Matrix, RootDiagnostics]]:
    regularized = regularized_matrix(snapshot, cfg)
    root = mat_power_oracle(regularized, -1.0 / cfg.p)
    eigenvalues = np.linalg.eigvalsh(regularized)
    diagnostics = RootDiagnostics(
        iterations=0,
        residual=root_residual(root, regularized, cfg.p),
        lambda_max_estimate=float(eigenvalues[-1]),
        condition_estimate=condition_number(regularized),
        converged=True,
        ridge=float(np.mean(np.diag(regularized) - np.diag(snapshot))),
        method='eig_oracle'
    )
    return root, diagnostics


def compute_root(job: RootJob) -> Optional[RootResult]:
    """带回退链的逆根计算

    耦合牛顿 → 岭放大 10 倍重试 → 特征分解参照 → 放弃（返回 None，保留旧根）。

    Args:
        job: 任务

    Returns:
        RootResult；全部失败时为 None
    """
    start = time.perf_counter()
    cfg = job.root_cfg
    attempt = _coupled_newton(job.snapshot, cfg)

    if attempt is None:
        ridge = cfg.ridge_rel * RIDGE_RETRY_FACTOR if cfg.ridge_rel > 0 else RIDGE_RETRY_FLOOR
        retry_cfg = cfg.model_copy(update={'ridge_rel': ridge})
        logger.warning(f"块 {job.tensor_id} {job.side} 侧逆根未收敛，放大岭到 {ridge:.1e} 重试")
        attempt = _coupled_newton(job.snapshot, retry_cfg)
        if attempt is not None:
            attempt = (attempt[0], replace(attempt[1], method='coupled_newton_ridge_retry'))
        else:
            logger.warning(f"块 {job.tensor_id} {job.side} 侧改用特征分解计算逆根")
            attempt = _eig_oracle(job.snapshot, retry_cfg)

    if attempt is None:
        logger.warning(f"块 {job.tensor_id} {job.side} 侧逆根计算失败，保留旧根")
        return None

    root, diagnostics = attempt
    return RootResult(
        tensor_id=job.tensor_id,
        side=job.side,
        root=root,
        snapshot_step=job.snapshot_step,
        diagnostics=diagnostics,
        compute_ms=(time.perf_counter() - start) * 1000.0
    )


class InlineExecutor(Executor):
    """在提交线程上立即执行的执行器，模拟瞬时完成的工作线程"""

    def __init__(self) -> None:
        self._shutdown = False
        self._lock = threading.Lock()

    def submit(self, fn: Callable[..., Any], /, *args: Any, **kwargs: Any) -> 'Future[Any]':
        with self._lock:
            if self._shutdown:
                raise RuntimeError("执行器已关闭")
        future: 'Future[Any]' = Future()
        future.set_running_or_notify_cancel()
        try:
            future.set_result(fn(*args, **kwargs))
        except BaseException as e:
            future.set_exception(e)
        return future

    def shutdown(self, wait: bool = True, *, cancel_futures: bool = False) -> None:
        with self._lock:
            self._shutdown = True


class WarmStartExecutor(Executor):
    """每个 (块, 侧) 的首个任务在提交线程上同步执行，之后的任务交给线程池

    用于计时实验：训练一开始就有可用的逆根，后续任务不占用训练线程。
    """

    def __init__(self, workers: int = 1):
        self._inline = InlineExecutor()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix='root-worker')
        self._warmed: Set[Tuple[str, str]] = set()

    def submit(self, fn: Callable[..., Any], /, *args: Any, **kwargs: Any) -> 'Future[Any]':
        job = args[0] if args else None
        key = (job.tensor_id, job.side) if isinstance(job, RootJob) else None
        if key is not None and key not in self._warmed:
            self._warmed.add(key)
            return self._inline.submit(fn, *args, **kwargs)
        return self._pool.submit(fn, *args, **kwargs)

    def shutdown(self, wait: bool = True, *, cancel_futures: bool = False) -> None:
        self._inline.shutdown(wait)
        self._pool.shutdown(wait=wait, cancel_futures=cancel_futures)


class EventLog:
    """调度事件记录（submit / supersede / complete / adopt / drop）"""

    def __init__(self, record_timings: bool = True):
        self.record_timings = record_timings
        self._rows: List[Dict[str, Any]] = []

    def record(self, step: int, event: str, tensor_id: str, side: str = '',
               snapshot_step: Optional[int] = None, ms: float = 0.0) -> None:
        self._rows.append({
            'step': step,
            'event': event,
            'tensor_id': tensor_id,
            'side': side,
            'snapshot_step': -1 if snapshot_step is None else snapshot_step,
            'ms': ms if self.record_timings else 0.0
        })

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._rows, columns=EVENT_COLUMNS)

    def write_csv(self, path: Any) -> None:
        self.to_frame().to_csv(path, index=False)

    def __len__(self) -> int:
        return len(self._rows)


class RootScheduler:
    """逆根调度器

    所有公开方法只能由训练线程调用；工作线程只接触 RootJob 与 RootResult。
    """

    def __init__(self, cfg: ShampooConfig, mode: Optional[SchedulerMode] = None,
                 executor: Optional[Executor] = None,
                 root_fn: Callable[[RootJob], Optional[RootResult]] = compute_root,
                 event_log: Optional[EventLog] = None):
        """初始化调度器

        Args:
            cfg: Shampoo 配置（κ、N、根配置）
            mode: async 或 sync_delayed
            executor: async 模式使用的执行器；缺省创建线程池并由本对象关闭
            root_fn: 逆根计算函数
            event_log: 事件记录
        """
        self.cfg = cfg
        self.mode = mode or SchedulerMode()
        self.root_fn = root_fn
        self.event_log = event_log or EventLog()
        self.logger = get_logger('root_scheduler')
        self.stats = SchedulerStats()
        self.current_step = 0

        self._executor = executor
        self._owns_executor = False
        if self.is_async and executor is None:
            workers = self.mode.resolved_workers()
            self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix='root-worker')
            self._owns_executor = True
            self.logger.info(f"逆根线程池已启动: {workers} 个工作线程")

        self._in_flight: Dict[Tuple[str, str], Tuple[RootJob, 'Future[Optional[RootResult]]']] = {}
        self._retired: List[Tuple[RootJob, 'Future[Optional[RootResult]]']] = []
        self._delayed: List[Tuple[int, RootResult]] = []
        self._completed: Dict[Tuple[str, int], Dict[str, RootResult]] = {}
        self._last_submit: Dict[str, int] = {}

    @property
    def is_async(self) -> bool:
        return self.mode.kind == 'async'

    @property
    def in_flight(self) -> int:
        return sum(1 for _, future in self._in_flight.values() if not future.done())

    def on_step(self, t: int, states: Mapping[str, PreconditionerState]) -> List[AdoptionEvent]:
        """训练循环每步调用一次（统计量更新之后、参数更新之前）

        Args:
            t: 当前步数（≥ 1）
            states: 块标识到块状态的映射

        Returns:
            本步发生的收取事件
        """
        self.current_step = t
        boundary = t % self.cfg.kappa == 0
        if self.is_async:
            if not boundary:
                return []
            self._collect()
            events = self._adopt_ready(t, states)
            self._submit_due(t, states)
            return events

        if boundary:
            self._submit_due(t, states)
        self._release_due(t)
        return self._adopt_ready(t, states)

    def submit(self, job: RootJob) -> None:
        """提交任务；同一 (块, 侧) 排队中的旧任务被取代"""
        step = self.current_step
        key = (job.tensor_id, job.side)
        self.stats.submitted += 1
        self.event_log.record(step, 'submit', job.tensor_id, job.side, job.snapshot_step)
        self.logger.debug(f"提交逆根任务 {job.tensor_id}/{job.side} 快照 {job.snapshot_step}")

        if not self.is_async:
            result = self._run_inline(job)
            if result is not None:
                self._delayed.append((step + self.mode.delay_steps, result))
            return

        previous = self._in_flight.get(key)
        if previous is not None and not previous[1].done():
            if previous[1].cancel():
                self.stats.superseded += 1
                self.event_log.record(step, 'supersede', job.tensor_id, job.side, previous[0].snapshot_step)
            else:
                self._retired.append(previous)
        assert self._executor is not None
        self._in_flight[key] = (job, self._executor.submit(self.root_fn, job))

    def drain(self) -> List[RootResult]:
        """等待在途任务完成，返回并清空所有未收取的结果"""
        if self.is_async:
            pending = [future for _, future in list(self._in_flight.values()) + self._retired
                       if not future.cancelled()]
            wait(pending)
            self._collect()
        results = [result for _, result in self._delayed]
        for group in self._completed.values():
            results.extend(group.values())
        self._delayed.clear()
        self._completed.clear()
        return sorted(results, key=lambda r: (r.tensor_id, r.side, r.snapshot_step))

    def close(self) -> None:
        """关闭线程池，不等待运行中的任务"""
        if self._executor is not None and self._owns_executor:
            self._executor.shutdown(wait=False, cancel_futures=True)
            self._owns_executor = False
            self.logger.info("逆根线程池已关闭")

    def __enter__(self) -> 'RootScheduler':
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def _submit_due(self, t: int, states: Mapping[str, PreconditionerState]) -> None:
        interval = self.cfg.effective_root_interval
        for tensor_id, state in states.items():
            sides = state.preconditioned_sides
            if not sides:
                continue
            last = self._last_submit.get(tensor_id)
            if last is not None and t - last < interval:
                continue
            if self.is_async and any(self._is_running((tensor_id, side)) for side in sides):
                self.logger.debug(f"块 {tensor_id} 仍有运行中的任务，跳过本次提交")
                continue
            for side in sides:
                self.submit(make_root_job(state, side, self.cfg.root_cfg))
            self._last_submit[tensor_id] = t

    def _is_running(self, key: Tuple[str, str]) -> bool:
        entry = self._in_flight.get(key)
        return entry is not None and entry[1].running()

    def _run_inline(self, job: RootJob) -> Optional[RootResult]:
        try:
            result = self.root_fn(job)
        except Exception as e:
            self.logger.warning(f"逆根任务 {job.tensor_id}/{job.side} 异常: {e}")
            result = None
        return self._record_completion(job, result)

    def _record_completion(self, job: RootJob, result: Optional[RootResult]) -> Optional[RootResult]:
        if result is None:
            self.stats.dropped += 1
            self.event_log.record(self.current_step, 'drop', job.tensor_id, job.side, job.snapshot_step)
            return None
        self.stats.completed += 1
        self.event_log.record(self.current_step, 'complete', job.tensor_id, job.side,
                              job.snapshot_step, result.compute_ms)
        return result

    def _collect(self) -> None:
        entries = list(self._in_flight.items())
        for key, (job, future) in entries:
            if future.done():
                del self._in_flight[key]
                self._harvest(job, future)
        still_running = []
        for job, future in self._retired:
            if future.done():
                self._harvest(job, future)
            else:
                still_running.append((job, future))
        self._retired = still_running

    def _harvest(self, job: RootJob, future: 'Future[Optional[RootResult]]') -> None:
        if future.cancelled():
            return
        try:
            result = future.result()
        except Exception as e:
            self.logger.warning(f"逆根任务 {job.tensor_id}/{job.side} 异常: {e}")
            result = None
        result = self._record_completion(job, result)
        if result is not None:
            self._completed.setdefault((result.tensor_id, result.snapshot_step), {})[result.side] = result

    def _release_due(self, t: int) -> None:
        remaining = []
        for due, result in self._delayed:
            if due <= t:
                self._completed.setdefault((result.tensor_id, result.snapshot_step), {})[result.side] = result
            else:
                remaining.append((due, result))
        self._delayed = remaining

    def _adopt_ready(self, t: int, states: Mapping[str, PreconditionerState]) -> List[AdoptionEvent]:
        events: List[AdoptionEvent] = []
        for key in sorted(self._completed, key=lambda k: (k[1], k[0])):
            tensor_id, snapshot_step = key
            group = self._completed[key]
            state = states.get(tensor_id)
            if state is None or (state.root_step is not None and snapshot_step <= state.root_step):
                del self._completed[key]
                for side in group:
                    self.stats.dropped += 1
                    self.event_log.record(t, 'drop', tensor_id, side, snapshot_step)
                continue
            if not set(state.preconditioned_sides) <= set(group):
                continue
            del self._completed[key]
            if adopt_roots(state, list(group.values())):
                self.stats.adopted += 1
                self.event_log.record(t, 'adopt', tensor_id, '', snapshot_step)
                events.append(AdoptionEvent(step=t, tensor_id=tensor_id, snapshot_step=snapshot_step,
                                            staleness=t - snapshot_step))
                self.logger.debug(f"第 {t} 步收取块 {tensor_id} 快照 {snapshot_step} 的逆根")
        return events


def create_root_scheduler(cfg: ShampooConfig, mode: Optional[SchedulerMode] = None,
                          executor: Optional[Executor] = None,
                          root_fn: Optional[Callable[[RootJob], Optional[RootResult]]] = None,
                          record_timings: Optional[bool] = None) -> RootScheduler:
    """创建逆根调度器

    Args:
        cfg: Shampoo 配置
        mode: 调度模式
        executor: 自定义执行器
        root_fn: 自定义逆根计算函数
        record_timings: 事件日志是否记录耗时，缺省时 async 记录、sync_delayed 不记录

    Returns:
        RootScheduler
    """
    mode = mode or SchedulerMode()
    if record_timings is None:
        record_timings = mode.kind == 'async'
    return RootScheduler(cfg, mode, executor=executor, root_fn=root_fn or compute_root,
                         event_log=EventLog(record_timings))

"""
实验套件

- delay_sweep：sync_delayed 收取延迟 {1, 10, 100, 500, 1000}
- block_sweep：block_size 取 {full, half, quarter}
- onesided_ablation：超大维度跳过后的单侧预条件 vs 纯对角 vs AdaGrad
- latency_breakdown：async 模式下慢速工作线程对训练步耗时的影响
- lr_range：η 逐步放大直到发散，Shampoo 与 AdaGrad 对比

每个套件输出一张多运行表（CSV）与一份 markdown 报告；单次运行发散只记录，不中断套件。
"""

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..config.settings import BaselineConfig, ProblemConfig, RunConfig, SchedulerMode, ShampooConfig
from ..scheduler.root_scheduler import RootJob, RootResult, WarmStartExecutor, compute_root
from ..utils.exceptions import ConfigException
from ..utils.logger import get_logger
from .trainer import TrainResult, train, write_run_outputs

logger = get_logger('suites')

SUITE_KINDS = ('delay_sweep', 'block_sweep', 'onesided_ablation', 'latency_breakdown', 'lr_range')
SUITE_COLUMNS = [
    'suite',
    'variant',
    'optimizer',
    'eta',
    'steps',
    'final_loss',
    'steps_to_threshold',
    'diverged',
    'divergence_step',
    'mean_wall_ms',
    'median_wall_ms',
    'mean_stats_ms',
    'mean_precond_grad_ms',
    'mean_staleness'
]

DELAYS = (1, 10, 100, 500, 1000)
BLOCK_FRACTIONS = (('full', 1), ('half', 2), ('quarter', 4))
LOSS_FLOOR = 1e-8
NOISE_SCALE = 1.0


@dataclass
class SuiteReport:
    """套件结果"""
    kind: str
    table: pd.DataFrame
    markdown: str
    checks: Dict[str, bool] = field(default_factory=dict)
    runs: Dict[str, TrainResult] = field(default_factory=dict)


def within_tolerance(a: float, b: float, rel: float, loss_floor: float = LOSS_FLOOR) -> bool:
    """|a − b| ≤ rel·max(a, b) + loss_floor；任一为非有限值时不成立"""
    if not (math.isfinite(a) and math.isfinite(b)):
        return False
    return abs(a - b) <= rel * max(a, b) + loss_floor


def log_grid(low: float, high: float, points: int = 9) -> List[float]:
    """[low, high] 上的对数等距网格"""
    if low <= 0 or high < low or points < 1:
        raise ConfigException(f"非法网格: [{low}, {high}] × {points}", field_name='grid')
    return [float(x) for x in np.logspace(np.log10(low), np.log10(high), points)]


def with_eta(cfg: RunConfig, eta: float) -> RunConfig:
    """替换当前优化器的学习率"""
    if cfg.optimizer == 'shampoo':
        return cfg.model_copy(update={'shampoo': cfg.shampoo.model_copy(update={'eta0': eta})})
    return cfg.model_copy(update={'baseline': cfg.baseline.model_copy(update={'eta': eta})})


def current_eta(cfg: RunConfig) -> float:
    return cfg.shampoo.eta0 if cfg.optimizer == 'shampoo' else cfg.baseline.eta


def _rank_key(result: TrainResult, threshold: float) -> Tuple[float, float]:
    steps = result.steps_to(threshold)
    final = result.final_loss
    return (float(steps) if steps is not None else math.inf,
            final if math.isfinite(final) else math.inf)


def grid_search_eta(cfg: RunConfig, etas: Sequence[float], threshold: float,
                    workers: int = 1) -> Tuple[float, Optional[int], List[TrainResult]]:
    """在 η 网格上选择最快达到阈值的学习率

    排序依据：先比较 steps-to-threshold，再比较最终损失；发散运行排在最后。

    Args:
        cfg: 基础运行配置
        etas: 学习率网格
        threshold: 损失阈值
        workers: 并行运行数

    Returns:
        (最佳 η, 最佳 η 的 steps-to-threshold, 全部运行结果)
    """
    configs = [with_eta(cfg.model_copy(update={'out_dir': None, 'checkpoint': False}), eta) for eta in etas]
    results = run_many(configs, workers)
    best = min(range(len(results)), key=lambda i: _rank_key(results[i], threshold))
    return etas[best], results[best].steps_to(threshold), results


def run_many(configs: Sequence[RunConfig], workers: int = 1) -> List[TrainResult]:
    """执行一组相互独立的运行，workers > 1 时使用线程池"""
    if workers <= 1:
        return [train(cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='suite-run') as pool:
        return list(pool.map(train, configs))


def cached_root_fn(seconds: float = 0.0) -> Callable[[RootJob], Optional[RootResult]]:
    """计时用的工作函数

    每个 (块, 侧) 第一次调用时计算真实逆根并缓存；之后先睡眠 seconds，再返回缓存的根
    （快照步换成当前任务的）。两组计时运行因此使用同样的逆根，只有工作线程耗时不同。
    """
    cache: Dict[Tuple[str, str], RootResult] = {}
    lock = threading.Lock()

    def root_fn(job: RootJob) -> Optional[RootResult]:
        key = (job.tensor_id, job.side)
        with lock:
            cached = cache.get(key)
        if cached is None:
            result = compute_root(job)
            if result is not None:
                with lock:
                    cache[key] = result
            return result
        if seconds > 0.0:
            time.sleep(seconds)
        return replace(cached, snapshot_step=job.snapshot_step, compute_ms=0.0)
    return root_fn


def _row(kind: str, variant: str, result: TrainResult, threshold: Optional[float]) -> Dict[str, Any]:
    metrics = result.metrics
    summary = result.summary

    def mean(column: str) -> float:
        return float(metrics[column].mean()) if len(metrics) else 0.0

    return {
        'suite': kind,
        'variant': variant,
        'optimizer': summary['optimizer'],
        'eta': current_eta(result.config),
        'steps': summary['steps_completed'],
        'final_loss': result.final_loss,
        'steps_to_threshold': result.steps_to(threshold) if threshold is not None else None,
        'diverged': result.diverged,
        'divergence_step': summary['divergence_step'],
        'mean_wall_ms': mean('wall_ms'),
        'median_wall_ms': float(metrics['wall_ms'].median()) if len(metrics) else 0.0,
        'mean_stats_ms': mean('stats_ms'),
        'mean_precond_grad_ms': mean('precond_grad_ms'),
        'mean_staleness': mean('staleness_mean')
    }


def _format_cell(value: Any) -> str:
    if value is None:
        return '-'
    if isinstance(value, (bool, np.bool_)):
        return 'yes' if value else 'no'
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return '-'
        return f"{value:.4g}"
    return str(value)


def format_markdown_table(frame: pd.DataFrame) -> str:
    """DataFrame 转 GitHub 风格 markdown 表格"""
    header = '| ' + ' | '.join(str(c) for c in frame.columns) + ' |'
    divider = '| ' + ' | '.join('---' for _ in frame.columns) + ' |'
    lines = [header, divider]
    for row in frame.itertuples(index=False):
        lines.append('| ' + ' | '.join(_format_cell(v) for v in row) + ' |')
    return '\n'.join(lines)


def _report(kind: str, rows: List[Dict[str, Any]], checks: Dict[str, bool],
            runs: Dict[str, TrainResult]) -> SuiteReport:
    table = pd.DataFrame(rows, columns=SUITE_COLUMNS)
    lines = [f"# {kind}", '', format_markdown_table(table)]
    if checks:
        lines += ['', '## checks', '']
        lines += [f"- {name}: {'pass' if ok else 'fail'}" for name, ok in checks.items()]
    return SuiteReport(kind=kind, table=table, markdown='\n'.join(lines) + '\n', checks=checks, runs=runs)


def default_suite_config(kind: str) -> RunConfig:
    """各套件的默认运行配置（桌面规模）"""
    quadratic = ProblemConfig(kind='quadratic', m=32, n=32, cond=1e4)
    # 梯度噪声主导统计量，损失停在噪声底
    noisy = quadratic.model_copy(update={'noise_scale': NOISE_SCALE})
    shampoo = ShampooConfig(eta0=1.0, beta1=0.9, kappa=10, tau=10)
    if kind == 'delay_sweep':
        return RunConfig(problem=noisy, shampoo=shampoo, steps=2000)
    if kind == 'block_sweep':
        return RunConfig(problem=noisy.model_copy(update={'m': 16, 'n': 64}),
                         shampoo=shampoo, steps=1000,
                         scheduler=SchedulerMode(kind='sync_delayed', delay_steps=0))
    if kind == 'onesided_ablation':
        return RunConfig(problem=ProblemConfig(kind='quadratic', m=4096, n=32, cond=1e4, left_share=0.0),
                         shampoo=shampoo.model_copy(update={'max_precond_dim': 256}),
                         baseline=BaselineConfig(eta=1.0), steps=300, loss_thresholds=[1e-6])
    if kind == 'latency_breakdown':
        return RunConfig(problem=quadratic.model_copy(update={'m': 256, 'n': 256}), shampoo=shampoo,
                         steps=100, scheduler=SchedulerMode(kind='async', workers=2), record_timings=True)
    if kind == 'lr_range':
        return RunConfig(problem=quadratic, shampoo=shampoo.model_copy(update={'eta0': 0.01}),
                         baseline=BaselineConfig(eta=0.01), steps=300)
    raise ConfigException(f"未知套件: {kind}", field_name='suite', field_value=kind)


def _delay_sweep(cfg: RunConfig, delays: Sequence[int] = DELAYS,
                 rel: float = 0.10) -> SuiteReport:
    rows: List[Dict[str, Any]] = []
    runs: Dict[str, TrainResult] = {}
    for delay in delays:
        run_cfg = cfg.model_copy(update={
            'optimizer': 'shampoo',
            'scheduler': SchedulerMode(kind='sync_delayed', delay_steps=delay)
        })
        variant = f"delay={delay}"
        runs[variant] = train(run_cfg)
        rows.append(_row('delay_sweep', variant, runs[variant], None))
    checks: Dict[str, bool] = {}
    if 'delay=1' in runs and 'delay=100' in runs:
        checks['delay=100 within 10% of delay=1'] = within_tolerance(
            runs['delay=100'].final_loss, runs['delay=1'].final_loss, rel)
    return _report('delay_sweep', rows, checks, runs)


def _block_sweep(cfg: RunConfig, rel: float = 0.05) -> SuiteReport:
    rows: List[Dict[str, Any]] = []
    runs: Dict[str, TrainResult] = {}
    largest = max(cfg.problem.m, cfg.problem.n) if cfg.problem.kind == 'quadratic' else cfg.shampoo.block_size
    for name, fraction in BLOCK_FRACTIONS:
        block_size = max(1, math.ceil(largest / fraction))
        run_cfg = cfg.model_copy(update={
            'optimizer': 'shampoo',
            'shampoo': cfg.shampoo.model_copy(update={'block_size': block_size})
        })
        runs[name] = train(run_cfg)
        blocks = sum(len(plan['blocks']) for plan in runs[name].summary.get('plans', []))
        rows.append(_row('block_sweep', f"{name} (b={block_size}, blocks={blocks})", runs[name], None))
    checks = {
        f"{name} within 5% of full": within_tolerance(runs[name].final_loss, runs['full'].final_loss, rel)
        for name, _ in BLOCK_FRACTIONS[1:]
    }
    return _report('block_sweep', rows, checks, runs)


def _onesided_ablation(cfg: RunConfig, etas: Optional[Sequence[float]] = None,
                       workers: int = 1) -> SuiteReport:
    threshold = cfg.loss_thresholds[0] if cfg.loss_thresholds else 1e-6
    grid = list(etas) if etas is not None else log_grid(0.03, 3.0, 5)
    variants = {
        'one_sided': cfg.model_copy(update={'optimizer': 'shampoo'}),
        'diagonal_only': cfg.model_copy(update={
            'optimizer': 'shampoo',
            'shampoo': cfg.shampoo.model_copy(update={'max_precond_dim': 1})
        }),
        'adagrad': cfg.model_copy(update={'optimizer': 'adagrad'})
    }
    rows: List[Dict[str, Any]] = []
    runs: Dict[str, TrainResult] = {}
    best_steps: Dict[str, Optional[int]] = {}
    for name, variant_cfg in variants.items():
        eta, steps, results = grid_search_eta(variant_cfg, grid, threshold, workers)
        runs[name] = results[grid.index(eta)]
        best_steps[name] = steps
        rows.append(_row('onesided_ablation', f"{name} (best)", runs[name], threshold))
    one_sided = best_steps['one_sided']
    adagrad = best_steps['adagrad']
    checks = {
        'one_sided reaches threshold before adagrad': one_sided is not None and (
            adagrad is None or one_sided < adagrad)
    }
    return _report('onesided_ablation', rows, checks, runs)


def _latency_breakdown(cfg: RunConfig, sleep_seconds: float = 1.0, rel: float = 0.10,
                       repeats: int = 2) -> SuiteReport:
    """慢速工作线程是否拖慢训练步

    两组运行都先同步算出首轮逆根（WarmStartExecutor），之后的任务交给线程池：
    一组立即返回缓存的根，一组先睡眠 sleep_seconds。两组交替执行 repeats 次，
    比较预热（前 2κ 步）之后每步耗时的中位数。
    """
    warmup = 2 * cfg.shampoo.kappa
    if cfg.steps <= warmup:
        raise ConfigException(f"latency_breakdown 需要 steps > 2κ = {warmup}", field_name='steps',
                              field_value=cfg.steps)
    run_cfg = cfg.model_copy(update={
        'optimizer': 'shampoo',
        'record_timings': True,
        'scheduler': cfg.scheduler if cfg.scheduler.kind == 'async' else SchedulerMode(kind='async')
    })
    arms = {'instant_worker': 0.0, f"sleeping_worker({sleep_seconds:g}s)": sleep_seconds}
    samples: Dict[str, List[float]] = {name: [] for name in arms}
    runs: Dict[str, TrainResult] = {}
    for _ in range(max(1, repeats)):
        for name, seconds in arms.items():
            executor = WarmStartExecutor(run_cfg.scheduler.resolved_workers())
            try:
                result = train(run_cfg, root_fn=cached_root_fn(seconds), executor=executor)
            finally:
                executor.shutdown(wait=False, cancel_futures=True)
            runs[name] = result
            timed = result.metrics.loc[result.metrics['step'] > warmup, 'wall_ms']
            samples[name].extend(float(ms) for ms in timed)

    medians = {name: float(np.median(values)) if values else math.nan for name, values in samples.items()}
    rows = []
    for name, result in runs.items():
        row = _row('latency_breakdown', name, result, None)
        row['median_wall_ms'] = medians[name]
        rows.append(row)
    instant, sleeping = medians.values()
    checks = {'step wall time unaffected by worker duration': within_tolerance(sleeping, instant, rel, 0.0)}
    return _report('latency_breakdown', rows, checks, runs)


def _lr_range(cfg: RunConfig, factor: float = 2.0, max_points: int = 12) -> SuiteReport:
    rows: List[Dict[str, Any]] = []
    runs: Dict[str, TrainResult] = {}
    largest_stable: Dict[str, Optional[float]] = {}
    for optimizer in ('shampoo', 'adagrad'):
        base = cfg.model_copy(update={'optimizer': optimizer})
        eta = current_eta(base)
        largest_stable[optimizer] = None
        for _ in range(max_points):
            result = train(with_eta(base, eta))
            variant = f"{optimizer} eta={eta:.4g}"
            runs[variant] = result
            rows.append(_row('lr_range', variant, result, None))
            initial = result.summary['initial_loss']
            unstable = result.diverged or not (result.final_loss <= (initial if initial is not None else math.inf))
            if unstable:
                logger.info(f"{optimizer} 在 η={eta:.4g} 处失稳，扫描结束")
                break
            largest_stable[optimizer] = eta
            eta *= factor
    shampoo_eta = largest_stable['shampoo'] or 0.0
    adagrad_eta = largest_stable['adagrad'] or 0.0
    checks = {'shampoo tolerates at least adagrad learning rate': shampoo_eta >= adagrad_eta}
    return _report('lr_range', rows, checks, runs)


def run_suite(kind: str, base_cfg: Optional[RunConfig] = None,
              out_dir: Optional[Union[str, Path]] = None, **options: Any) -> SuiteReport:
    """执行命名套件

    Args:
        kind: 套件名，见 SUITE_KINDS
        base_cfg: 基础运行配置，缺省使用 default_suite_config(kind)
        out_dir: 输出目录；写出 suite.csv、report.md 与每个运行的子目录
        **options: 传给具体套件的参数（如 delays、sleep_seconds、etas）

    Returns:
        SuiteReport
    """
    if kind not in SUITE_KINDS:
        raise ConfigException(f"未知套件: {kind}", field_name='suite', field_value=kind)
    cfg = base_cfg or default_suite_config(kind)
    cfg = cfg.model_copy(update={'out_dir': None, 'checkpoint': False})

    logger.info(f"开始执行套件 {kind}")
    suites: Dict[str, Callable[..., SuiteReport]] = {
        'delay_sweep': _delay_sweep,
        'block_sweep': _block_sweep,
        'onesided_ablation': _onesided_ablation,
        'latency_breakdown': _latency_breakdown,
        'lr_range': _lr_range
    }
    report = suites[kind](cfg, **options)

    failed = [name for name, ok in report.checks.items() if not ok]
    if failed:
        logger.warning(f"套件 {kind} 未通过的检查: {failed}")
    if out_dir is not None:
        write_suite_outputs(report, out_dir)
    return report


def write_suite_outputs(report: SuiteReport, out_dir: Union[str, Path]) -> Path:
    """写出 suite.csv、report.md，以及各运行的 metrics/summary/events"""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    report.table.to_csv(path / 'suite.csv', index=False)
    (path / 'report.md').write_text(report.markdown, encoding='utf-8')
    for index, result in enumerate(report.runs.values()):
        write_run_outputs(result, path / f"run_{index:02d}")
    logger.info(f"套件结果已写入 {path}")
    return path

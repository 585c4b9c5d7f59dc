"""
实验命令行入口

子命令：train / suite / bench-root / verify-lemma / trace-condition
退出码：0 成功，2 配置错误，3 发散，4 数值失败
"""

import argparse
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config.config_manager import ConfigManager
from .config.settings import RunConfig, load_run_config
from .harness.suites import SUITE_KINDS, run_suite
from .harness.trainer import train, trace_condition
from .linalg.root_solver import bench_root
from .optimizers.partitioner import verify_lemma
from .utils.exceptions import DivergenceException, NumericalException, exit_code_for
from .utils.logger import setup_logger


class ExperimentCLI:
    """命令行实验控制器"""

    def __init__(self, config_path: Optional[str] = None, seed: Optional[int] = None,
                 out_dir: Optional[str] = None):
        """初始化控制器

        Args:
            config_path: JSON/YAML 配置文件路径，为空时使用默认配置
            seed: 覆盖配置中的种子
            out_dir: 覆盖配置中的输出目录
        """
        self.config_manager = ConfigManager(config_path)
        self.logger = setup_logger(self.config_manager.get('logging', {}))
        self.has_user_config = config_path is not None
        self.seed = seed
        self.out_dir = out_dir

    def run_config(self) -> RunConfig:
        """合并命令行覆盖项后的运行配置"""
        cfg = self.config_manager.get_run_config()
        update: Dict[str, Any] = {}
        if self.seed is not None:
            update['seed'] = self.seed
        if self.out_dir is not None:
            update['out_dir'] = self.out_dir
        if not update:
            return cfg
        return load_run_config({**cfg.model_dump(), **update})

    def train(self) -> int:
        cfg = self.run_config()
        result = train(cfg)
        print(f"final_loss={result.summary['final_loss']} steps={result.summary['steps_completed']}")
        if result.summary['divergence_reason'] == 'numerical':
            raise NumericalException(f"训练在第 {result.summary['divergence_step']} 步数值失败",
                                     calculation_type='train')
        if result.diverged:
            raise DivergenceException(f"训练在第 {result.summary['divergence_step']} 步发散",
                                      step=result.summary['divergence_step'],
                                      loss=result.summary['final_loss'])
        return 0

    def suite(self, kind: str, sleep_seconds: Optional[float] = None) -> int:
        base = self.run_config() if (self.has_user_config or self.seed is not None) else None
        options: Dict[str, Any] = {}
        if sleep_seconds is not None:
            options['sleep_seconds'] = sleep_seconds
        report = run_suite(kind, base, out_dir=self.out_dir, **options)
        print(report.markdown)
        return 0

    def bench_root(self, sizes: Sequence[int], methods: Sequence[str], p: int) -> int:
        seed = self.seed if self.seed is not None else 0
        table = bench_root(sizes, methods, p=p, seed=seed, root_cfg=self.run_config().shampoo.root_cfg)
        self._emit(table, 'bench_root.csv')
        return 0

    def verify_lemma(self, shape: Sequence[int], steps: int, p: float, q: float,
                     eps: float, instances: int) -> int:
        rng = np.random.default_rng(self.seed if self.seed is not None else 0)
        rows: List[Dict[str, Any]] = []
        for index in range(instances):
            gradients = [rng.standard_normal(tuple(shape)) for _ in range(steps)]
            report = verify_lemma(gradients, p, q, eps)
            rows.append({'instance': index, **asdict(report)})
        table = pd.DataFrame(rows)
        self._emit(table, 'verify_lemma.csv')
        if not table.empty and not bool(table['holds'].all()):
            raise NumericalException(f"引理检验失败 {int((~table['holds']).sum())}/{len(table)} 例",
                                     calculation_type='verify_lemma')
        return 0

    def trace_condition(self, block_id: str, side: str, every: int) -> int:
        table = trace_condition(self.run_config(), block_id, side, every)
        self._emit(table, 'condition.csv')
        return 0

    def _emit(self, table: pd.DataFrame, filename: str) -> None:
        """写入 out 目录下的 CSV；未指定 out 时打印到标准输出"""
        if self.out_dir is None:
            print(table.to_csv(index=False), end='')
            return
        path = Path(self.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        table.to_csv(path / filename, index=False)
        self.logger.info(f"已写入 {path / filename}")


def _exponent(value: str) -> float:
    """解析 p/q，inf 表示无穷"""
    return math.inf if value.lower() in ('inf', 'infinity', '∞') else float(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='practical-shampoo', description="Shampoo 优化器实验工具")
    parser.add_argument("--config", "-c", help="配置文件路径（JSON/YAML）", default=None)
    parser.add_argument("--seed", type=int, help="随机种子", default=None)
    parser.add_argument("--out", help="输出目录", default=None)
    subparsers = parser.add_subparsers(dest='command', required=True)

    subparsers.add_parser('train', help="执行一次训练")

    suite = subparsers.add_parser('suite', help="执行实验套件")
    suite.add_argument('kind', choices=SUITE_KINDS)
    suite.add_argument('--sleep-seconds', type=float, default=None, help="latency_breakdown 慢速线程睡眠秒数")

    bench = subparsers.add_parser('bench-root', help="逆根求解耗时对比")
    bench.add_argument('--sizes', type=int, nargs='*', default=[16, 64, 128, 256, 512])
    bench.add_argument('--methods', nargs='+', default=['coupled_newton', 'eig_oracle'])
    bench.add_argument('--p', type=int, default=4)

    lemma = subparsers.add_parser('verify-lemma', help="验证 Kronecker 上界")
    lemma.add_argument('--shape', type=int, nargs=2, default=[4, 3])
    lemma.add_argument('--steps', type=int, default=20, help="每个实例的梯度个数")
    lemma.add_argument('--p', type=_exponent, default=2.0)
    lemma.add_argument('--q', type=_exponent, default=2.0)
    lemma.add_argument('--eps', type=float, default=1e-6)
    lemma.add_argument('--instances', type=int, default=10)

    trace = subparsers.add_parser('trace-condition', help="追踪统计量条件数")
    trace.add_argument('--block', default='p0.b0', help="块标识，如 p0.b0")
    trace.add_argument('--side', choices=['left', 'right'], default='left')
    trace.add_argument('--every', type=int, default=1)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """解析参数并执行子命令，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        cli = ExperimentCLI(args.config, args.seed, args.out)
        if args.command == 'train':
            return cli.train()
        if args.command == 'suite':
            return cli.suite(args.kind, args.sleep_seconds)
        if args.command == 'bench-root':
            return cli.bench_root(args.sizes, args.methods, args.p)
        if args.command == 'verify-lemma':
            return cli.verify_lemma(args.shape, args.steps, args.p, args.q, args.eps, args.instances)
        return cli.trace_condition(args.block, args.side, args.every)
    except Exception as e:
        print(f"运行失败: {e}", file=sys.stderr)
        return exit_code_for(e)


def main() -> None:
    """主函数入口"""
    sys.exit(run())


if __name__ == "__main__":
    main()

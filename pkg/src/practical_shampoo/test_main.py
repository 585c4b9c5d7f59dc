"""
命令行入口测试
"""

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import yaml

from . import main as main_module
from .harness.trainer import train
from .main import ExperimentCLI, _exponent, build_parser, run
from .scheduler.root_scheduler import compute_root

SMALL_RUN = {
    'problem': {'kind': 'quadratic', 'm': 4, 'n': 3, 'cond': 10.0},
    'shampoo': {'eta0': 0.3, 'kappa': 2, 'tau': 2},
    'steps': 6
}


def _write_config(tmp_path, data, name='run.yaml'):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding='utf-8')
    return str(path)


class TestParser:
    """参数解析测试"""

    def test_exponent(self):
        assert _exponent('inf') == math.inf
        assert _exponent('Infinity') == math.inf
        assert _exponent('4') == 4.0

    def test_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_rejects_unknown_suite(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['suite', 'warp_sweep'])

    def test_global_options(self):
        args = build_parser().parse_args(['--seed', '7', '--out', 'x', 'verify-lemma', '--p', 'inf', '--q', '1'])
        assert args.seed == 7
        assert args.p == math.inf and args.q == 1.0


class TestRun:
    """子命令与退出码测试"""

    def test_train(self, tmp_path, capsys):
        config = _write_config(tmp_path, SMALL_RUN)
        assert run(['--config', config, '--out', str(tmp_path / 'out'), 'train']) == 0
        assert 'final_loss=' in capsys.readouterr().out
        assert (tmp_path / 'out' / 'metrics.csv').exists()

    def test_nested_run_section(self, tmp_path):
        config = _write_config(tmp_path, {'logging': {'level': 'WARNING'}, 'run': SMALL_RUN})
        assert run(['-c', config, 'train']) == 0

    def test_missing_config(self, tmp_path):
        assert run(['--config', str(tmp_path / 'absent.yaml'), 'train']) == 2

    def test_invalid_config(self, tmp_path):
        config = _write_config(tmp_path, {**SMALL_RUN, 'steps': -1})
        assert run(['--config', config, 'train']) == 2

    def test_divergence_exit_code(self, tmp_path):
        data = {**SMALL_RUN, 'optimizer': 'sgd', 'baseline': {'eta': 100.0, 'beta1': 0.0},
                'divergence_loss': 1000.0, 'steps': 50}
        assert run(['--config', _write_config(tmp_path, data), 'train']) == 3

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        def nan_root(job):
            result = compute_root(job)
            return replace(result, root=np.full_like(result.root, np.nan))

        monkeypatch.setattr(main_module, 'train', lambda cfg: train(cfg, root_fn=nan_root))
        data = {**SMALL_RUN, 'steps': 10}
        assert run(['--config', _write_config(tmp_path, data), 'train']) == 4

    def test_verify_lemma(self, tmp_path):
        out = tmp_path / 'lemma'
        assert run(['--out', str(out), 'verify-lemma', '--instances', '3', '--steps', '4',
                    '--p', 'inf', '--q', '1']) == 0
        table = pd.read_csv(out / 'verify_lemma.csv')
        assert len(table) == 3
        assert table['holds'].all()

    def test_verify_lemma_bad_exponents(self):
        assert run(['verify-lemma', '--p', '2', '--q', '3']) == 2

    def test_bench_root_stdout(self, capsys):
        assert run(['bench-root', '--sizes', '4', '--methods', 'eig_oracle']) == 0
        assert capsys.readouterr().out.startswith('method,n,ms,residual')

    def test_bench_root_too_small(self):
        assert run(['bench-root', '--sizes', '1']) == 4

    def test_trace_condition(self, tmp_path):
        config = _write_config(tmp_path, SMALL_RUN)
        out = tmp_path / 'trace'
        assert run(['-c', config, '--out', str(out), 'trace-condition', '--side', 'right', '--every', '3']) == 0
        table = pd.read_csv(out / 'condition.csv')
        assert list(table['step']) == [3, 6]


class TestExperimentCLI:
    """控制器测试"""

    def test_overrides(self, tmp_path):
        cli = ExperimentCLI(_write_config(tmp_path, SMALL_RUN), seed=11, out_dir=str(tmp_path))
        cfg = cli.run_config()
        assert cfg.seed == 11
        assert cfg.out_dir == str(tmp_path)
        assert cfg.steps == 6

    def test_defaults_without_file(self):
        cfg = ExperimentCLI().run_config()
        assert cfg.optimizer == 'shampoo'
        assert cfg.out_dir is None

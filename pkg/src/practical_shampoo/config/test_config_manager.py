"""
配置管理测试
"""

import json
from pathlib import Path

import pytest
import yaml

from ..utils.exceptions import ConfigException
from . import config_manager
from .config_manager import ConfigManager
from .settings import RunConfig, SchedulerMode, ShampooConfig, load_run_config

SHIPPED_CONFIG = Path(__file__).resolve().parents[3] / 'config' / 'config.yaml'


class TestConfigManager:
    """配置加载测试"""

    def test_shipped_config_is_valid(self):
        cfg = ConfigManager(str(SHIPPED_CONFIG)).get_run_config()
        assert cfg.optimizer == 'shampoo'
        assert cfg.problem.cond == 1e4
        assert cfg.divergence_loss == 1e10
        assert cfg.logging['level'] == 'INFO'

    def test_defaults_come_from_shipped_file(self):
        manager = ConfigManager()
        assert manager.get('logging.level') == 'INFO'
        assert manager.get('missing.key', 'x') == 'x'
        assert manager.get('run.loss_thresholds') == [1e-3, 1e-6]
        assert manager.get_run_config() == ConfigManager(str(SHIPPED_CONFIG)).get_run_config()

    def test_user_file_merges_over_bundled(self, tmp_path, monkeypatch):
        bundled = tmp_path / 'bundled.yaml'
        bundled.write_text(yaml.safe_dump({'run': {'steps': 77, 'shampoo': {'tau': 4}}}), encoding='utf-8')
        monkeypatch.setattr(config_manager, 'BUNDLED_CONFIG_PATHS', (bundled,))
        user = tmp_path / 'user.json'
        user.write_text(json.dumps({'shampoo': {'kappa': 3}}), encoding='utf-8')

        assert ConfigManager().get_run_config().steps == 77
        cfg = ConfigManager(str(user)).get_run_config()
        assert (cfg.steps, cfg.shampoo.tau, cfg.shampoo.kappa) == (77, 4, 3)

    def test_builtin_defaults_without_bundled_file(self, tmp_path, monkeypatch):
        monkeypatch.setattr(config_manager, 'BUNDLED_CONFIG_PATHS', (tmp_path / 'absent.yaml',))
        manager = ConfigManager()
        assert manager.get_run_config() == load_run_config({'logging': manager.get('logging')})

    def test_flat_file_is_run_section(self, tmp_path):
        path = tmp_path / 'flat.yaml'
        path.write_text(yaml.safe_dump({'steps': 5, 'logging': {'level': 'DEBUG'}}), encoding='utf-8')
        manager = ConfigManager(str(path))
        assert manager.get('run.steps') == 5
        assert manager.get('logging.level') == 'DEBUG'
        assert manager.get('logging.backup_count') == 10
        assert manager.get_run_config().steps == 5

    def test_nested_merge(self, tmp_path):
        path = tmp_path / 'nested.json'
        path.write_text(json.dumps({'run': {'shampoo': {'kappa': 3}}}), encoding='utf-8')
        cfg = ConfigManager(str(path)).get_run_config()
        assert cfg.shampoo.kappa == 3
        assert cfg.shampoo.tau == ShampooConfig().tau

    def test_set_and_save(self, tmp_path):
        manager = ConfigManager()
        manager.set('run.shampoo.eta0', 0.25)
        target = tmp_path / 'saved.json'
        assert manager.save_config(str(target))
        assert ConfigManager(str(target)).get_run_config().shampoo.eta0 == 0.25

    def test_save_without_path(self):
        assert not ConfigManager().save_config()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigException):
            ConfigManager(str(tmp_path / 'absent.yaml'))

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"run": ', encoding='utf-8')
        with pytest.raises(ConfigException):
            ConfigManager(str(path))

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / 'list.yaml'
        path.write_text('- 1\n- 2\n', encoding='utf-8')
        with pytest.raises(ConfigException):
            ConfigManager(str(path))

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'empty.yaml'
        path.write_text('', encoding='utf-8')
        assert ConfigManager(str(path)).get_run_config().steps == RunConfig().steps


class TestSettings:
    """配置模型测试"""

    @pytest.mark.parametrize("data,field", [
        ({'steps': -1}, 'steps'),
        ({'shampoo': {'beta1': 1.0}}, 'shampoo.beta1'),
        ({'shampoo': {'kappa': 0}}, 'shampoo.kappa'),
        ({'scheduler': {'kind': 'eager'}}, 'scheduler.kind'),
        ({'unknown': 1}, 'unknown'),
    ])
    def test_invalid_fields(self, data, field):
        with pytest.raises(ConfigException) as info:
            load_run_config(data)
        assert info.value.details['field_name'] == field

    def test_thresholds_must_be_positive(self):
        with pytest.raises(ConfigException):
            load_run_config({'loss_thresholds': [1e-3, 0.0]})

    def test_root_interval_defaults_to_kappa(self):
        assert ShampooConfig(kappa=7).effective_root_interval == 7
        assert ShampooConfig(kappa=7, root_update_interval=20).effective_root_interval == 20

    def test_resolved_workers(self):
        assert SchedulerMode(kind='async', workers=3).resolved_workers() == 3
        assert SchedulerMode(kind='async').resolved_workers() >= 1

    def test_timings_follow_scheduler(self):
        assert not RunConfig().timings_enabled
        assert RunConfig(scheduler=SchedulerMode(kind='async')).timings_enabled
        assert RunConfig(record_timings=True).timings_enabled

"""
日志与异常工具测试
"""

import logging

import pytest

from .exceptions import (
    CapacityException,
    ConfigException,
    DimensionException,
    DivergenceException,
    NumericalException,
    ShampooLabException,
    exception_handler,
    exit_code_for,
)
from .logger import DEFAULT_FORMAT, ROOT_LOGGER_NAME, _parse_size, attach_run_log, get_logger, setup_logger


class TestExceptions:
    """异常层级与退出码"""

    @pytest.mark.parametrize("error,code", [
        (ConfigException("x"), 2),
        (DivergenceException("x", step=3, loss=1e12), 3),
        (NumericalException("x"), 4),
        (DimensionException("x", expected=(2, 2), actual=(2, 3)), 4),
        (CapacityException("x", requested=5000, limit=4096), 4),
        (ShampooLabException("x"), 1),
        (RuntimeError("x"), 1),
    ])
    def test_exit_codes(self, error, code):
        assert exit_code_for(error) == code

    def test_details(self):
        error = DimensionException("形状不一致", expected=(2, 2), actual=(3, 2))
        assert error.error_code == 4002
        assert error.details == {'calculation_type': 'dimension', 'expected': (2, 2), 'actual': (3, 2)}
        assert str(error) == "形状不一致"

    def test_handler_returns_default(self):
        @exception_handler((NumericalException,), default_return='fallback', log_error=False)
        def failing():
            raise DimensionException("x")

        assert failing() == 'fallback'

    def test_handler_passes_other_errors(self):
        @exception_handler((NumericalException,), default_return=None)
        def failing():
            raise KeyError("x")

        with pytest.raises(KeyError):
            failing()

    def test_handler_logs(self, caplog):
        @exception_handler((ConfigException,), default_return=0)
        def failing():
            raise ConfigException("坏配置", field_name='steps')

        assert failing() == 0
        assert any('2001' in record.getMessage() for record in caplog.records)


class TestLogger:
    """日志配置测试"""

    @pytest.mark.parametrize("text,size", [('10KB', 10240), ('2mb', 2 * 1024 ** 2), ('1GB', 1024 ** 3),
                                           ('512', 512), ('1.5KB', 1536), ('64B', 64)])
    def test_parse_size(self, text, size):
        assert _parse_size(text) == size

    def test_child_loggers(self):
        assert get_logger('trainer').name == f'{ROOT_LOGGER_NAME}.trainer'
        assert get_logger().name == ROOT_LOGGER_NAME

    def test_setup_is_idempotent(self, tmp_path):
        log_file = tmp_path / 'logs' / 'run.log'
        config = {'level': 'DEBUG', 'file_path': str(log_file), 'max_file_size': '1MB', 'backup_count': 2}
        setup_logger(config)
        logger = setup_logger(config)
        try:
            assert len(logger.handlers) == 2
            assert logger.level == logging.DEBUG
            get_logger('test').info("写入文件")
            for handler in logger.handlers:
                handler.flush()
            assert "写入文件" in log_file.read_text(encoding='utf-8')
        finally:
            for handler in logger.handlers:
                handler.close()
            logger.handlers.clear()

    def test_default_format_names_thread(self):
        logger = setup_logger({'level': 'INFO'})
        try:
            assert logger.handlers[0].formatter._fmt == DEFAULT_FORMAT
            assert '%(threadName)s' in DEFAULT_FORMAT
        finally:
            logger.handlers.clear()

    def test_run_log_is_scoped(self, tmp_path):
        logger = logging.getLogger(ROOT_LOGGER_NAME)
        before = list(logger.handlers)
        with attach_run_log(tmp_path / 'run') as log_file:
            assert len(logger.handlers) == len(before) + 1
            get_logger('root_scheduler').warning("逆根计算失败，保留旧根")
        get_logger('root_scheduler').warning("运行结束后的消息")
        assert logger.handlers == before
        text = log_file.read_text(encoding='utf-8')
        assert log_file == tmp_path / 'run' / 'run.log'
        assert 'practical_shampoo.root_scheduler - MainThread - WARNING - 逆根计算失败' in text
        assert '运行结束后的消息' not in text

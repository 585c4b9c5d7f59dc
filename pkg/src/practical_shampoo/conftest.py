"""
测试公共夹具
"""

import logging

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    """固定种子的随机数生成器"""
    return np.random.default_rng(20200220)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog: pytest.LogCaptureFixture) -> None:
    caplog.set_level(logging.WARNING, logger='practical_shampoo')

"""
工具模块
"""

from .logger import setup_logger, get_logger
from .exceptions import (
    ShampooLabException,
    ConfigException,
    DivergenceException,
    NumericalException,
    DimensionException,
    SymmetryException,
    SingularityException,
    NotPSDException,
    CapacityException,
    exception_handler,
    exit_code_for
)

__all__ = [
    "setup_logger",
    "get_logger",
    "ShampooLabException",
    "ConfigException",
    "DivergenceException",
    "NumericalException",
    "DimensionException",
    "SymmetryException",
    "SingularityException",
    "NotPSDException",
    "CapacityException",
    "exception_handler",
    "exit_code_for"
]

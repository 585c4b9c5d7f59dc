"""
异常处理模块

错误码约定：2xxx 配置错误，3xxx 发散，4xxx 数值错误。
exit_code 与命令行退出码一一对应。
"""

import functools
import logging
from typing import Any, Callable, Dict, Optional, Tuple, Type, TypeVar

F = TypeVar('F', bound=Callable[..., Any])


class ShampooLabException(Exception):
    """基础异常"""

    exit_code: int = 1

    def __init__(self, message: str, error_code: int = 1000, details: Optional[Dict[str, Any]] = None):
        """初始化异常

        Args:
            message: 错误消息
            error_code: 错误代码
            details: 错误详情
        """
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)


class ConfigException(ShampooLabException):
    """配置异常（超参数非法、未知调度类型、p/q 不一致等）"""

    exit_code = 2

    def __init__(self, message: str, field_name: Optional[str] = None, field_value: Any = None):
        """初始化配置异常

        Args:
            message: 错误消息
            field_name: 字段名
            field_value: 字段值
        """
        super().__init__(message, 2001, {
            'field_name': field_name,
            'field_value': field_value
        })


class DivergenceException(ShampooLabException):
    """训练发散异常"""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None, loss: Optional[float] = None):
        """初始化发散异常

        Args:
            message: 错误消息
            step: 发散发生的步数
            loss: 发散时的损失值
        """
        super().__init__(message, 3001, {'step': step, 'loss': loss})


class NumericalException(ShampooLabException):
    """数值计算异常"""

    exit_code = 4

    def __init__(self, message: str, calculation_type: Optional[str] = None,
                 error_code: int = 4001, details: Optional[Dict[str, Any]] = None):
        """初始化数值异常

        Args:
            message: 错误消息
            calculation_type: 计算类型
            error_code: 错误代码
            details: 额外详情
        """
        merged = {'calculation_type': calculation_type}
        merged.update(details or {})
        super().__init__(message, error_code, merged)


class DimensionException(NumericalException):
    """形状/维度不匹配"""

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        super().__init__(message, 'dimension', 4002, {'expected': expected, 'actual': actual})


class SymmetryException(NumericalException):
    """期望对称矩阵但输入不对称"""

    def __init__(self, message: str, asymmetry: Optional[float] = None):
        super().__init__(message, 'symmetry', 4003, {'asymmetry': asymmetry})


class SingularityException(NumericalException):
    """奇异矩阵或非正元素上的负幂"""

    def __init__(self, message: str, min_value: Optional[float] = None):
        super().__init__(message, 'singularity', 4004, {'min_value': min_value})


class NotPSDException(NumericalException):
    """输入不是半正定矩阵"""

    def __init__(self, message: str, min_eigenvalue: Optional[float] = None):
        super().__init__(message, 'psd', 4005, {'min_eigenvalue': min_eigenvalue})


class CapacityException(NumericalException):
    """结果规模超出容量上限"""

    def __init__(self, message: str, requested: Optional[int] = None, limit: Optional[int] = None):
        super().__init__(message, 'capacity', 4006, {'requested': requested, 'limit': limit})


def exit_code_for(error: BaseException) -> int:
    """异常到命令行退出码的映射

    Args:
        error: 捕获到的异常

    Returns:
        退出码
    """
    if isinstance(error, ShampooLabException):
        return error.exit_code
    return 1


def exception_handler(exception_types: Tuple[Type[BaseException], ...] = (Exception,),
                      default_return: Any = None,
                      log_error: bool = True) -> Callable[[F], F]:
    """异常处理装饰器

    Args:
        exception_types: 要捕获的异常类型
        default_return: 默认返回值
        log_error: 是否记录错误日志
    """
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except exception_types as e:
                if log_error:
                    logger = logging.getLogger('practical_shampoo')
                    logger.error(f"函数 {func.__name__} 执行异常: {e}")
                    if isinstance(e, ShampooLabException):
                        logger.warning(f"业务异常 - 错误码: {e.error_code}, 详情: {e.details}")
                return default_return
        return wrapper  # type: ignore[return-value]
    return decorator

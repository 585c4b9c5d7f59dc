"""
实验驱动模块

合成问题、确定性训练循环与实验套件
"""

from .problems import (
    Problem,
    QuadraticProblem,
    LogisticProblem,
    MLPProblem,
    gen_quadratic,
    gen_logistic,
    gen_mlp,
    create_problem,
    finite_difference_error
)
from .trainer import METRICS_COLUMNS, TrainResult, train, trace_condition, write_run_outputs, load_checkpoint
from .suites import (
    SUITE_KINDS,
    SUITE_COLUMNS,
    SuiteReport,
    run_suite,
    default_suite_config,
    within_tolerance,
    log_grid,
    grid_search_eta,
    cached_root_fn,
    format_markdown_table
)

__all__ = [
    "Problem",
    "QuadraticProblem",
    "LogisticProblem",
    "MLPProblem",
    "gen_quadratic",
    "gen_logistic",
    "gen_mlp",
    "create_problem",
    "finite_difference_error",
    "METRICS_COLUMNS",
    "TrainResult",
    "train",
    "trace_condition",
    "write_run_outputs",
    "load_checkpoint",
    "SUITE_KINDS",
    "SUITE_COLUMNS",
    "SuiteReport",
    "run_suite",
    "default_suite_config",
    "within_tolerance",
    "log_grid",
    "grid_search_eta",
    "cached_root_fn",
    "format_markdown_table"
]

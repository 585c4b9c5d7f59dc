"""
逆根调度模块

后台线程池计算逆根，训练线程在 κ 步边界提交快照与收取结果
"""

from .root_scheduler import (
    RootJob,
    RootResult,
    AdoptionEvent,
    SchedulerStats,
    EventLog,
    InlineExecutor,
    WarmStartExecutor,
    RootScheduler,
    EVENT_COLUMNS,
    make_root_job,
    compute_root,
    create_root_scheduler
)

__all__ = [
    "RootJob",
    "RootResult",
    "AdoptionEvent",
    "SchedulerStats",
    "EventLog",
    "InlineExecutor",
    "WarmStartExecutor",
    "RootScheduler",
    "EVENT_COLUMNS",
    "make_root_job",
    "compute_root",
    "create_root_scheduler"
]

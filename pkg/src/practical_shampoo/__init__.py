"""
Practical Shampoo

Kronecker 分解预条件的二阶优化器：嫁接步长、分块/单侧预条件、双精度逆p次根、
后台异步逆根计算，以及桌面规模的实验驱动。
"""

__version__ = "1.0.0"

# optimizers 必须先于 scheduler 导入
from .optimizers import (
    PreconditionerState,
    PartitionPlan,
    ShampooOptimizer,
    DiagonalAdaGrad,
    Adam,
    SGDMomentum,
    create_optimizer,
    plan_partition,
    shampoo_step,
    verify_lemma
)
from .scheduler import RootScheduler, create_root_scheduler
from .linalg import inverse_pth_root, condition_number, mat_power_oracle
from .config import RunConfig, ShampooConfig, RootConfig, SchedulerMode, ConfigManager
from .harness import train, run_suite
from .main import ExperimentCLI

__all__ = [
    "PreconditionerState",
    "PartitionPlan",
    "ShampooOptimizer",
    "DiagonalAdaGrad",
    "Adam",
    "SGDMomentum",
    "create_optimizer",
    "plan_partition",
    "shampoo_step",
    "verify_lemma",
    "RootScheduler",
    "create_root_scheduler",
    "inverse_pth_root",
    "condition_number",
    "mat_power_oracle",
    "RunConfig",
    "ShampooConfig",
    "RootConfig",
    "SchedulerMode",
    "ConfigManager",
    "train",
    "run_suite",
    "ExperimentCLI",
    "__version__",
]

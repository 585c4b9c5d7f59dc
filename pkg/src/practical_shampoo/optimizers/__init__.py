"""
优化器模块

块级预条件器状态、结构规划、Shampoo 更新规则与基线优化器
"""

# preconditioner_state 必须先于 shampoo 导入（scheduler 依赖它）
from .preconditioner_state import (
    PreconditionerState,
    update_statistics,
    update_diagonal,
    adopt_roots,
    encode_array,
    decode_array
)
from .partitioner import (
    Block,
    PartitionPlan,
    LemmaCheckReport,
    matricize_shape,
    plan_partition,
    complexity_account,
    verify_lemma,
    verify_lemma_property_one
)
from .schedules import learning_rate_schedule, create_schedule
from .base import Optimizer, StepStats
from .baselines import adagrad_step, adam_step, sgd_momentum_step, DiagonalAdaGrad, Adam, SGDMomentum
from .shampoo import (
    UpdateReport,
    ShampooOptimizer,
    shampoo_step,
    grafted_direction,
    preconditioned_gradient,
    sign_flip_fraction,
    offdiagonal_energy
)
from .factory import create_optimizer

__all__ = [
    "PreconditionerState",
    "update_statistics",
    "update_diagonal",
    "adopt_roots",
    "encode_array",
    "decode_array",
    "Block",
    "PartitionPlan",
    "LemmaCheckReport",
    "matricize_shape",
    "plan_partition",
    "complexity_account",
    "verify_lemma",
    "verify_lemma_property_one",
    "learning_rate_schedule",
    "create_schedule",
    "Optimizer",
    "StepStats",
    "adagrad_step",
    "adam_step",
    "sgd_momentum_step",
    "DiagonalAdaGrad",
    "Adam",
    "SGDMomentum",
    "UpdateReport",
    "ShampooOptimizer",
    "shampoo_step",
    "grafted_direction",
    "preconditioned_gradient",
    "sign_flip_fraction",
    "offdiagonal_energy",
    "create_optimizer"
]

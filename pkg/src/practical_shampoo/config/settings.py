"""
类型化配置模型

所有超参数以 pydantic 模型承载，字段约束即不变量；
RunConfig 的字段名与 JSON 配置文件中的 snake_case 键一一对应。
"""

from typing import Any, Dict, List, Literal, Optional

import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..utils.exceptions import ConfigException


class RootConfig(BaseModel):
    """逆p次根计算配置"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    p: int = Field(default=4, ge=1, description="根次数，常用 2/4/8")
    ridge_rel: float = Field(default=1e-6, ge=0.0, description="岭正则系数")
    ridge_mode: Literal['relative', 'absolute'] = Field(
        default='relative', description="relative: ε·λmax；absolute: ε")
    tol: float = Field(default=1e-7, gt=0.0, description="‖M_k − I‖_max 终止阈值")
    max_iter: int = Field(default=100, ge=1)
    power_iters: int = Field(default=100, ge=1, description="λmax 幂迭代次数")


class ShampooConfig(BaseModel):
    """Shampoo 优化器超参数"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    eta0: float = Field(default=0.1, gt=0.0, description="基础学习率 η₀")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="动量 β₁")
    beta2: float = Field(default=1.0, gt=0.0, le=1.0, description="统计量滑动系数 β₂，1 表示纯累加")
    eps_stat: float = Field(default=1e-6, ge=0.0, description="L₀ = R₀ = ε·I")
    kappa: int = Field(default=10, ge=1, description="提交/收取间隔 κ")
    tau: int = Field(default=10, ge=0, description="预热阈值 τ")
    root_update_interval: Optional[int] = Field(
        default=None, ge=1, description="N：同一块两次提交的最小间隔，默认等于 κ")
    block_size: int = Field(default=1024, ge=1)
    max_precond_dim: int = Field(default=4096, ge=1)
    root_cfg: RootConfig = Field(default_factory=RootConfig)
    graft_momentum: bool = Field(default=True, description="False 时使用瞬时范数比")
    floor_d: float = Field(default=1e-30, gt=0.0, description="D 的下限")
    weight_decay: float = Field(default=0.0, ge=0.0, description="统计前加到梯度上的 L2 项")

    @property
    def effective_root_interval(self) -> int:
        return self.root_update_interval or self.kappa


class BaselineConfig(BaseModel):
    """基线优化器（AdaGrad / Adam / SGD+Momentum）超参数"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    eta: float = Field(default=0.1, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="仅 Adam 使用")
    eps: float = Field(default=1e-8, gt=0.0, description="仅 Adam 使用")
    weight_decay: float = Field(default=0.0, ge=0.0)
    floor_d: float = Field(default=1e-30, gt=0.0, description="AdaGrad 的 D 下限")


ScheduleKind = Literal['constant', 'linear_warmup', 'quadratic_warmup', 'rsqrt_decay', 'staircase']


class ScheduleConfig(BaseModel):
    """学习率调度配置"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: ScheduleKind = 'constant'
    warmup_steps: int = Field(default=0, ge=0, description="预热步数；rsqrt_decay 中为 d")
    decay_boundaries: List[float] = Field(default_factory=list, description="staircase 衰减边界（epoch）")
    decay_factor: float = Field(default=10.0, gt=1.0)
    steps_per_epoch: int = Field(default=1, ge=1)


class SchedulerMode(BaseModel):
    """根计算调度模式"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: Literal['async', 'sync_delayed'] = 'sync_delayed'
    workers: Optional[int] = Field(default=None, ge=1, description="async 工作线程数")
    delay_steps: int = Field(default=0, ge=0, description="sync_delayed 的收取延迟")

    def resolved_workers(self) -> int:
        """工作线程数，默认保留一个核给训练线程"""
        if self.workers is not None:
            return self.workers
        cores = psutil.cpu_count(logical=True) or 2
        return max(1, cores - 1)


class ProblemConfig(BaseModel):
    """实验问题配置"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: Literal['quadratic', 'logistic', 'mlp'] = 'quadratic'
    seed: Optional[int] = Field(default=None, ge=0, description="缺省时沿用运行种子")
    # quadratic
    m: int = Field(default=32, ge=1)
    n: int = Field(default=32, ge=1)
    cond: float = Field(default=1e4, ge=1.0)
    left_share: float = Field(default=0.5, ge=0.0, le=1.0)
    # logistic
    dim: int = Field(default=20, ge=1)
    separation: float = Field(default=2.0, ge=0.0)
    # mlp
    widths: List[int] = Field(default_factory=lambda: [10, 16])
    # 通用
    n_samples: int = Field(default=512, ge=2)
    noise_scale: float = Field(default=0.0, ge=0.0)
    batch_size: Optional[int] = Field(default=None, ge=1, description="缺省为全批量")


OptimizerKind = Literal['shampoo', 'adagrad', 'adam', 'sgd']


class RunConfig(BaseModel):
    """单次训练运行配置"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    optimizer: OptimizerKind = 'shampoo'
    shampoo: ShampooConfig = Field(default_factory=ShampooConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    scheduler: SchedulerMode = Field(default_factory=SchedulerMode)
    steps: int = Field(default=1000, ge=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    out_dir: Optional[str] = None
    loss_thresholds: List[float] = Field(default_factory=list)
    divergence_loss: float = Field(default=1e10, gt=0.0)
    record_timings: Optional[bool] = None
    checkpoint: bool = True
    logging: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _check_thresholds(self) -> 'RunConfig':
        if any(th <= 0 for th in self.loss_thresholds):
            raise ValueError("loss_thresholds 必须为正数")
        return self

    @property
    def timings_enabled(self) -> bool:
        """未显式指定时：async 模式记录耗时，sync_delayed 模式写 0 以保证可复现"""
        if self.record_timings is not None:
            return self.record_timings
        return self.scheduler.kind == 'async'


def load_run_config(data: Dict[str, Any]) -> RunConfig:
    """从字典构建 RunConfig，校验失败转为 ConfigException

    Args:
        data: 配置字典

    Returns:
        RunConfig 实例
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0] if e.errors() else {}
        field = '.'.join(str(x) for x in first.get('loc', ()))
        raise ConfigException(f"运行配置校验失败: {e}", field_name=field or None,
                              field_value=first.get('input')) from e

"""
预条件结构规划

为每个参数张量决定：
1. 矩阵化形状（1 阶视为 (m,1) 列向量，≥3 阶把尾部维度折叠成列）
2. 哪一侧做预条件（超过 max_precond_dim 的维度跳过）
3. 指数分配（双侧 −1/4，单侧 −1/2，两侧都跳过时退化为对角 AdaGrad）
4. 分块（所有超过 block_size 的维度都切分，最后一块允许更小）

另外提供 Kronecker 上界引理的数值验证与复杂度估算。
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ..config.settings import ShampooConfig
from ..linalg.dense_core import frobenius_norm, kronecker, loewner_leq, mat_power_oracle
from ..utils.exceptions import CapacityException, ConfigException, DimensionException
from ..utils.logger import get_logger

logger = get_logger('partitioner')

BOTH_SIDES_EXPONENT = -0.25
ONE_SIDE_EXPONENT = -0.5
LEMMA_MAX_SIZE = 4096
LEMMA_CONJUGATE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Block:
    """张量的一个子块，行列均为半开区间"""
    index: int
    rows: Tuple[int, int]
    cols: Tuple[int, int]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows[1] - self.rows[0], self.cols[1] - self.cols[0])

    def slices(self) -> Tuple[slice, slice]:
        return slice(*self.rows), slice(*self.cols)


@dataclass(frozen=True)
class PartitionPlan:
    """单个参数张量的预条件方案"""
    original_shape: Tuple[int, ...]
    shape: Tuple[int, int]
    blocks: Tuple[Block, ...]
    precondition_left: bool
    precondition_right: bool
    exponents: Tuple[Optional[float], Optional[float]]
    flops: int
    memory: int

    @property
    def skipped_dims(self) -> List[int]:
        """未做预条件的矩阵维度（0 为行，1 为列）"""
        flags = (self.precondition_left, self.precondition_right)
        return [axis for axis, flag in enumerate(flags) if not flag]

    @property
    def is_diagonal(self) -> bool:
        return not (self.precondition_left or self.precondition_right)

    def to_dict(self) -> Dict[str, Any]:
        """实验日志用的 JSON 表示"""
        return {
            'shape': list(self.original_shape),
            'matrix_shape': list(self.shape),
            'blocks': [[list(b.rows), list(b.cols)] for b in self.blocks],
            'exponents': list(self.exponents),
            'skipped_dims': self.skipped_dims,
            'flops': self.flops,
            'memory': self.memory
        }


@dataclass(frozen=True)
class LemmaCheckReport:
    """H ⪯ r·L^(1/p) ⊗ R^(1/q) 的检验结果"""
    r: int
    p: float
    q: float
    min_witness_eigenvalue: float
    rhs_norm: float
    holds: bool


def matricize_shape(shape: Sequence[int]) -> Tuple[int, int]:
    """把任意阶张量形状折叠为矩阵形状

    Args:
        shape: 张量形状

    Returns:
        (m, n)：0 阶为 (1,1)，1 阶为 (d,1)，≥3 阶保留首维并折叠其余维度
    """
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise DimensionException("张量维度必须为正", expected='all >= 1', actual=dims)
    if len(dims) == 0:
        return (1, 1)
    if len(dims) == 1:
        return (dims[0], 1)
    return (dims[0], int(np.prod(dims[1:])))


def _split_ranges(dim: int, block_size: int) -> List[Tuple[int, int]]:
    if dim <= block_size:
        return [(0, dim)]
    return [(start, min(start + block_size, dim)) for start in range(0, dim, block_size)]


def plan_partition(shape: Sequence[int], cfg: Optional[ShampooConfig] = None) -> PartitionPlan:
    """规划参数张量的预条件结构

    Args:
        shape: 参数形状（任意阶）
        cfg: Shampoo 配置，使用其中的 block_size 与 max_precond_dim

    Returns:
        PartitionPlan
    """
    cfg = cfg or ShampooConfig()
    original = tuple(int(d) for d in shape)
    m, n = matricize_shape(original)
    vector = len(original) <= 1

    left = m <= cfg.max_precond_dim
    right = (not vector) and n <= cfg.max_precond_dim
    if left and right:
        exponents: Tuple[Optional[float], Optional[float]] = (BOTH_SIDES_EXPONENT, BOTH_SIDES_EXPONENT)
    elif left:
        exponents = (ONE_SIDE_EXPONENT, None)
    elif right:
        exponents = (None, ONE_SIDE_EXPONENT)
    else:
        exponents = (None, None)

    row_ranges = _split_ranges(m, cfg.block_size)
    col_ranges = _split_ranges(n, cfg.block_size)
    blocks = tuple(
        Block(index=i * len(col_ranges) + j, rows=rows, cols=cols)
        for i, rows in enumerate(row_ranges)
        for j, cols in enumerate(col_ranges)
    )

    draft = PartitionPlan(
        original_shape=original,
        shape=(m, n),
        blocks=blocks,
        precondition_left=left,
        precondition_right=right,
        exponents=exponents,
        flops=0,
        memory=0
    )
    flops, memory = complexity_account(draft, (m, n), cfg.block_size)
    plan = PartitionPlan(
        original_shape=original,
        shape=(m, n),
        blocks=blocks,
        precondition_left=left,
        precondition_right=right,
        exponents=exponents,
        flops=flops,
        memory=memory
    )
    if plan.skipped_dims:
        logger.debug(f"形状 {original} 跳过维度 {plan.skipped_dims}，指数 {exponents}")
    return plan


def complexity_account(plan: PartitionPlan, shape: Tuple[int, int],
                       block_size: Optional[int] = None) -> Tuple[int, int]:
    """按大 O 量级估算每步预条件的计算量与内存（常数取 1）

    Args:
        plan: 预条件方案
        shape: 矩阵形状 (m, n)
        block_size: 分块大小；缺省取方案中最大块的边长

    Returns:
        (flops, memory)
    """
    m, n = shape
    if plan.is_diagonal:
        return m * n, m * n
    # 只切分跳过的维度时，逐块的单侧代价之和与不分块相同
    split_rows = plan.precondition_left and any(blk.shape[0] < m for blk in plan.blocks)
    split_cols = plan.precondition_right and any(blk.shape[1] < n for blk in plan.blocks)
    if split_rows or split_cols:
        b = block_size or max(max(blk.shape) for blk in plan.blocks)
        return m * n * b, m * n
    if plan.precondition_left and plan.precondition_right:
        return n * n * m + m * m * n, n * n + m * m
    if plan.precondition_left:
        return m * m * n, m * m
    return n * n * m, n * n


def _inverse(value: float) -> float:
    return 0.0 if math.isinf(value) else 1.0 / value


def verify_lemma(gradients: Sequence[npt.ArrayLike], p: float, q: float, eps: float,
                 tol: float = 1e-8) -> LemmaCheckReport:
    """验证 εI + Σ vec(G)vec(G)ᵀ ⪯ r·L^(1/p) ⊗ R^(1/q)

    vec 取行优先展开，与 L ⊗ R 的排列配对。p 或 q 可以是 math.inf，
    此时对应因子为单位阵。

    Args:
        gradients: 同形状的梯度序列
        p: 左侧指数参数
        q: 右侧指数参数，须满足 1/p + 1/q = 1
        eps: 统计量初始化系数
        tol: 相对容差，判据为 λmin(RHS − H) ≥ −tol·‖RHS‖_F

    Returns:
        LemmaCheckReport
    """
    if p <= 0 or q <= 0 or abs(_inverse(p) + _inverse(q) - 1.0) > LEMMA_CONJUGATE_TOLERANCE:
        raise ConfigException(f"p, q 不满足 1/p + 1/q = 1: p={p}, q={q}", field_name='p,q', field_value=(p, q))
    grads = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in gradients]
    if not grads:
        raise DimensionException("至少需要一个梯度", expected='>= 1', actual=0)
    m, n = grads[0].shape
    if any(g.shape != (m, n) for g in grads):
        raise DimensionException("梯度形状不一致", expected=(m, n), actual=[g.shape for g in grads])
    if m * n > LEMMA_MAX_SIZE:
        raise CapacityException(f"引理验证规模 {m}x{n} 超出上限", requested=m * n, limit=LEMMA_MAX_SIZE)

    vecs = np.stack([g.reshape(-1) for g in grads])
    full = eps * np.eye(m * n) + vecs.T @ vecs
    left = eps * np.eye(m) + sum(g @ g.T for g in grads)
    right = eps * np.eye(n) + sum(g.T @ g for g in grads)

    r = min(m, n)
    rhs = r * kronecker(mat_power_oracle(left, _inverse(p)), mat_power_oracle(right, _inverse(q)))
    rhs_norm = frobenius_norm(rhs)
    witness = loewner_leq(full, rhs).witness
    holds = witness >= -tol * rhs_norm
    if not holds:
        logger.warning(f"引理检验失败: p={p}, q={q}, witness={witness:.3e}")
    return LemmaCheckReport(r=r, p=p, q=q, min_witness_eigenvalue=witness,
                            rhs_norm=rhs_norm, holds=holds)


def verify_lemma_property_one(gradients: Sequence[npt.ArrayLike], eps: float,
                              tol: float = 1e-8) -> Tuple[LemmaCheckReport, LemmaCheckReport]:
    """单侧上界 H ⪯ r·L ⊗ I 与 H ⪯ r·I ⊗ R"""
    return (verify_lemma(gradients, 1.0, math.inf, eps, tol),
            verify_lemma(gradients, math.inf, 1.0, eps, tol))

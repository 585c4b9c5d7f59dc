"""
预条件器状态

每个（子）块持有左右统计量 L/R、对角累加器 D、两路动量 M/P、缓存的逆根，
以及两个步数计数器。状态只属于训练线程；根计算任务拿到的是统计量的副本。
"""

import base64
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from ..linalg.dense_core import Matrix
from ..utils.exceptions import DimensionException, NumericalException
from ..utils.logger import get_logger

if TYPE_CHECKING:
    from ..scheduler.root_scheduler import RootResult

logger = get_logger('preconditioner_state')

SIDES = ('left', 'right')


def encode_array(array: Optional[npt.NDArray[np.float64]]) -> Optional[Dict[str, Any]]:
    """float64 数组编码为带形状标签的 base64 文本"""
    if array is None:
        return None
    contiguous = np.ascontiguousarray(array, dtype=np.float64)
    return {
        'shape': list(contiguous.shape),
        'dtype': 'float64',
        'data': base64.b64encode(contiguous.tobytes()).decode('ascii')
    }


def decode_array(payload: Optional[Dict[str, Any]]) -> Optional[npt.NDArray[np.float64]]:
    """encode_array 的逆运算，逐位还原"""
    if payload is None:
        return None
    if payload.get('dtype') != 'float64':
        raise NumericalException(f"不支持的数组类型: {payload.get('dtype')}", calculation_type='checkpoint')
    raw = base64.b64decode(payload['data'])
    return np.frombuffer(raw, dtype=np.float64).reshape(payload['shape']).copy()


@dataclass
class PreconditionerState:
    """单个块的预条件器状态

    L 为 m×m，R 为 n×n；不做预条件的一侧为 None。exponents 与之对应，
    未预条件的一侧为 None。root_step 为 None 表示尚未收取过逆根。
    """
    tensor_id: str
    shape: Tuple[int, int]
    exponents: Tuple[Optional[float], Optional[float]]
    L: Optional[Matrix]
    R: Optional[Matrix]
    D: Matrix
    M: Matrix
    P: Matrix
    root_L: Optional[Matrix] = None
    root_R: Optional[Matrix] = None
    stats_step: int = 0
    root_step: Optional[int] = None

    @classmethod
    def create(cls, tensor_id: str, shape: Tuple[int, int],
               exponents: Tuple[Optional[float], Optional[float]],
               eps_stat: float = 1e-6) -> 'PreconditionerState':
        """按 L₀ = R₀ = ε·I、D₀ = M₀ = P₀ = 0 初始化

        Args:
            tensor_id: 块标识，如 "p0.b1"
            shape: 块形状 (m, n)
            exponents: (e_L, e_R)，None 表示该侧不做预条件
            eps_stat: 统计量初始化系数

        Returns:
            新的状态
        """
        m, n = shape
        if m < 1 or n < 1:
            raise DimensionException("块形状必须为正", expected='m, n >= 1', actual=shape)
        left = eps_stat * np.eye(m) if exponents[0] is not None else None
        right = eps_stat * np.eye(n) if exponents[1] is not None else None
        return cls(
            tensor_id=tensor_id,
            shape=(m, n),
            exponents=exponents,
            L=left,
            R=right,
            D=np.zeros((m, n)),
            M=np.zeros((m, n)),
            P=np.zeros((m, n))
        )

    @property
    def precondition_left(self) -> bool:
        return self.exponents[0] is not None

    @property
    def precondition_right(self) -> bool:
        return self.exponents[1] is not None

    @property
    def preconditioned_sides(self) -> List[str]:
        """需要逆根的一侧列表"""
        flags = (self.precondition_left, self.precondition_right)
        return [side for side, flag in zip(SIDES, flags) if flag]

    @property
    def has_roots(self) -> bool:
        return self.root_step is not None

    @property
    def staleness(self) -> Optional[int]:
        """当前逆根落后于统计量的步数"""
        if self.root_step is None:
            return None
        return self.stats_step - self.root_step

    def statistic(self, side: str) -> Optional[Matrix]:
        return self.L if side == 'left' else self.R

    def exponent(self, side: str) -> Optional[float]:
        return self.exponents[0] if side == 'left' else self.exponents[1]

    def to_dict(self) -> Dict[str, Any]:
        """序列化为 JSON 友好的字典（float64 逐位保真）"""
        return {
            'tensor_id': self.tensor_id,
            'shape': list(self.shape),
            'exponents': list(self.exponents),
            'L': encode_array(self.L),
            'R': encode_array(self.R),
            'D': encode_array(self.D),
            'M': encode_array(self.M),
            'P': encode_array(self.P),
            'root_L': encode_array(self.root_L),
            'root_R': encode_array(self.root_R),
            'stats_step': self.stats_step,
            'root_step': self.root_step
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PreconditionerState':
        """从 to_dict 的输出还原状态"""
        exponents = data['exponents']
        d_matrix = decode_array(data['D'])
        m_matrix = decode_array(data['M'])
        p_matrix = decode_array(data['P'])
        assert d_matrix is not None and m_matrix is not None and p_matrix is not None
        return cls(
            tensor_id=data['tensor_id'],
            shape=(int(data['shape'][0]), int(data['shape'][1])),
            exponents=(exponents[0], exponents[1]),
            L=decode_array(data['L']),
            R=decode_array(data['R']),
            D=d_matrix,
            M=m_matrix,
            P=p_matrix,
            root_L=decode_array(data['root_L']),
            root_R=decode_array(data['root_R']),
            stats_step=int(data['stats_step']),
            root_step=data['root_step']
        )


def check_gradient(state: PreconditionerState, grad: npt.ArrayLike) -> Matrix:
    """校验梯度块的形状与有限性，1 维梯度视为列向量"""
    g = np.asarray(grad, dtype=np.float64)
    if g.ndim == 1:
        g = g.reshape(-1, 1)
    if g.shape != state.shape:
        raise DimensionException(f"梯度形状与块 {state.tensor_id} 不一致",
                                 expected=state.shape, actual=g.shape)
    if not np.all(np.isfinite(g)):
        raise NumericalException(f"块 {state.tensor_id} 的梯度包含非有限值",
                                 calculation_type='statistics')
    return g


def update_statistics(state: PreconditionerState, grad: npt.ArrayLike, beta2: float = 1.0) -> PreconditionerState:
    """累积 L/R 统计量

    β₂ = 1 时为纯累加 L += G·Gᵀ、R += Gᵀ·G；否则为指数滑动平均。
    非法梯度会在修改任何字段之前被拒绝。

    Args:
        state: 块状态（原地更新）
        grad: 梯度块
        beta2: 滑动系数，(0, 1]

    Returns:
        更新后的状态
    """
    if not 0.0 < beta2 <= 1.0:
        raise NumericalException(f"beta2 超出 (0, 1]: {beta2}", calculation_type='statistics')
    g = check_gradient(state, grad)

    if beta2 == 1.0:
        if state.L is not None:
            state.L = state.L + g @ g.T
        if state.R is not None:
            state.R = state.R + g.T @ g
    else:
        if state.L is not None:
            state.L = beta2 * state.L + (1.0 - beta2) * (g @ g.T)
        if state.R is not None:
            state.R = beta2 * state.R + (1.0 - beta2) * (g.T @ g)
    state.stats_step += 1
    return state


def update_diagonal(state: PreconditionerState, grad: npt.ArrayLike) -> PreconditionerState:
    """D += G∘G（与 β₂ 无关，始终是纯累加）"""
    g = check_gradient(state, grad)
    state.D = state.D + g * g
    return state


def adopt_roots(state: PreconditionerState,
                results: Union['RootResult', Iterable['RootResult']]) -> bool:
    """原子地收取同一快照的逆根

    每个需要预条件的一侧都必须在 results 中出现且 snapshot_step 相同，
    否则不收取。快照步数不新于当前 root_step 的结果直接丢弃（单调收取）。

    Args:
        state: 块状态（原地更新）
        results: 单个 RootResult 或同一快照的一组结果

    Returns:
        是否发生了收取
    """
    batch = [results] if hasattr(results, 'snapshot_step') else list(results)  # type: ignore[arg-type]
    if not batch:
        return False

    snapshot_steps = {r.snapshot_step for r in batch}
    if len(snapshot_steps) != 1:
        logger.warning(f"块 {state.tensor_id} 的逆根来自不同快照 {sorted(snapshot_steps)}，已丢弃")
        return False
    snapshot_step = snapshot_steps.pop()

    if state.root_step is not None and snapshot_step <= state.root_step:
        logger.debug(f"块 {state.tensor_id} 丢弃过期逆根: 快照 {snapshot_step} <= {state.root_step}")
        return False
    if snapshot_step > state.stats_step:
        logger.warning(f"块 {state.tensor_id} 收到来自未来的快照 {snapshot_step}，已丢弃")
        return False

    by_side = {r.side: r for r in batch}
    new_roots: Dict[str, Matrix] = {}
    for side in state.preconditioned_sides:
        result = by_side.get(side)
        if result is None:
            logger.debug(f"块 {state.tensor_id} 快照 {snapshot_step} 缺少 {side} 侧逆根")
            return False
        stat = state.statistic(side)
        assert stat is not None
        if result.root.shape != stat.shape:
            logger.warning(f"块 {state.tensor_id} 的 {side} 侧逆根形状 {result.root.shape} "
                           f"与统计量 {stat.shape} 不一致，已丢弃")
            return False
        new_roots[side] = result.root

    if 'left' in new_roots:
        state.root_L = new_roots['left']
    if 'right' in new_roots:
        state.root_R = new_roots['right']
    state.root_step = snapshot_step
    return True

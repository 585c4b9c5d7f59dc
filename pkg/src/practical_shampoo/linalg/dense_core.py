"""
稠密对称线性代数基础

特征分解（作为所有矩阵幂的真值参照）、Kronecker 积、Loewner 序判定、
逐元素运算与范数。所有运算都是输入的纯函数，统一使用 float64。
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import numpy.typing as npt

from ..utils.exceptions import (
    CapacityException,
    DimensionException,
    NumericalException,
    SingularityException,
    SymmetryException,
)

Matrix = npt.NDArray[np.float64]

# 超过该阈值的不对称直接报错，低于阈值时对称化
SYMMETRY_TOLERANCE = 1e-8
# Kronecker 积结果的元素数上限（约 1 GiB float64）
MAX_KRONECKER_ENTRIES = 1 << 27


@dataclass(frozen=True)
class SymEig:
    """对称特征分解 A = V·diag(λ)·Vᵀ，特征值升序"""
    eigenvalues: npt.NDArray[np.float64]
    eigenvectors: Matrix

    def reconstruct(self) -> Matrix:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


class LoewnerCheck(NamedTuple):
    """Loewner 序判定结果，witness 为 λmin(B − A)"""
    holds: bool
    witness: float


def as_matrix(a: npt.ArrayLike, name: str = 'matrix') -> Matrix:
    """转换为二维 float64 矩阵并检查有限性

    Args:
        a: 任意数组
        name: 报错时使用的名称

    Returns:
        二维 float64 数组
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionException(f"{name} 必须是二维矩阵", expected=2, actual=arr.ndim)
    if not np.all(np.isfinite(arr)):
        raise NumericalException(f"{name} 含有 NaN/Inf", calculation_type='finiteness')
    return arr


def symmetrize(a: npt.ArrayLike, name: str = 'matrix') -> Matrix:
    """对称化 (A + Aᵀ)/2，相对不对称度超过 SYMMETRY_TOLERANCE 时报错"""
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionException(f"{name} 必须是方阵", expected='square', actual=arr.shape)
    scale = np.linalg.norm(arr)
    if scale > 0.0:
        asymmetry = float(np.linalg.norm(arr - arr.T) / scale)
        if asymmetry > SYMMETRY_TOLERANCE:
            raise SymmetryException(f"{name} 不对称 (相对误差 {asymmetry:.3e})", asymmetry=asymmetry)
    return 0.5 * (arr + arr.T)


def sym_eig(a: npt.ArrayLike) -> SymEig:
    """对称矩阵的特征分解

    Args:
        a: 对称方阵

    Returns:
        SymEig，特征值升序、特征向量列正交
    """
    sym = symmetrize(a)
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    return SymEig(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def _is_nonnegative_integer(alpha: float) -> bool:
    return alpha >= 0 and float(alpha).is_integer()


def mat_power_oracle(a: npt.ArrayLike, alpha: float) -> Matrix:
    """基于特征分解的矩阵幂 A^α = U·D^α·Uᵀ

    是根求解器的真值参照。负特征值（超出 −1e-12·λmax）只允许非负整数次幂；
    负指数要求最小特征值严格为正。

    Args:
        a: 对称半正定矩阵
        alpha: 指数

    Returns:
        A^α
    """
    eig = sym_eig(a)
    lam = eig.eigenvalues
    lam_max = float(np.max(np.abs(lam))) if lam.size else 0.0

    if _is_nonnegative_integer(alpha):
        powered = lam ** int(alpha)
    else:
        if lam.size and lam[0] < -1e-12 * lam_max:
            raise SingularityException(f"矩阵存在负特征值 {lam[0]:.3e}，无法计算 {alpha} 次幂",
                                       min_value=float(lam[0]))
        lam = np.clip(lam, 0.0, None)
        if alpha < 0 and (lam.size == 0 or lam[0] <= 0.0):
            raise SingularityException(f"奇异矩阵无法计算负幂 {alpha}",
                                       min_value=float(lam[0]) if lam.size else None)
        powered = lam ** alpha

    result = (eig.eigenvectors * powered) @ eig.eigenvectors.T
    return 0.5 * (result + result.T)


def kronecker(a: npt.ArrayLike, b: npt.ArrayLike) -> Matrix:
    """Kronecker 积，(i,j) 块为 A_ij·B"""
    left = as_matrix(a, 'A')
    right = as_matrix(b, 'B')
    rows = left.shape[0] * right.shape[0]
    cols = left.shape[1] * right.shape[1]
    if rows * cols > MAX_KRONECKER_ENTRIES:
        raise CapacityException(f"Kronecker 积规模 {rows}x{cols} 超出上限",
                                requested=rows * cols, limit=MAX_KRONECKER_ENTRIES)
    return np.kron(left, right)


def loewner_leq(a: npt.ArrayLike, b: npt.ArrayLike, tol: float = 1e-10) -> LoewnerCheck:
    """判定 A ⪯ B，即 B − A 半正定

    Args:
        a: 对称矩阵
        b: 同形状对称矩阵
        tol: 相对容差，判据为 λmin(B−A) ≥ −tol·max(1, ‖B−A‖_F)

    Returns:
        LoewnerCheck(holds, witness=λmin(B−A))
    """
    left = symmetrize(a, 'A')
    right = symmetrize(b, 'B')
    if left.shape != right.shape:
        raise DimensionException("Loewner 序比较的矩阵形状不一致",
                                 expected=left.shape, actual=right.shape)
    diff = right - left
    witness = float(np.linalg.eigvalsh(diff)[0]) if diff.size else 0.0
    scale = max(1.0, float(np.linalg.norm(diff)))
    return LoewnerCheck(holds=witness >= -tol * scale, witness=witness)


def elementwise(a: npt.ArrayLike, b: npt.ArrayLike, kind: str = 'hadamard') -> Matrix:
    """逐元素二元运算，目前只支持 Hadamard 积"""
    left = as_matrix(a, 'A')
    right = as_matrix(b, 'B')
    if left.shape != right.shape:
        raise DimensionException("逐元素运算的矩阵形状不一致",
                                 expected=left.shape, actual=right.shape)
    if kind != 'hadamard':
        raise NumericalException(f"未知的逐元素运算: {kind}", calculation_type='elementwise')
    return left * right


def hadamard(a: npt.ArrayLike, b: npt.ArrayLike) -> Matrix:
    return elementwise(a, b, 'hadamard')


def elementwise_power(a: npt.ArrayLike, alpha: float, floor: Optional[float] = None) -> Matrix:
    """逐元素幂 (A^{⊙α})_ij = A_ij^α

    Args:
        a: 矩阵
        alpha: 指数
        floor: 负指数时的下限，元素先截断到 floor 再取幂

    Returns:
        逐元素幂
    """
    arr = as_matrix(a, 'A')
    if floor is not None:
        arr = np.maximum(arr, floor)
    if alpha < 0 and arr.size and float(arr.min()) <= 0.0:
        raise SingularityException(f"非正元素无法取负幂 {alpha}", min_value=float(arr.min()))
    return arr ** alpha


def frobenius_norm(a: npt.ArrayLike) -> float:
    """Frobenius 范数"""
    return float(np.linalg.norm(as_matrix(a)))


def random_orthogonal(rng: np.random.Generator, n: int) -> Matrix:
    """Haar 分布的随机正交矩阵"""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_psd(rng: np.random.Generator, n: int, cond: float = 1e2, scale: float = 1.0) -> Matrix:
    """条件数为 cond 的随机正定矩阵，特征值在 [scale/cond, scale] 上按对数均匀分布"""
    q = random_orthogonal(rng, n)
    if n == 1:
        eigenvalues = np.array([scale])
    else:
        eigenvalues = scale * np.logspace(0.0, -np.log10(cond), n)
    a = (q * eigenvalues) @ q.T
    return 0.5 * (a + a.T)

"""
逆p次根求解器

耦合牛顿迭代（Schur-Newton 类）在双精度下计算 A^(-1/p)：

    Â  = A + ε·λ̂max·I            （相对岭；absolute 模式下为 ε·I）
    c  = λ̂max(Â)·(1 + 1e-6)
    M₀ = Â / c,  X₀ = c^(-1/p)·I
    T_k = ((p+1)·I − M_k) / p
    X_{k+1} = X_k·T_k,  M_{k+1} = T_k^p·M_k

当 ‖M_k − I‖_max ≤ tol 时停止。不收敛不是致命错误：返回误差最小的迭代值并在
诊断信息中标记，由上游调度器决定回退策略。
"""

import time
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from ..config.settings import RootConfig
from ..utils.exceptions import ConfigException, DimensionException, NotPSDException, SingularityException
from ..utils.logger import get_logger
from .dense_core import Matrix, mat_power_oracle, random_psd, sym_eig, symmetrize

logger = get_logger('root_solver')

POWER_ITERATION_SEED = 1729
LAMBDA_MAX_INFLATION = 1e-6
PSD_TOLERANCE = 1e-10
BENCH_COLUMNS = ['method', 'n', 'ms', 'residual']


@dataclass(frozen=True)
class RootDiagnostics:
    """根计算诊断信息"""
    iterations: int
    residual: float
    lambda_max_estimate: float
    condition_estimate: float
    converged: bool
    ridge: float = 0.0
    method: str = 'coupled_newton'


def power_iteration(a: Matrix, num_iters: int = 100,
                    seed: int = POWER_ITERATION_SEED) -> Tuple[float, npt.NDArray[np.float64]]:
    """幂迭代估计对称半正定矩阵的最大特征值

    Args:
        a: 对称半正定矩阵
        num_iters: 迭代次数（固定次数，保证确定性）
        seed: 初始向量种子

    Returns:
        (λ̂max, 对应特征向量)
    """
    n = a.shape[0]
    v = np.random.default_rng(seed).uniform(-1.0, 1.0, n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(num_iters):
        w = a @ v
        estimate = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
    return estimate, v


def _regularize(a: Matrix, cfg: RootConfig) -> Tuple[Matrix, float, float]:
    """加岭并返回 (Â, 实际岭值, λ̂max(A))"""
    lam_max, _ = power_iteration(a, cfg.power_iters)
    if cfg.ridge_mode == 'relative':
        ridge = cfg.ridge_rel * (lam_max if lam_max > 0.0 else 1.0)
    else:
        ridge = cfg.ridge_rel
    regularized = a + ridge * np.eye(a.shape[0])
    return regularized, ridge, lam_max


def _check_psd(a: Matrix, lam_max: float) -> None:
    """λmin < −1e-10·λmax 视为非半正定；用 Cholesky 检测避免完整特征分解"""
    shift = PSD_TOLERANCE * max(abs(lam_max), np.finfo(np.float64).tiny)
    try:
        np.linalg.cholesky(a + shift * np.eye(a.shape[0]))
    except np.linalg.LinAlgError as e:
        min_eig = float(np.linalg.eigvalsh(a)[0])
        raise NotPSDException(f"输入不是半正定矩阵 (λmin={min_eig:.3e})", min_eigenvalue=min_eig) from e


def inverse_pth_root(a: npt.ArrayLike, cfg: Optional[RootConfig] = None) -> Tuple[Matrix, RootDiagnostics]:
    """计算 (A + ridge·I)^(-1/p)

    Args:
        a: 对称半正定矩阵
        cfg: 根计算配置

    Returns:
        (X, 诊断信息)
    """
    cfg = cfg or RootConfig()
    sym = symmetrize(a, 'statistics')
    n = sym.shape[0]
    if n == 0:
        raise DimensionException("空矩阵无法求根", expected='n >= 1', actual=sym.shape)

    regularized, ridge, lam_max = _regularize(sym, cfg)
    _check_psd(sym, lam_max)
    p = cfg.p

    if n == 1:
        value = float(regularized[0, 0])
        if value <= 0.0:
            raise SingularityException("零矩阵且岭为零，无法求逆根", min_value=value)
        root = np.array([[value ** (-1.0 / p)]])
        return root, RootDiagnostics(iterations=0, residual=0.0, lambda_max_estimate=value,
                                     condition_estimate=1.0, converged=True, ridge=ridge)

    lam_hat = lam_max + ridge
    if lam_hat <= 0.0:
        raise SingularityException("零矩阵且岭为零，无法求逆根", min_value=lam_hat)
    c = lam_hat * (1.0 + LAMBDA_MAX_INFLATION)

    identity = np.eye(n)
    diagonal = np.diag_indices(n)
    mat_m = regularized / c
    mat_x = c ** (-1.0 / p) * identity
    error = float(np.max(np.abs(mat_m - identity)))
    best_x, best_error = mat_x, error
    iterations = 0
    stalled = 0

    while error > cfg.tol and iterations < cfg.max_iter:
        mat_t = mat_m * (-1.0 / p)
        mat_t[diagonal] += (p + 1.0) / p
        mat_x = mat_x @ mat_t
        mat_m = np.linalg.matrix_power(mat_t, p) @ mat_m
        iterations += 1
        error = float(np.max(np.abs(mat_m - identity)))
        if not np.isfinite(error):
            break
        if error < best_error:
            best_x, best_error = mat_x, error
            stalled = 0
        else:
            # 舍入误差主导后残差不再下降
            stalled += 1
            if stalled >= 3:
                break

    converged = best_error <= cfg.tol
    if not converged:
        logger.warning(f"逆{p}次根未收敛: n={n}, 迭代 {iterations} 次, 残差 {best_error:.3e}")

    root = 0.5 * (best_x + best_x.T)
    # λmax(X) = λmin(Â)^(-1/p)
    lam_root, _ = power_iteration(root, cfg.power_iters)
    lam_min_est = max(lam_root ** (-p), np.finfo(np.float64).tiny)
    diagnostics = RootDiagnostics(
        iterations=iterations,
        residual=best_error,
        lambda_max_estimate=lam_hat,
        condition_estimate=lam_hat / lam_min_est,
        converged=converged,
        ridge=ridge
    )
    return root, diagnostics


def regularized_matrix(a: npt.ArrayLike, cfg: Optional[RootConfig] = None) -> Matrix:
    """返回求根时实际使用的 Â，便于与特征分解参照比较"""
    cfg = cfg or RootConfig()
    regularized, _, _ = _regularize(symmetrize(a, 'statistics'), cfg)
    return regularized


def root_residual(root: Matrix, regularized: Matrix, p: int) -> float:
    """根契约残差 ‖X^(-p) − Â‖_F / ‖Â‖_F"""
    reconstructed = mat_power_oracle(root, -float(p))
    return float(np.linalg.norm(reconstructed - regularized) / np.linalg.norm(regularized))


def condition_number(a: npt.ArrayLike) -> float:
    """λmax/λmin，λmin ≤ 0 时返回 +inf"""
    eigenvalues = sym_eig(a).eigenvalues
    lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    if lam_min <= 0.0:
        return float('inf')
    return lam_max / lam_min


def bench_root(sizes: Iterable[int],
               methods: Sequence[str] = ('coupled_newton', 'eig_oracle'),
               p: int = 4,
               cond: float = 1e3,
               seed: int = 0,
               repeats: int = 3,
               root_cfg: Optional[RootConfig] = None) -> pd.DataFrame:
    """在随机正定矩阵上对比逆根计算耗时

    Args:
        sizes: 矩阵维度列表（每个 ≥ 2）
        methods: coupled_newton / eig_oracle
        p: 根次数
        cond: 随机矩阵条件数
        seed: 随机种子
        repeats: 每个组合的重复次数，取最短耗时
        root_cfg: 牛顿迭代配置，缺省用 RootConfig 默认值；根次数总是取 p

    Returns:
        列为 method,n,ms,residual 的表
    """
    cfg = (root_cfg or RootConfig()).model_copy(update={'p': p})
    rng = np.random.default_rng(seed)
    rows: List[dict] = []
    for n in sizes:
        if n < 2:
            raise DimensionException("bench_root 的维度必须 ≥ 2", expected='>= 2', actual=n)
        matrix = random_psd(rng, n, cond)
        regularized = regularized_matrix(matrix, cfg)
        for method in methods:
            best_ms = float('inf')
            root: Optional[Matrix] = None
            for _ in range(repeats):
                start = time.perf_counter()
                if method == 'coupled_newton':
                    root, _ = inverse_pth_root(matrix, cfg)
                elif method == 'eig_oracle':
                    root = mat_power_oracle(regularized, -1.0 / p)
                else:
                    raise ConfigException(f"未知的求根方法: {method}", field_name="methods", field_value=method)
                best_ms = min(best_ms, (time.perf_counter() - start) * 1000.0)
            assert root is not None
            rows.append({
                'method': method,
                'n': n,
                'ms': best_ms,
                'residual': root_residual(root, regularized, p)
            })
            logger.debug(f"bench_root: {method} n={n} {best_ms:.2f}ms")
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)

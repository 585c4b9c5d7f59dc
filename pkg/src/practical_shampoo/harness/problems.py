"""
实验问题

桌面规模的替代问题：
- QuadraticProblem：f(W) = ½‖A(W − W*)B‖_F²，梯度具有精确的 Kronecker 结构
- LogisticProblem：高斯类簇上的逻辑回归
- MLPProblem：两层 tanh 网络拟合非线性标注

所有问题的解析梯度都必须通过中心差分检验。
"""

from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ..config.settings import ProblemConfig
from ..linalg.dense_core import random_psd
from ..utils.exceptions import ConfigException
from ..utils.logger import get_logger

Array = npt.NDArray[np.float64]
Params = List[Array]
Batch = Optional[npt.NDArray[np.int64]]

FD_STEP = 1e-5
FD_TOLERANCE = 1e-5


class Problem(ABC):
    """优化问题基类"""

    name = 'problem'
    optimum_loss: Optional[float] = None

    def __init__(self, seed: int, noise_scale: float = 0.0, batch_size: Optional[int] = None,
                 n_samples: Optional[int] = None):
        """初始化问题

        Args:
            seed: 数据生成种子
            noise_scale: 梯度上附加的高斯噪声标准差
            batch_size: 小批量大小，None 为全批量
            n_samples: 样本数（二次问题没有样本）
        """
        self.seed = seed
        self.noise_scale = noise_scale
        self.batch_size = batch_size
        self.n_samples = n_samples
        self.logger = get_logger(f'problem.{self.name}')

    @property
    @abstractmethod
    def shapes(self) -> List[Tuple[int, ...]]:
        """参数形状列表"""

    @abstractmethod
    def init_params(self) -> Params:
        """初始参数（确定性）"""

    @abstractmethod
    def loss(self, params: Params, batch: Batch = None) -> float:
        """损失值"""

    @abstractmethod
    def gradient(self, params: Params, batch: Batch = None) -> Params:
        """解析梯度"""

    def sample_batch(self, rng: np.random.Generator) -> Batch:
        """抽取小批量样本下标，全批量时返回 None"""
        if self.batch_size is None or self.n_samples is None or self.batch_size >= self.n_samples:
            return None
        return np.sort(rng.choice(self.n_samples, size=self.batch_size, replace=False))

    def stochastic_gradient(self, params: Params, rng: np.random.Generator) -> Tuple[Params, float]:
        """训练循环使用的（带噪声的）小批量梯度

        Returns:
            (梯度列表, 该批上的损失)
        """
        batch = self.sample_batch(rng)
        grads = self.gradient(params, batch)
        if self.noise_scale > 0.0:
            grads = [g + self.noise_scale * rng.standard_normal(g.shape) for g in grads]
        return grads, self.loss(params, batch)

    def eval_loss(self, params: Params) -> float:
        return self.loss(params, None)


class QuadraticProblem(Problem):
    """f(W) = ½‖A(W − W*)B‖_F² = ½·tr((W−W*)ᵀ·AᵀA·(W−W*)·BBᵀ)

    Hessian 为 (AᵀA) ⊗ (BBᵀ)，条件数 cond 按 left_share 分给两个因子；
    条件数为 1 的因子取单位阵且不显式存储。
    """

    name = 'quadratic'
    optimum_loss = 0.0

    def __init__(self, seed: int, m: int, n: int, cond: float = 1e4, left_share: float = 0.5,
                 noise_scale: float = 0.0):
        super().__init__(seed, noise_scale)
        if cond < 1.0:
            raise ConfigException(f"条件数必须 ≥ 1: {cond}", field_name='cond', field_value=cond)
        rng = np.random.default_rng(seed)
        self.m, self.n = m, n
        self.cond = cond
        left_cond = cond ** left_share
        right_cond = cond ** (1.0 - left_share)
        self.left_gram: Optional[Array] = random_psd(rng, m, left_cond) if left_cond > 1.0 and m > 1 else None
        self.right_gram: Optional[Array] = random_psd(rng, n, right_cond) if right_cond > 1.0 and n > 1 else None
        self.target = rng.standard_normal((m, n))

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [(self.m, self.n)]

    def init_params(self) -> Params:
        return [np.zeros((self.m, self.n))]

    def _sides(self, error: Array) -> Tuple[Array, Array]:
        left = self.left_gram @ error if self.left_gram is not None else error
        right = error @ self.right_gram if self.right_gram is not None else error
        return left, right

    def loss(self, params: Params, batch: Batch = None) -> float:
        error = params[0] - self.target
        left, right = self._sides(error)
        return 0.5 * float(np.sum(left * right))

    def gradient(self, params: Params, batch: Batch = None) -> Params:
        error = params[0] - self.target
        grad = self.left_gram @ error if self.left_gram is not None else error
        if self.right_gram is not None:
            grad = grad @ self.right_gram
        return [grad]


def _logistic_loss(margins: Array) -> float:
    return float(np.mean(np.logaddexp(0.0, -margins)))


def _logistic_slope(margins: Array) -> Array:
    """d/dz log(1 + exp(−z)) = −σ(−z)，用 logaddexp 保持数值稳定"""
    return -np.exp(-np.logaddexp(0.0, margins))


class LogisticProblem(Problem):
    """二分类逻辑回归，参数为权重 (dim,) 与偏置 (1,)"""

    name = 'logistic'

    def __init__(self, seed: int, dim: int = 20, n_samples: int = 512, separation: float = 2.0,
                 noise_scale: float = 0.0, batch_size: Optional[int] = None):
        super().__init__(seed, noise_scale, batch_size, n_samples)
        rng = np.random.default_rng(seed)
        self.dim = dim
        direction = rng.standard_normal(dim)
        self.direction = direction / np.linalg.norm(direction)
        self.labels = np.where(rng.random(n_samples) < 0.5, -1.0, 1.0)
        self.features = (self.labels[:, None] * (0.5 * separation) * self.direction[None, :]
                         + rng.standard_normal((n_samples, dim)))

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [(self.dim,), (1,)]

    def init_params(self) -> Params:
        return [np.zeros(self.dim), np.zeros(1)]

    def _data(self, batch: Batch) -> Tuple[Array, Array]:
        if batch is None:
            return self.features, self.labels
        return self.features[batch], self.labels[batch]

    def loss(self, params: Params, batch: Batch = None) -> float:
        x, y = self._data(batch)
        return _logistic_loss(y * (x @ params[0] + params[1][0]))

    def gradient(self, params: Params, batch: Batch = None) -> Params:
        x, y = self._data(batch)
        slope = y * _logistic_slope(y * (x @ params[0] + params[1][0])) / len(y)
        return [x.T @ slope, np.array([np.sum(slope)])]


class MLPProblem(Problem):
    """两层 tanh 网络 f(x) = w₂·tanh(W₁x + b₁) + b₂，逻辑损失

    标签由固定的非线性函数 sign(sin(3·x·u) + x·v) 给出。
    """

    name = 'mlp'

    def __init__(self, seed: int, widths: Sequence[int] = (10, 16), n_samples: int = 512,
                 noise_scale: float = 0.0, batch_size: Optional[int] = None):
        super().__init__(seed, noise_scale, batch_size, n_samples)
        widths = list(widths)
        if len(widths) < 2:
            raise ConfigException("MLP 至少需要输入与隐藏两层宽度", field_name='widths', field_value=widths)
        if any(w < 1 for w in widths):
            raise ConfigException(f"MLP 宽度必须为正: {widths}", field_name='widths', field_value=widths)
        self.input_dim, self.hidden = widths[0], widths[1]
        rng = np.random.default_rng(seed)
        self.features = rng.standard_normal((n_samples, self.input_dim))
        u = rng.standard_normal(self.input_dim) / np.sqrt(self.input_dim)
        v = rng.standard_normal(self.input_dim) / np.sqrt(self.input_dim)
        score = np.sin(3.0 * self.features @ u) + self.features @ v
        self.labels = np.where(score >= 0.0, 1.0, -1.0)
        self._init_rng_seed = int(rng.integers(0, 2 ** 31))

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [(self.hidden, self.input_dim), (self.hidden,), (self.hidden,), (1,)]

    def init_params(self) -> Params:
        rng = np.random.default_rng(self._init_rng_seed)
        return [
            rng.standard_normal((self.hidden, self.input_dim)) / np.sqrt(self.input_dim),
            np.zeros(self.hidden),
            rng.standard_normal(self.hidden) / np.sqrt(self.hidden),
            np.zeros(1)
        ]

    def _data(self, batch: Batch) -> Tuple[Array, Array]:
        if batch is None:
            return self.features, self.labels
        return self.features[batch], self.labels[batch]

    def _forward(self, params: Params, x: Array) -> Tuple[Array, Array]:
        hidden = np.tanh(x @ params[0].T + params[1])
        return hidden, hidden @ params[2] + params[3][0]

    def loss(self, params: Params, batch: Batch = None) -> float:
        x, y = self._data(batch)
        _, out = self._forward(params, x)
        return _logistic_loss(y * out)

    def gradient(self, params: Params, batch: Batch = None) -> Params:
        x, y = self._data(batch)
        hidden, out = self._forward(params, x)
        slope = y * _logistic_slope(y * out) / len(y)
        d_hidden = slope[:, None] * params[2][None, :] * (1.0 - hidden ** 2)
        return [d_hidden.T @ x, d_hidden.sum(axis=0), hidden.T @ slope, np.array([np.sum(slope)])]


def gen_quadratic(seed: int, m: int, n: int, cond: float, left_share: float = 0.5,
                  noise_scale: float = 0.0) -> QuadraticProblem:
    return QuadraticProblem(seed, m, n, cond, left_share, noise_scale)


def gen_logistic(seed: int, dim: int, n_samples: int, separation: float,
                 noise_scale: float = 0.0, batch_size: Optional[int] = None) -> LogisticProblem:
    return LogisticProblem(seed, dim, n_samples, separation, noise_scale, batch_size)


def gen_mlp(seed: int, widths: Sequence[int], n_samples: int,
            noise_scale: float = 0.0, batch_size: Optional[int] = None) -> MLPProblem:
    return MLPProblem(seed, widths, n_samples, noise_scale, batch_size)


def create_problem(cfg: ProblemConfig, seed: int) -> Problem:
    """按配置创建问题，cfg.seed 优先于运行种子

    Args:
        cfg: 问题配置
        seed: 运行种子

    Returns:
        Problem 实例
    """
    problem_seed = cfg.seed if cfg.seed is not None else seed
    if cfg.kind == 'quadratic':
        return gen_quadratic(problem_seed, cfg.m, cfg.n, cfg.cond, cfg.left_share, cfg.noise_scale)
    if cfg.kind == 'logistic':
        return gen_logistic(problem_seed, cfg.dim, cfg.n_samples, cfg.separation,
                            cfg.noise_scale, cfg.batch_size)
    return gen_mlp(problem_seed, cfg.widths, cfg.n_samples, cfg.noise_scale, cfg.batch_size)


def finite_difference_error(problem: Problem, params: Params, batch: Batch = None) -> float:
    """解析梯度与中心差分的最大相对误差

    步长 h = 1e-5·max(1, |x|)，逐坐标计算；每个参数张量的相对误差为
    ‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)。

    Returns:
        所有参数张量中的最大相对误差
    """
    analytic = problem.gradient(params, batch)
    worst = 0.0
    for index, param in enumerate(params):
        numeric = np.zeros_like(param)
        flat = param.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            h = FD_STEP * max(1.0, abs(original))
            flat[k] = original + h
            plus = problem.loss(params, batch)
            flat[k] = original - h
            minus = problem.loss(params, batch)
            flat[k] = original
            numeric_flat[k] = (plus - minus) / (2.0 * h)
        scale = max(float(np.linalg.norm(numeric)), float(np.linalg.norm(analytic[index])))
        if scale > 0.0:
            worst = max(worst, float(np.linalg.norm(numeric - analytic[index])) / scale)
    return worst

"""
线性代数模块

稠密对称矩阵基础运算与双精度逆p次根求解器
"""

from .dense_core import (
    Matrix,
    SymEig,
    LoewnerCheck,
    as_matrix,
    symmetrize,
    sym_eig,
    mat_power_oracle,
    kronecker,
    loewner_leq,
    elementwise,
    hadamard,
    elementwise_power,
    frobenius_norm,
    random_orthogonal,
    random_psd
)
from .root_solver import (
    RootDiagnostics,
    power_iteration,
    inverse_pth_root,
    regularized_matrix,
    root_residual,
    condition_number,
    bench_root
)

__all__ = [
    "Matrix",
    "SymEig",
    "LoewnerCheck",
    "as_matrix",
    "symmetrize",
    "sym_eig",
    "mat_power_oracle",
    "kronecker",
    "loewner_leq",
    "elementwise",
    "hadamard",
    "elementwise_power",
    "frobenius_norm",
    "random_orthogonal",
    "random_psd",
    "RootDiagnostics",
    "power_iteration",
    "inverse_pth_root",
    "regularized_matrix",
    "root_residual",
    "condition_number",
    "bench_root"
]

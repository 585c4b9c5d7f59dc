"""
实验问题测试
"""

import numpy as np
import pytest

from ..config.settings import BaselineConfig, ProblemConfig
from ..optimizers.baselines import SGDMomentum
from ..utils.exceptions import ConfigException
from .problems import (
    FD_TOLERANCE,
    LogisticProblem,
    MLPProblem,
    QuadraticProblem,
    create_problem,
    finite_difference_error,
    gen_logistic,
    gen_mlp,
    gen_quadratic,
)


def _random_params(problem, rng):
    return [rng.standard_normal(shape) for shape in problem.shapes]


class TestFiniteDifference:
    """解析梯度的中心差分检验"""

    @pytest.mark.parametrize("left_share", [0.0, 0.5, 1.0])
    def test_quadratic(self, rng, left_share):
        problem = gen_quadratic(3, 4, 3, cond=100.0, left_share=left_share)
        assert finite_difference_error(problem, _random_params(problem, rng)) < FD_TOLERANCE

    def test_logistic(self, rng):
        problem = gen_logistic(5, dim=6, n_samples=40, separation=1.5)
        assert finite_difference_error(problem, _random_params(problem, rng)) < FD_TOLERANCE

    def test_logistic_minibatch(self, rng):
        problem = gen_logistic(5, dim=4, n_samples=60, separation=1.0, batch_size=8)
        batch = problem.sample_batch(rng)
        assert finite_difference_error(problem, _random_params(problem, rng), batch) < FD_TOLERANCE

    def test_mlp(self, rng):
        problem = gen_mlp(7, widths=[4, 5], n_samples=30)
        params = problem.init_params()
        assert finite_difference_error(problem, params) < FD_TOLERANCE
        assert finite_difference_error(problem, _random_params(problem, rng)) < FD_TOLERANCE

    def test_large_coordinates_use_relative_step(self, rng):
        problem = gen_quadratic(1, 2, 2, cond=10.0)
        params = [1e4 * rng.standard_normal((2, 2))]
        assert finite_difference_error(problem, params) < FD_TOLERANCE


class TestQuadraticProblem:
    """二次问题测试"""

    def test_gradient_has_kronecker_form(self, rng):
        problem = QuadraticProblem(11, 5, 4, cond=1e3)
        error = rng.standard_normal((5, 4))
        grad = problem.gradient([problem.target + error])[0]
        np.testing.assert_allclose(grad, problem.left_gram @ error @ problem.right_gram, atol=1e-12)

    def test_loss_nonnegative_and_zero_at_target(self, rng):
        problem = QuadraticProblem(2, 6, 3, cond=1e4)
        for _ in range(5):
            assert problem.loss(_random_params(problem, rng)) >= 0.0
        assert problem.loss([problem.target.copy()]) == 0.0

    def test_unit_condition_single_step(self):
        problem = QuadraticProblem(4, 5, 5, cond=1.0)
        assert problem.left_gram is None and problem.right_gram is None
        params = problem.init_params()
        SGDMomentum(problem.shapes, BaselineConfig(eta=1.0, beta1=0.0)).step(params, problem.gradient(params))
        assert problem.loss(params) == 0.0

    def test_one_sided_condition(self):
        problem = QuadraticProblem(0, 8, 3, cond=1e4, left_share=0.0)
        assert problem.left_gram is None
        eigenvalues = np.linalg.eigvalsh(problem.right_gram)
        assert eigenvalues[-1] / eigenvalues[0] == pytest.approx(1e4, rel=1e-6)

    def test_deterministic(self):
        a, b = QuadraticProblem(9, 4, 4), QuadraticProblem(9, 4, 4)
        np.testing.assert_array_equal(a.target, b.target)
        np.testing.assert_array_equal(a.left_gram, b.left_gram)

    def test_rejects_condition_below_one(self):
        with pytest.raises(ConfigException):
            QuadraticProblem(0, 2, 2, cond=0.5)


class TestDataProblems:
    """逻辑回归与 MLP 测试"""

    def test_logistic_shapes_and_initial_loss(self):
        problem = LogisticProblem(0, dim=8, n_samples=100)
        assert problem.shapes == [(8,), (1,)]
        assert problem.eval_loss(problem.init_params()) == pytest.approx(np.log(2.0))

    def test_extreme_margins_stay_finite(self):
        problem = LogisticProblem(1, dim=3, n_samples=20)
        params = [np.full(3, 1e6), np.array([1e6])]
        assert np.isfinite(problem.eval_loss(params))
        assert all(np.all(np.isfinite(g)) for g in problem.gradient(params))

    def test_mlp_shapes(self):
        problem = MLPProblem(0, widths=[3, 7], n_samples=16)
        assert problem.shapes == [(7, 3), (7,), (7,), (1,)]
        assert [p.shape for p in problem.init_params()] == problem.shapes
        assert set(np.unique(problem.labels)) <= {-1.0, 1.0}

    @pytest.mark.parametrize("widths", [[5], [5, 0], []])
    def test_mlp_rejects_widths(self, widths):
        with pytest.raises(ConfigException):
            MLPProblem(0, widths=widths)

    def test_minibatch_sampling(self, rng):
        problem = LogisticProblem(0, dim=2, n_samples=50, batch_size=8)
        batch = problem.sample_batch(rng)
        assert len(batch) == 8
        assert len(np.unique(batch)) == 8
        assert np.all(np.diff(batch) > 0)
        full = LogisticProblem(0, dim=2, n_samples=50)
        assert full.sample_batch(rng) is None

    def test_gradient_noise(self, rng):
        quiet = gen_logistic(3, 4, 30, 1.0)
        noisy = gen_logistic(3, 4, 30, 1.0, noise_scale=0.1)
        params = quiet.init_params()
        grads, loss = quiet.stochastic_gradient(params, rng)
        np.testing.assert_array_equal(grads[0], quiet.gradient(params)[0])
        assert loss == quiet.eval_loss(params)
        noisy_grads, _ = noisy.stochastic_gradient(params, rng)
        assert np.any(noisy_grads[0] != grads[0])


class TestCreateProblem:
    """问题工厂测试"""

    def test_problem_seed_overrides_run_seed(self):
        problem = create_problem(ProblemConfig(kind='logistic', seed=3, dim=4), seed=99)
        assert problem.seed == 3
        assert create_problem(ProblemConfig(kind='logistic', dim=4), seed=99).seed == 99

    @pytest.mark.parametrize("kind,cls", [('quadratic', QuadraticProblem), ('logistic', LogisticProblem),
                                          ('mlp', MLPProblem)])
    def test_kinds(self, kind, cls):
        assert isinstance(create_problem(ProblemConfig(kind=kind, m=4, n=3, dim=4, n_samples=20), 0), cls)

import numpy as np
import pytest

from sdde_optlab import (
    CustomProblem,
    LinearRegressionProblem,
    full_gradient,
    gradient_covariance,
    minibatch_gradient,
    noise_factor,
    psd_sqrt,
    quadratic_example,
)
from sdde_optlab.problems import ConstantNoiseModel, DimensionError

from helpers import enumerate_covariance


class TestFullGradient:
    def test_quadratic_at_center(self, quadratic):
        assert full_gradient(quadratic, [0.0]) == pytest.approx([0.0], abs=0)

    def test_quadratic_averages_examples(self, quadratic):
        # per-example gradients are x+1 and x-1, so the mean is x
        assert full_gradient(quadratic, [4.0]) == pytest.approx([4.0], abs=1e-15)

    def test_identity_hessian(self, identity_regression):
        got = full_gradient(identity_regression, [1.0, 2.0])
        assert got == pytest.approx([1.0, 2.0], abs=1e-15)

    def test_dimension_mismatch(self, quadratic):
        with pytest.raises(DimensionError):
            full_gradient(quadratic, [1.0, 2.0])

    def test_matches_normal_equations(self, rng):
        problem = LinearRegressionProblem(inputs=rng.normal(size=(20, 3)),
                                          outputs=rng.normal(size=20))
        for _ in range(10):
            x = rng.normal(size=3)
            expected = problem.gram @ x - problem.cross
            assert np.max(np.abs(full_gradient(problem, x) - expected)) <= 1e-12


class TestMinibatchGradient:
    def test_full_batch_without_replacement(self, quadratic, rng):
        got = minibatch_gradient(quadratic, [4.0], 2, rng, with_replacement=False)
        assert got == pytest.approx(full_gradient(quadratic, [4.0]), abs=0)

    def test_single_example_problem_is_exact(self, rng):
        problem = LinearRegressionProblem(inputs=[[2.0]], outputs=[1.0])
        for b in (1, 3, 7):
            got = minibatch_gradient(problem, [1.5], b, rng)
            assert got == pytest.approx(problem.grad_example(0, [1.5]), abs=0)

    def test_two_example_frequencies(self, quadratic, rng):
        draws = np.array([minibatch_gradient(quadratic, [0.0], 1, rng)[0] for _ in range(10_000)])
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs((draws == 1.0).mean() - 0.5) <= 0.02

    def test_zero_batch_rejected(self, quadratic, rng):
        with pytest.raises(ValueError):
            minibatch_gradient(quadratic, [0.0], 0, rng)

    def test_partial_batch_without_replacement_rejected(self, quadratic, rng):
        with pytest.raises(ValueError):
            minibatch_gradient(quadratic, [0.0], 1, rng, with_replacement=False)

    def test_unbiasedness(self, identity_regression, rng):
        x = np.array([0.7, -1.3])
        reps = 10_000
        draws = np.stack([minibatch_gradient(identity_regression, x, 2, rng) for _ in range(reps)])
        target = full_gradient(identity_regression, x)
        se = draws.std(axis=0, ddof=1) / np.sqrt(reps)
        gap = np.linalg.norm(draws.mean(axis=0) - target)
        assert gap <= 4.0 * np.linalg.norm(se)


class TestGradientCovariance:
    def test_quadratic_is_unit_everywhere(self, quadratic):
        for x in ([0.0], [4.0], [-2.5]):
            assert gradient_covariance(quadratic, x) == pytest.approx(np.array([[1.0]]), abs=1e-15)

    def test_single_example_has_no_variance(self):
        problem = LinearRegressionProblem(inputs=[[1.0]], outputs=[3.0])
        assert gradient_covariance(problem, [0.3]) == pytest.approx(np.zeros((1, 1)), abs=0)

    def test_matches_enumeration(self, identity_regression, rng):
        for x in (np.zeros(2), rng.normal(size=2)):
            expected = enumerate_covariance(identity_regression, x)
            assert gradient_covariance(identity_regression, x) == pytest.approx(expected, abs=1e-14)

    def test_empirical_minibatch_covariance(self, identity_regression, rng):
        # covariance of the minibatch estimator must equal Sigma(x)/b entrywise
        x = np.array([0.25, -0.5])
        b, reps = 2, 100_000
        draws = np.stack([minibatch_gradient(identity_regression, x, b, rng) for _ in range(reps)])
        sample = np.cov(draws.T, ddof=1)
        target = gradient_covariance(identity_regression, x) / b
        d = sample.shape[0]
        for i in range(d):
            for j in range(d):
                se = np.sqrt((sample[i, i] * sample[j, j] + sample[i, j] ** 2) / (reps - 1))
                assert abs(sample[i, j] - target[i, j]) <= 5.0 * se


class TestNoiseFactor:
    def test_quadratic_quarter_batch(self, quadratic):
        assert noise_factor(quadratic, [0.0], 4) == pytest.approx(np.array([[0.5]]), abs=1e-15)

    def test_zero_covariance(self):
        problem = LinearRegressionProblem(inputs=[[1.0]], outputs=[0.0])
        assert noise_factor(problem, [1.0], 3) == pytest.approx(np.zeros((1, 1)), abs=0)

    def test_diagonal_square_root(self):
        sigma = psd_sqrt(np.diag([4.0, 9.0]))
        assert sigma == pytest.approx(np.diag([2.0, 3.0]), abs=1e-12)

    def test_reconstruction(self, identity_regression, rng):
        for b in (1, 2, 5):
            x = rng.normal(size=2)
            sigma = noise_factor(identity_regression, x, b)
            target = gradient_covariance(identity_regression, x) / b
            assert np.linalg.norm(sigma @ sigma.T - target) <= 1e-10

    def test_clamps_roundoff_negatives(self):
        wiggle = np.array([[1.0, 0.0], [0.0, -5e-13]])
        sigma = psd_sqrt(wiggle)
        assert sigma[1, 1] == 0.0

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            psd_sqrt(np.diag([1.0, -1e-6]))


class TestProblemInvariants:
    def test_curvature_ordering_enforced(self):
        with pytest.raises(ValueError):
            CustomProblem(1, [lambda x: x], lipschitz=0.5, strong_convexity=1.0)

    def test_declared_optimum_checked(self):
        with pytest.raises(ValueError):
            CustomProblem(1, [lambda x: x + 1.0], lipschitz=1.0, x_opt=[0.0])

    def test_linear_regression_constants(self, rng):
        problem = LinearRegressionProblem(inputs=rng.normal(size=(12, 2)), outputs=rng.normal(size=12))
        eigvals = np.linalg.eigvalsh(problem.gram)
        assert problem.lipschitz == pytest.approx(eigvals[-1])
        assert problem.strong_convexity == pytest.approx(max(eigvals[0], 0.0))
        assert np.linalg.norm(full_gradient(problem, problem.x_opt)) <= 1e-10

    def test_quadratic_detects_constant_spread(self, quadratic):
        assert quadratic.has_constant_gradient_spread
        assert quadratic.noise_model.is_constant

    def test_state_dependent_spread_detected(self, rng):
        problem = LinearRegressionProblem(inputs=[[1.0], [2.0]], outputs=[0.0, 0.0])
        assert not problem.has_constant_gradient_spread
        cov0 = gradient_covariance(problem, [0.0])
        cov1 = gradient_covariance(problem, [1.0])
        assert not np.allclose(cov0, cov1)

    def test_constant_noise_model_factor(self):
        model = ConstantNoiseModel(np.diag([4.0, 9.0]))
        assert model.factor(np.zeros(2), 4) == pytest.approx(np.diag([1.0, 1.5]), abs=1e-12)

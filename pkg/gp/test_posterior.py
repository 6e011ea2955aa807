"""
Tests for the block covariance, its factorization and the log-posterior.
"""
import math

import numpy as np
from django.test import SimpleTestCase
from scipy.linalg import cholesky
from scipy.stats import multivariate_normal

from core.exceptions import ContractViolationError, DomainError, NumericalSingularityError
from gp.covariance import AssembledCovariance, CovarianceFactor, JitterPolicy, assemble, block_index, factorize
from gp.dataset import BoundaryCondition, KnownNoise, ObservationSet, Problem
from gp.kernel import KernelParams, QuantityKind, cross_kernel_matrix
from gp.posterior import (
    LogSpaceTarget,
    ParamVector,
    PriorSpec,
    gaussian_log_likelihood,
    log_likelihood,
    log_posterior,
    log_prior,
    noise_name,
    set_key_from_name,
)


def small_problem():
    deflection = ObservationSet(QuantityKind.DEFLECTION, (0.25, 0.5, 1.0), (0.01, 0.04, 0.12), label='dial')
    moment = ObservationSet(QuantityKind.MOMENT, (0.5,), (-0.1,), noise=KnownNoise(0.01), label='gauge')
    return Problem(
        length=1.0,
        observation_sets=(deflection, moment),
        boundary_conditions=(BoundaryCondition(QuantityKind.DEFLECTION, 0.0),),
    )


PSI = ParamVector(sigma_s=0.1, ell=0.5, ei=2.0, noise_sigmas={'u:dial': 0.02})


class AssembleTests(SimpleTestCase):
    """Tests for assemble and block_index."""

    def test_blocks_follow_set_order(self):
        index = block_index(small_problem())
        self.assertEqual(list(index), ['u:dial', 'm:gauge', 'u:bc@0'])
        self.assertEqual(index['m:gauge'], slice(3, 4))

    def test_matrix_is_symmetric_with_noise_on_the_diagonal(self):
        problem = small_problem()
        cov = assemble(problem, PSI.kernel_params, PSI.ei, PSI.noise_sigmas)
        np.testing.assert_allclose(cov.matrix, cov.matrix.T)
        self.assertAlmostEqual(cov.matrix[0, 0], 0.1 ** 2 + 0.02 ** 2)
        moment_variance = 2.0 ** 2 * 3 * 0.1 ** 2 / 0.5 ** 4
        self.assertAlmostEqual(cov.matrix[3, 3], moment_variance + 0.01 ** 2)
        self.assertAlmostEqual(cov.matrix[4, 4], 0.1 ** 2)

    def test_off_diagonal_block_is_the_cross_kernel(self):
        problem = small_problem()
        cov = assemble(problem, PSI.kernel_params, PSI.ei, PSI.noise_sigmas)
        expected = cross_kernel_matrix(
            PSI.kernel_params, 2.0, None, QuantityKind.DEFLECTION, QuantityKind.MOMENT,
            np.array([0.25, 0.5, 1.0]), np.array([0.5]),
        )
        np.testing.assert_allclose(cov.matrix[0:3, 3:4], expected)

    def test_scales_divide_each_block(self):
        problem = small_problem()
        scales = {'u:dial': 0.12, 'm:gauge': 0.1, 'u:bc@0': 1.0}
        raw = assemble(problem, PSI.kernel_params, PSI.ei, {'u:dial': 0.02 / 0.12})
        scaled = assemble(problem, PSI.kernel_params, PSI.ei, {'u:dial': 0.02 / 0.12}, scales=scales)
        self.assertAlmostEqual(scaled.matrix[0, 3], raw.matrix[0, 3] / (0.12 * 0.1))

    def test_missing_noise_for_learnable_set(self):
        with self.assertRaises(DomainError):
            assemble(small_problem(), PSI.kernel_params, PSI.ei, {})


class FactorizeTests(SimpleTestCase):
    """Tests for factorize and CovarianceFactor."""

    def test_factor_reconstructs_the_jittered_matrix(self):
        cov = assemble(small_problem(), PSI.kernel_params, PSI.ei, PSI.noise_sigmas)
        factor = factorize(cov)
        np.testing.assert_allclose(
            factor.reconstruct(), cov.matrix + np.diag(factor.jitter), rtol=1e-9, atol=1e-12,
        )
        b = 1.0 + np.arange(cov.size, dtype=float)
        np.testing.assert_allclose(cov.matrix @ factor.solve(b), b, rtol=1e-6, atol=1e-8)

    def test_identity_needs_only_the_initial_jitter(self):
        factor = factorize(AssembledCovariance(matrix=np.eye(3), block_index={}))
        self.assertEqual(factor.jitter_used, 1e-10)
        np.testing.assert_allclose(factor.lower, np.eye(3), atol=1e-9)

    def test_rank_one_matrix_is_regularized(self):
        factor = factorize(AssembledCovariance(matrix=np.ones((2, 2)), block_index={}))
        self.assertGreater(factor.jitter_used, 0.0)
        self.assertLessEqual(factor.jitter_used, 1e-4)
        np.testing.assert_allclose(factor.reconstruct(), np.ones((2, 2)) + np.diag(factor.jitter), atol=1e-12)

    def test_coincident_noise_free_points(self):
        params = KernelParams(sigma_s=1.0, ell=0.3)
        x = np.full(3, 0.4)
        matrix = cross_kernel_matrix(params, 1.0, None, QuantityKind.DEFLECTION, QuantityKind.DEFLECTION, x, x)
        factor = factorize(AssembledCovariance(matrix=matrix, block_index={}))
        np.testing.assert_allclose(factor.reconstruct(), matrix, atol=1e-8)

    def test_jitter_follows_each_block_scale(self):
        matrix = np.diag([1.0, 1.0, 1e6, 1e6])
        cov = AssembledCovariance(matrix=matrix, block_index={'u:a': slice(0, 2), 'q:b': slice(2, 4)})
        factor = factorize(cov)
        np.testing.assert_allclose(factor.jitter, 1e-10 * np.diag(matrix))

    def test_raising_a_noise_sigma_only_grows_its_diagonal(self):
        problem = small_problem()
        low = assemble(problem, PSI.kernel_params, PSI.ei, {'u:dial': 0.02})
        high = assemble(problem, PSI.kernel_params, PSI.ei, {'u:dial': 0.05})
        expected = np.zeros_like(low.matrix)
        expected[0:3, 0:3] = (0.05 ** 2 - 0.02 ** 2) * np.eye(3)
        np.testing.assert_allclose(high.matrix - low.matrix, expected, atol=1e-15)

    def test_indefinite_matrix_exhausts_the_jitter(self):
        with self.assertRaises(NumericalSingularityError):
            factorize(AssembledCovariance(matrix=-np.eye(2), block_index={}))

    def test_non_finite_entries(self):
        with self.assertRaises(NumericalSingularityError):
            factorize(AssembledCovariance(matrix=np.array([[1.0, math.nan], [math.nan, 1.0]]), block_index={}))

    def test_jitter_policy_validation(self):
        with self.assertRaises(DomainError):
            JitterPolicy(initial=1e-3, maximum=1e-6)


class LikelihoodTests(SimpleTestCase):
    """Tests for gaussian_log_likelihood against scipy."""

    def factor(self, matrix):
        return CovarianceFactor(lower=cholesky(matrix, lower=True), jitter_used=0.0)

    def test_standard_normal_at_zero(self):
        value = gaussian_log_likelihood(np.zeros(1), self.factor(np.eye(1)))
        self.assertAlmostEqual(value, -0.9189385332, places=9)

    def test_bivariate_standard_normal_at_zero(self):
        value = gaussian_log_likelihood(np.zeros(2), self.factor(np.eye(2)))
        self.assertAlmostEqual(value, -1.8378770664, places=9)

    def test_matches_multivariate_normal(self):
        matrix = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
        y = np.array([0.4, -1.2, 0.3])
        expected = multivariate_normal(mean=np.zeros(3), cov=matrix).logpdf(y)
        self.assertAlmostEqual(gaussian_log_likelihood(y, self.factor(matrix)), expected, places=10)

    def test_matches_dense_inverse_and_determinant(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            n = int(rng.integers(1, 9))
            a = rng.standard_normal((n, n))
            matrix = a @ a.T + 0.5 * np.eye(n)
            y = rng.standard_normal(n)
            _, log_det = np.linalg.slogdet(matrix)
            expected = -0.5 * y @ np.linalg.inv(matrix) @ y - 0.5 * log_det - 0.5 * n * math.log(2 * math.pi)
            with self.subTest(trial=trial, n=n):
                value = gaussian_log_likelihood(y, self.factor(matrix))
                self.assertAlmostEqual(value, expected, delta=1e-9 * max(1.0, abs(expected)))

    def test_problem_likelihood_matches_dense_density(self):
        problem = small_problem()
        cov = assemble(problem, PSI.kernel_params, PSI.ei, PSI.noise_sigmas)
        jitter = factorize(cov).jitter
        expected = multivariate_normal(
            mean=np.zeros(cov.size), cov=cov.matrix + np.diag(jitter),
        ).logpdf(problem.y)
        self.assertAlmostEqual(log_likelihood(problem, PSI), expected, places=6)


class PriorTests(SimpleTestCase):
    """Tests for PriorSpec and log_prior."""

    def test_uniform_prior_density(self):
        prior = PriorSpec(bounds={'ei': (0.2, 4.0)})
        self.assertAlmostEqual(log_prior(PSI, prior), -math.log(3.8))

    def test_outside_the_bounds(self):
        prior = PriorSpec(bounds={'ei': (0.2, 1.0)})
        self.assertEqual(log_prior(PSI, prior), -math.inf)
        self.assertEqual(log_posterior(small_problem(), PSI, prior), -math.inf)
        self.assertEqual(len(prior.describe_violations(PSI)), 1)

    def test_prior_for_problem_scales_with_reference_stiffness(self):
        prior = PriorSpec.for_problem(small_problem(), ei_ref=5.0)
        self.assertEqual(prior.interval('ei'), (0.5, 10.0))
        self.assertEqual(prior.interval(noise_name('u:dial')), (0.0, math.inf))

    def test_bounds_must_be_ordered(self):
        with self.assertRaises(DomainError):
            PriorSpec(bounds={'ei': (2.0, 1.0)})


class ParamVectorTests(SimpleTestCase):

    def test_names_follow_noise_sets(self):
        self.assertEqual(PSI.names, ('sigma_s', 'ell', 'ei', 'noise[u:dial]'))
        self.assertEqual(set_key_from_name('noise[u:dial]'), 'u:dial')
        self.assertIsNone(set_key_from_name('ei'))

    def test_from_array(self):
        psi = ParamVector.from_array(PSI.names, PSI.to_array())
        self.assertEqual(psi, PSI)

    def test_unknown_name(self):
        with self.assertRaises(ContractViolationError):
            ParamVector.from_array(('sigma_s', 'ell', 'ei', 'tau'), [1, 1, 1, 1])

    def test_values_must_be_positive(self):
        with self.assertRaises(DomainError):
            ParamVector(sigma_s=1.0, ell=-1.0, ei=1.0)


class LogSpaceTargetTests(SimpleTestCase):
    """Tests for the sampler target over log-parameters."""

    def test_target_adds_the_log_jacobian(self):
        problem = small_problem()
        prior = PriorSpec.for_problem(problem, ei_ref=2.0)
        target = LogSpaceTarget.for_problem(problem, prior)
        state = target.encode(PSI.to_array())
        expected = log_posterior(problem, PSI, prior) + float(np.sum(np.log(PSI.to_array())))
        self.assertAlmostEqual(target(state), expected, places=8)
        self.assertEqual(target.params(state).names, PSI.names)

    def test_state_outside_the_prior(self):
        problem = small_problem()
        target = LogSpaceTarget.for_problem(problem, PriorSpec.for_problem(problem, ei_ref=2.0))
        state = target.encode(np.array([0.1, 0.5, 100.0, 0.02]))
        self.assertEqual(target(state), -math.inf)

    def test_kernel_params_view(self):
        self.assertEqual(PSI.kernel_params, KernelParams(sigma_s=0.1, ell=0.5))

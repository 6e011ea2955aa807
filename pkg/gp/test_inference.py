"""
Tests for conditional and mixture predictions.
"""
import math
from unittest.mock import patch

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from core.exceptions import ConfigError, ContractViolationError, InferenceError, NumericalSingularityError
from gp.dataset import BoundaryCondition, KnownNoise, LearnableNoise, ObservationSet, Problem
from gp.inference import (
    PredictiveResult,
    draw_indices,
    normalized_rmse,
    predict_conditional,
    predict_mixture,
    score_predictions,
)
from gp.kernel import QuantityKind, cross_kernel
from gp.posterior import BASE_NAMES, ParamVector
from gp.sampler import Chain

X = (0.1, 0.3, 0.5, 0.7, 0.9)


def sine_problem(noise=KnownNoise(1e-4)):
    readings = ObservationSet(
        QuantityKind.DEFLECTION, X, tuple(math.sin(x) for x in X), noise=noise, label='dial',
    )
    return Problem(length=1.0, observation_sets=(readings,))


PSI = ParamVector(sigma_s=1.0, ell=0.3, ei=1.0)


def two_sample_chain():
    return Chain(
        names=BASE_NAMES,
        samples=np.array([[1.0, 0.3, 1.0], [2.0, 0.5, 1.5]]),
        log_posterior_trace=np.array([-1.0, -2.0]),
        acceptance_rate=0.5,
    )


class PredictConditionalTests(SimpleTestCase):
    """Tests for predict_conditional."""

    def test_mean_interpolates_precise_data(self):
        prediction = predict_conditional(sine_problem(), PSI, QuantityKind.DEFLECTION, np.array(X))
        np.testing.assert_allclose(prediction.mean, np.sin(X), atol=1e-3)
        self.assertTrue(np.all(prediction.std < 1e-3))

    def test_far_field_reverts_to_the_prior(self):
        prediction = predict_conditional(sine_problem(), PSI, QuantityKind.DEFLECTION, np.array([10.0]))
        self.assertAlmostEqual(float(prediction.mean[0]), 0.0, places=8)
        self.assertAlmostEqual(float(prediction.std[0]), 1.0, places=6)

    def test_covariance_is_symmetric(self):
        grid = np.linspace(0.0, 1.0, 7)
        prediction = predict_conditional(sine_problem(), PSI, QuantityKind.ROTATION, grid)
        np.testing.assert_allclose(prediction.covariance, prediction.covariance.T, atol=1e-12)

    def test_rotation_mean_is_the_slope_of_the_deflection_mean(self):
        h = 1e-4
        rotation = predict_conditional(sine_problem(), PSI, QuantityKind.ROTATION, np.array([0.5]))
        deflection = predict_conditional(sine_problem(), PSI, QuantityKind.DEFLECTION, np.array([0.5 - h, 0.5 + h]))
        slope = (deflection.mean[1] - deflection.mean[0]) / (2 * h)
        self.assertAlmostEqual(float(rotation.mean[0]), float(slope), places=5)

    def test_strain_needs_fiber_distance(self):
        with self.assertRaises(ConfigError):
            predict_conditional(sine_problem(), PSI, QuantityKind.STRAIN, np.array([0.5]))

    def test_noise_set_adds_its_variance(self):
        problem = sine_problem(noise=LearnableNoise())
        psi = ParamVector(sigma_s=1.0, ell=0.3, ei=1.0, noise_sigmas={'u:dial': 0.2})
        latent = predict_conditional(problem, psi, QuantityKind.DEFLECTION, np.array([0.4]))
        measured = predict_conditional(problem, psi, QuantityKind.DEFLECTION, np.array([0.4]), noise_set='u:dial')
        self.assertAlmostEqual(float(measured.variance[0]), float(latent.variance[0]) + 0.04)
        np.testing.assert_allclose(measured.mean, latent.mean)

    def test_normalized_fit_predicts_in_raw_units(self):
        problem = sine_problem(noise=LearnableNoise())
        psi = ParamVector(sigma_s=1.0, ell=0.3, ei=1.0, noise_sigmas={'u:dial': 0.01})
        raw = predict_conditional(problem, psi, QuantityKind.DEFLECTION, np.array([0.4]))
        scale = problem.set_by_key('u:dial').value_scale()
        scaled_psi = ParamVector(sigma_s=1.0, ell=0.3, ei=1.0, noise_sigmas={'u:dial': 0.01 / scale})
        scaled = predict_conditional(
            problem, scaled_psi, QuantityKind.DEFLECTION, np.array([0.4]), scales={'u:dial': scale},
        )
        self.assertAlmostEqual(float(scaled.mean[0]), float(raw.mean[0]), places=8)


def load_only_problem():
    """Cantilever with q = 1 prescribed at 9 points and no sensors."""
    load = ObservationSet(
        QuantityKind.LOAD, tuple(np.linspace(0.0, 1.0, 9)), (1.0,) * 9,
        noise=KnownNoise(0.0), label='prescribed', virtual=True,
    )
    return Problem(
        length=1.0,
        observation_sets=(load,),
        boundary_conditions=(
            BoundaryCondition(QuantityKind.DEFLECTION, 0.0),
            BoundaryCondition(QuantityKind.ROTATION, 0.0),
            BoundaryCondition(QuantityKind.MOMENT, 1.0),
            BoundaryCondition(QuantityKind.SHEAR, 1.0),
        ),
    )


class LoadOnlyInferenceTests(SimpleTestCase):
    """Tests that a prescribed load and the supports alone determine the deflection."""

    psi = ParamVector(sigma_s=0.1, ell=1.0, ei=1.0)

    def test_deflection_matches_the_cantilever_solution(self):
        grid = np.linspace(0.0, 1.0, 50)
        prediction = predict_conditional(load_only_problem(), self.psi, QuantityKind.DEFLECTION, grid)
        exact = grid ** 2 * (6.0 - 4.0 * grid + grid ** 2) / 24.0
        self.assertLessEqual(normalized_rmse(prediction.mean, exact), 1e-3)

    def test_supports_pin_their_fields(self):
        # peak |field| of the q = 1 cantilever: qL^4/8, qL^3/6, qL^2/2, qL
        pinned = [
            (QuantityKind.DEFLECTION, 0.0, 0.125),
            (QuantityKind.ROTATION, 0.0, 1.0 / 6.0),
            (QuantityKind.MOMENT, 1.0, 0.5),
            (QuantityKind.SHEAR, 1.0, 1.0),
        ]
        for kind, x, peak in pinned:
            with self.subTest(kind=kind.tag):
                prediction = predict_conditional(load_only_problem(), self.psi, kind, np.array([x]))
                prior_std = math.sqrt(cross_kernel(self.psi.kernel_params, 1.0, None, kind, kind, x, x))
                self.assertLessEqual(float(prediction.std[0]), 1e-2 * prior_std)
                self.assertLessEqual(abs(float(prediction.mean[0])), 1e-3 * peak)


class PredictMixtureTests(SimpleTestCase):
    """Tests for predict_mixture."""

    def test_single_sample_equals_the_conditional(self):
        chain = Chain(names=BASE_NAMES, samples=np.array([[1.0, 0.3, 1.0]]),
                      log_posterior_trace=np.zeros(1), acceptance_rate=0.0)
        grid = np.linspace(0.0, 1.0, 5)
        mixture = predict_mixture(sine_problem(), chain, QuantityKind.DEFLECTION, grid, n_draws=10)
        conditional = predict_conditional(sine_problem(), PSI, QuantityKind.DEFLECTION, grid)
        np.testing.assert_allclose(mixture.mean, conditional.mean)
        np.testing.assert_allclose(mixture.std, conditional.std, atol=1e-12)

    def test_two_components_follow_the_total_variance_identity(self):
        problem = sine_problem()
        chain = two_sample_chain()
        grid = np.array([0.2, 0.6, 1.0])
        mixture = predict_mixture(problem, chain, QuantityKind.MOMENT, grid, n_draws=2, keep_components=True)
        a = predict_conditional(problem, chain.param_vector(0), QuantityKind.MOMENT, grid)
        b = predict_conditional(problem, chain.param_vector(1), QuantityKind.MOMENT, grid)
        expected = (a.variance + b.variance) / 2 + (a.mean - b.mean) ** 2 / 4
        np.testing.assert_allclose(mixture.std ** 2, expected, rtol=1e-8, atol=1e-14)
        np.testing.assert_allclose(mixture.mean, (a.mean + b.mean) / 2)
        self.assertEqual(mixture.per_sample_means.shape, (2, 3))

    def test_threads_do_not_change_the_result(self):
        grid = np.linspace(0.0, 1.0, 4)
        serial = predict_mixture(sine_problem(), two_sample_chain(), QuantityKind.SHEAR, grid, threads=1)
        pooled = predict_mixture(sine_problem(), two_sample_chain(), QuantityKind.SHEAR, grid, threads=2)
        np.testing.assert_array_equal(serial.mean, pooled.mean)
        np.testing.assert_array_equal(serial.std, pooled.std)

    def test_all_components_failing_is_an_error(self):
        grid = np.array([0.5])
        with patch('gp.inference.predict_conditional', side_effect=NumericalSingularityError('singular')):
            with self.assertRaises(InferenceError):
                predict_mixture(sine_problem(), two_sample_chain(), QuantityKind.DEFLECTION, grid)

    def test_one_failed_component_is_counted(self):
        original = predict_conditional
        grid = np.array([0.5])

        def flaky(problem, psi, *args):
            if psi.sigma_s == 2.0:
                raise NumericalSingularityError('singular')
            return original(problem, psi, *args)

        with patch('gp.inference.predict_conditional', side_effect=flaky):
            result = predict_mixture(sine_problem(), two_sample_chain(), QuantityKind.DEFLECTION, grid)
        self.assertEqual(result.n_failed, 1)
        expected = original(sine_problem(), PSI, QuantityKind.DEFLECTION, grid)
        np.testing.assert_allclose(result.mean, expected.mean)


class DrawIndicesTests(SimpleTestCase):

    def test_equally_spaced(self):
        self.assertEqual(draw_indices(10, 3).tolist(), [0, 4, 9])

    def test_more_draws_than_samples_uses_all(self):
        self.assertEqual(draw_indices(5, 50).tolist(), [0, 1, 2, 3, 4])

    def test_empty_chain(self):
        with self.assertRaises(ContractViolationError):
            draw_indices(0, 5)


class ScoringTests(SimpleTestCase):
    """Tests for normalized_rmse and score_predictions."""

    def test_normalized_rmse(self):
        self.assertAlmostEqual(normalized_rmse([1.0, 2.0], [1.0, 4.0]), math.sqrt(2) / 4)

    def test_zero_truth_gives_plain_rmse(self):
        self.assertAlmostEqual(normalized_rmse([3.0, 4.0], [0.0, 0.0]), math.sqrt(12.5))

    def test_truth_is_interpolated_onto_the_grid(self):
        result = PredictiveResult(
            kind=QuantityKind.DEFLECTION,
            locations=np.array([0.25, 0.75]),
            mean=np.array([0.25, 0.75]),
            std=np.zeros(2),
        )
        truth = pd.DataFrame({'kind': ['u', 'u', 'm'], 'x': [0.0, 1.0, 0.0], 'value': [0.0, 1.0, 5.0]})
        scores = score_predictions([result], truth)
        self.assertEqual(scores['kind'].tolist(), ['u'])
        self.assertAlmostEqual(float(scores['normalized_rmse'][0]), 0.0)

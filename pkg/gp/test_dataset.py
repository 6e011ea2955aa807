"""
Tests for dataset CSV parsing, the sidecar config and Problem validation.

Tests cover:
- Grouping rows into observation sets by kind and label
- Parse errors with 1-based line numbers
- Sidecar discovery and key=value parsing
- Validation of locations, fiber distance and noise
- Boundary conditions as noise-free single-point sets
"""
import math
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from core.exceptions import ConfigError, DomainError, ParseError
from gp.dataset import (
    BoundaryCondition,
    KnownNoise,
    LearnableNoise,
    ObservationSet,
    Problem,
    ProblemConfig,
    bc_to_observation,
    load_problem,
    load_problem_csv,
    parse_key_values,
    write_problem_csv,
)
from gp.kernel import QuantityKind

CONFIG = ProblemConfig(length=1.0)

DATASET = """kind,label,x,value,sigma
u,dial,0.5,0.044,
u,dial,1.0,0.125,
r,gauge,1.0,0.166,0.01
q,prescribed,0.5,1.0,0
"""


class DatasetTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.directory = Path(self.tmp.name)

    def write(self, text, name='data.csv'):
        path = self.directory / name
        path.write_text(text)
        return path


class LoadProblemCsvTests(DatasetTestCase):
    """Tests for load_problem_csv."""

    def test_rows_are_grouped_by_kind_and_label(self):
        problem = load_problem_csv(self.write(DATASET), CONFIG)
        keys = [obs.key for obs in problem.observation_sets]
        self.assertEqual(keys, ['u:dial', 'r:gauge', 'q:prescribed'])
        dial = problem.set_by_key('u:dial')
        self.assertEqual(dial.locations, (0.5, 1.0))
        self.assertEqual(dial.values, (0.044, 0.125))

    def test_empty_sigma_is_learnable_and_zero_is_virtual(self):
        problem = load_problem_csv(self.write(DATASET), CONFIG)
        self.assertIsInstance(problem.set_by_key('u:dial').noise, LearnableNoise)
        self.assertEqual(problem.set_by_key('r:gauge').noise, KnownNoise(0.01))
        self.assertTrue(problem.set_by_key('q:prescribed').virtual)
        self.assertEqual([obs.key for obs in problem.learnable_sets], ['u:dial'])

    def test_sigma_column_is_optional(self):
        problem = load_problem_csv(self.write("kind,label,x,value\nu,a,0.5,1.0\n"), CONFIG)
        self.assertTrue(problem.set_by_key('u:a').is_learnable)

    def test_non_numeric_value_reports_its_line(self):
        text = "kind,label,x,value\nu,a,0.5,1.0\nu,a,0.6,abc\n"
        with self.assertRaises(ParseError) as ctx:
            load_problem_csv(self.write(text), CONFIG)
        self.assertEqual(ctx.exception.line, 3)

    def test_missing_header_column(self):
        with self.assertRaises(ParseError) as ctx:
            load_problem_csv(self.write("kind,x,value\nu,0.5,1.0\n"), CONFIG)
        self.assertEqual(ctx.exception.line, 1)

    def test_unknown_kind(self):
        with self.assertRaises(ParseError):
            load_problem_csv(self.write("kind,label,x,value\nw,a,0.5,1.0\n"), CONFIG)

    def test_empty_file(self):
        with self.assertRaises(ParseError):
            load_problem_csv(self.write(""), CONFIG)

    def test_position_off_the_beam(self):
        with self.assertRaises(DomainError):
            load_problem_csv(self.write("kind,label,x,value\nu,a,1.5,1.0\n"), CONFIG)

    def test_negative_sigma(self):
        with self.assertRaises(ParseError):
            load_problem_csv(self.write("kind,label,x,value,sigma\nu,a,0.5,1.0,-1\n"), CONFIG)

    def test_set_with_mixed_sigmas(self):
        text = "kind,label,x,value,sigma\nu,a,0.5,1.0,0.1\nu,a,0.6,1.0,\n"
        with self.assertRaises(ParseError) as ctx:
            load_problem_csv(self.write(text), CONFIG)
        self.assertEqual(ctx.exception.line, 3)

    def test_written_dataset_reads_back(self):
        problem = load_problem_csv(self.write(DATASET), ProblemConfig(length=1.0, ei_ref=2.0))
        path = write_problem_csv(problem, self.directory / 'copy.csv')
        again = load_problem(path)
        self.assertEqual(again.observation_sets, problem.observation_sets)
        self.assertEqual(again.ei_ref, 2.0)


class ProblemConfigTests(DatasetTestCase):
    """Tests for the sidecar config."""

    def test_key_values_with_boundary_conditions(self):
        data = parse_key_values("# cantilever\nlength=2\nei_ref=3.5\nbc.u.0=0\nbc.m.2=0\n")
        config = ProblemConfig.from_dict(data)
        self.assertEqual(config.length, 2.0)
        self.assertEqual(config.ei_ref, 3.5)
        self.assertEqual(config.boundary_conditions, (
            BoundaryCondition(QuantityKind.DEFLECTION, 0.0),
            BoundaryCondition(QuantityKind.MOMENT, 2.0),
        ))

    def test_unknown_key_reports_its_line(self):
        with self.assertRaises(ParseError) as ctx:
            parse_key_values("length=1\nwidth=2\n")
        self.assertEqual(ctx.exception.line, 2)

    def test_missing_length(self):
        with self.assertRaises(ConfigError):
            ProblemConfig.from_dict({'ei_ref': 1.0})

    def test_boundary_condition_off_the_beam(self):
        with self.assertRaises(DomainError):
            ProblemConfig.from_dict({'length': 1.0, 'boundary_conditions': [{'kind': 'u', 'x': 2.0}]})

    def test_sidecar_is_found_next_to_the_csv(self):
        path = self.write("kind,label,x,value\nu,a,0.5,1.0\n")
        self.write("length=1\nbc.u.0=0\nbc.r.0=0\n", name='data.cfg')
        problem = load_problem(path)
        self.assertEqual(len(problem.boundary_conditions), 2)
        self.assertEqual([obs.key for obs in problem.all_sets], ['u:a', 'u:bc@0', 'r:bc@0'])

    def test_json_sidecar(self):
        path = self.write("kind,label,x,value\nu,a,0.5,1.0\n")
        self.write('{"length": 1.0, "fiber_distance": 0.05}', name='data.json')
        self.assertEqual(load_problem(path).fiber_distance, 0.05)

    def test_missing_config(self):
        path = self.write("kind,label,x,value\nu,a,0.5,1.0\n")
        with self.assertRaises(ConfigError):
            load_problem(path)


class ProblemValidationTests(SimpleTestCase):

    def test_strain_requires_fiber_distance(self):
        strain = ObservationSet(QuantityKind.STRAIN, (0.5,), (1e-4,), label='s')
        with self.assertRaises(ConfigError):
            Problem(length=1.0, observation_sets=(strain,))
        problem = Problem(length=1.0, observation_sets=(strain,), fiber_distance=0.1)
        self.assertEqual(problem.fiber_distance, 0.1)

    def test_zero_noise_is_reserved_for_virtual_sets(self):
        with self.assertRaises(DomainError):
            ObservationSet(QuantityKind.DEFLECTION, (0.5,), (1.0,), noise=KnownNoise(0.0), label='a')

    def test_duplicate_set_keys(self):
        a = ObservationSet(QuantityKind.DEFLECTION, (0.5,), (1.0,), label='a')
        with self.assertRaises(DomainError):
            Problem(length=1.0, observation_sets=(a, a))

    def test_length_must_be_positive(self):
        a = ObservationSet(QuantityKind.DEFLECTION, (0.0,), (1.0,), label='a')
        with self.assertRaises(DomainError):
            Problem(length=-1.0, observation_sets=(a,))

    def test_boundary_conditions_follow_observations(self):
        a = ObservationSet(QuantityKind.DEFLECTION, (0.5, 1.0), (1.0, 2.0), label='a')
        problem = Problem(
            length=1.0,
            observation_sets=(a,),
            boundary_conditions=(BoundaryCondition(QuantityKind.SHEAR, 1.0),),
        )
        self.assertEqual(problem.n_observations, 3)
        self.assertEqual(problem.y.tolist(), [1.0, 2.0, 0.0])
        self.assertFalse(problem.set_by_key('v:bc@1').is_learnable)

    def test_value_scale(self):
        a = ObservationSet(QuantityKind.DEFLECTION, (0.5, 1.0), (-3.0, 2.0), label='a')
        zeros = ObservationSet(QuantityKind.DEFLECTION, (0.5,), (0.0,), label='z')
        self.assertEqual(a.value_scale(), 3.0)
        self.assertEqual(zeros.value_scale(), 1.0)
        self.assertTrue(math.isinf(LearnableNoise().upper))


class BcToObservationTests(SimpleTestCase):
    """Tests for bc_to_observation."""

    def test_clamped_rotation(self):
        obs = bc_to_observation(BoundaryCondition(QuantityKind.ROTATION, 0.0), length=1.0)
        self.assertEqual(obs.kind, QuantityKind.ROTATION)
        self.assertEqual(obs.locations, (0.0,))
        self.assertEqual(obs.values, (0.0,))
        self.assertEqual(obs.noise, KnownNoise(0.0))
        self.assertTrue(obs.virtual)
        self.assertEqual(obs.key, 'r:bc@0')

    def test_free_end_moment_keeps_its_value(self):
        obs = bc_to_observation(BoundaryCondition(QuantityKind.MOMENT, 2.0, value=0.5), length=2.0)
        self.assertEqual(obs.locations, (2.0,))
        self.assertEqual(obs.values, (0.5,))

    def test_location_off_the_beam(self):
        with self.assertRaises(DomainError):
            bc_to_observation(BoundaryCondition(QuantityKind.DEFLECTION, 1.5), length=1.0)

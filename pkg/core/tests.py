"""
Tests for the shared core: exit codes, seeding and run manifests.

Tests cover:
- Error to exit code mapping
- Seed derivation stability
- Run config validation and precedence
- Manifest writing and reuse as a config document
"""
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings

from core.commands import comma_list
from core.exceptions import (
    ConfigError,
    ConsistencyError,
    DomainError,
    ExitCode,
    NumericalSingularityError,
    ParseError,
    exit_code_for,
)
from core.manifest import (
    RunConfig,
    json_default,
    load_config_document,
    resolve_config,
    write_manifest,
)
from core.seeding import derive_seed, make_rng


class ExitCodeTests(SimpleTestCase):
    """Tests for exit_code_for."""

    def test_project_errors_carry_their_code(self):
        self.assertEqual(exit_code_for(ParseError('bad row')), ExitCode.PARSE)
        self.assertEqual(exit_code_for(DomainError('off the beam')), ExitCode.PARSE)
        self.assertEqual(exit_code_for(ConfigError('missing')), ExitCode.CONFIG)
        self.assertEqual(exit_code_for(NumericalSingularityError('singular')), ExitCode.NUMERICAL)

    def test_consistency_error_is_a_config_error(self):
        self.assertEqual(exit_code_for(ConsistencyError('labels differ')), ExitCode.CONFIG)

    def test_os_errors_map_to_io(self):
        self.assertEqual(exit_code_for(FileNotFoundError('gone')), ExitCode.IO)

    def test_other_errors_are_generic_failures(self):
        self.assertEqual(exit_code_for(ValueError('x')), ExitCode.FAILURE)

    def test_parse_error_message_names_the_line(self):
        error = ParseError('not a number', line=3)
        self.assertEqual(error.line, 3)
        self.assertEqual(str(error), 'line 3: not a number')

    def test_project_errors_refine_builtins(self):
        self.assertIsInstance(DomainError('x'), ValueError)
        self.assertIsInstance(NumericalSingularityError('x'), ArithmeticError)


class SeedingTests(SimpleTestCase):

    def test_derived_seed_is_stable(self):
        self.assertEqual(derive_seed(7, 1, 2), derive_seed(7, 1, 2))

    def test_keys_and_seeds_give_different_streams(self):
        seeds = {derive_seed(7, 1, 2), derive_seed(7, 2, 1), derive_seed(8, 1, 2), derive_seed(7, 1)}
        self.assertEqual(len(seeds), 4)

    def test_make_rng_is_reproducible(self):
        a = make_rng(3, (0, 1)).standard_normal(5)
        b = make_rng(3, (0, 1)).standard_normal(5)
        np.testing.assert_array_equal(a, b)


class RunConfigTests(SimpleTestCase):
    """Tests for RunConfig validation and resolve_config precedence."""

    option_types = {'steps': (int,), 'scale': (int, float), 'flag': (bool,)}

    def test_valid_dict_has_no_errors(self):
        data = {'command': 'fit', 'seed': 1, 'out_dir': 'runs', 'options': {'steps': 10, 'scale': 0.5}}
        self.assertEqual(RunConfig.validate_dict(data, self.option_types), [])

    def test_validate_dict_collects_every_error(self):
        data = {'command': 'fit', 'seed': -1, 'threads': 0, 'options': {'steps': 'ten', 'other': 1}}
        errors = RunConfig.validate_dict(data, self.option_types)
        self.assertIn("missing 'out_dir'", errors)
        self.assertTrue(any('seed' in e for e in errors))
        self.assertTrue(any('threads' in e for e in errors))
        self.assertTrue(any('options.steps' in e for e in errors))
        self.assertTrue(any("unknown option 'other'" in e for e in errors))

    def test_boolean_is_not_accepted_as_integer(self):
        data = {'command': 'fit', 'seed': True, 'out_dir': 'runs', 'options': {'steps': False}}
        errors = RunConfig.validate_dict(data, self.option_types)
        self.assertEqual(len(errors), 2)

    def test_from_dict_raises_config_error(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'command': 'fit'}, self.option_types)

    @override_settings(DEFAULT_SEED=11, WORKER_THREADS=3, OUTPUT_DIR='/tmp/default-runs')
    def test_defaults_document_then_flags(self):
        config = resolve_config(
            'fit',
            defaults={'steps': 100, 'scale': 0.1, 'flag': False},
            option_types=self.option_types,
            document={'command': 'fit', 'seed': 5, 'options': {'steps': 200, 'scale': 0.2}},
            overrides={'scale': 0.3, 'flag': None},
        )
        self.assertEqual(config.options, {'steps': 200, 'scale': 0.3, 'flag': False})
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.threads, 3)
        self.assertEqual(config.out_dir, '/tmp/default-runs')

    @override_settings(DEFAULT_SEED=11)
    def test_command_line_seed_wins(self):
        config = resolve_config('fit', {}, self.option_types, document={'seed': 5}, seed=9)
        self.assertEqual(config.seed, 9)

    def test_document_for_another_command_is_rejected(self):
        with self.assertRaises(ConfigError):
            resolve_config('fit', {}, self.option_types, document={'command': 'synth'})


class ManifestTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.directory = Path(self.tmp.name)

    def test_manifest_records_config_outputs_and_versions(self):
        config = RunConfig(command='synth', seed=4, out_dir=str(self.directory), options={'snr': 10.0})
        outputs = [self.directory / 'truth.csv', self.directory / 'dataset.csv']
        path = write_manifest(config, outputs, {'rows': np.int64(20)})

        manifest = json.loads(path.read_text())
        self.assertEqual(manifest['command'], 'synth')
        self.assertEqual(manifest['config'], config.to_dict())
        self.assertEqual(manifest['outputs'], ['dataset.csv', 'truth.csv'])
        self.assertEqual(manifest['summary'], {'rows': 20})
        self.assertIn('numpy', manifest['versions'])
        self.assertIn('created_at', manifest)

    def test_manifest_can_be_passed_back_as_config(self):
        config = RunConfig(command='fit', seed=4, out_dir=str(self.directory), threads=2, options={'chains': 2})
        path = write_manifest(config, [])
        self.assertEqual(load_config_document(path), config.to_dict())

    def test_invalid_json_is_a_parse_error(self):
        path = self.directory / 'run.json'
        path.write_text('{"seed": 1,\n')
        with self.assertRaises(ParseError):
            load_config_document(path)

    def test_json_default_unwraps_numpy(self):
        self.assertEqual(json_default(np.float64(0.5)), 0.5)
        self.assertEqual(json_default(np.arange(3)), [0, 1, 2])
        self.assertEqual(json_default(Path('a')), 'a')


class CommaListTests(SimpleTestCase):

    def test_parses_and_casts(self):
        self.assertEqual(comma_list(float)('inf, 10,5'), [float('inf'), 10.0, 5.0])
        self.assertEqual(comma_list(int)('1,,2'), [1, 2])

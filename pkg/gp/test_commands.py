"""
Tests for the fit and predict management commands.

Tests cover:
- The synth -> fit -> predict pipeline and its output files
- Reproducing a fit from its manifest
- Exit codes for missing inputs, mismatched chains and bad datasets
"""
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from core.exceptions import ExitCode
from gp.posterior import BASE_NAMES
from gp.sampler import Chain, write_chain_csv

SHORT_CHAIN = {'MH_N_STEPS': 400, 'MH_BURN_IN': 100, 'MH_THIN': 2, 'INFERENCE_N_DRAWS': 10}


@override_settings(**SHORT_CHAIN)
class FitPredictCommandTests(SimpleTestCase):
    """Tests for `manage.py fit` and `manage.py predict` on a synthesized dataset."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        call_command('synth', out_dir=str(cls.root / 'data'), seed=3, snr=100.0, stdout=StringIO())
        cls.dataset = str(cls.root / 'data' / 'dataset.csv')
        cls.truth = str(cls.root / 'data' / 'truth.csv')
        call_command('fit', cls.dataset, out_dir=str(cls.root / 'fit'), seed=4, stdout=StringIO())
        cls.chain = str(cls.root / 'fit' / 'chain.csv')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def run_command(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()

    def out_dir(self, name):
        return str(self.root / name)

    def test_fit_writes_chain_and_summary(self):
        fit_dir = self.root / 'fit'
        summary = json.loads((fit_dir / 'summary.json').read_text())
        self.assertEqual(summary['n_samples'], 150)
        self.assertTrue(0.0 <= summary['acceptance_rate'] <= 1.0)
        self.assertEqual(set(summary['map']), {'sigma_s', 'ell', 'ei', 'noise[u:sensors]'})
        self.assertEqual(summary['stiffness']['ei_ref'], 1.0)
        self.assertEqual(summary['sampler']['mh']['n_steps'], 400)
        self.assertEqual(summary['sampler']['mh']['seed'], 4)

        chain = pd.read_csv(fit_dir / 'chain.csv')
        self.assertEqual(len(chain), 150)
        manifest = json.loads((fit_dir / 'manifest.json').read_text())
        self.assertEqual(
            manifest['outputs'],
            ['chain.csv', 'correlation.csv', 'noise_report.csv', 'summary.json', 'summary.txt'],
        )
        self.assertEqual(manifest['config']['options']['mh_steps'], 400)

    def test_fit_manifest_reproduces_the_chain(self):
        manifest = str(self.root / 'fit' / 'manifest.json')
        self.run_command('fit', config=manifest, out_dir=self.out_dir('refit'))
        original = (self.root / 'fit' / 'chain.csv').read_text()
        self.assertEqual((self.root / 'refit' / 'chain.csv').read_text(), original)

    def test_fit_without_dataset(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', out_dir=self.out_dir('empty'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)

    def test_fit_rejects_positions_off_the_beam(self):
        data_dir = self.root / 'bad'
        data_dir.mkdir(exist_ok=True)
        (data_dir / 'bad.csv').write_text("kind,label,x,value\nu,a,0.5,0.04\nu,a,1.5,0.1\n")
        (data_dir / 'bad.cfg').write_text("length=1\nei_ref=1\n")
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', str(data_dir / 'bad.csv'), out_dir=self.out_dir('bad_fit'))
        self.assertEqual(ctx.exception.returncode, ExitCode.PARSE)

    def test_fit_strain_data_without_fiber_distance(self):
        data_dir = self.root / 'strain'
        data_dir.mkdir(exist_ok=True)
        (data_dir / 'strain.csv').write_text("kind,label,x,value\neps,gauge,0.5,0.001\neps,gauge,1.0,0.0\n")
        (data_dir / 'strain.cfg').write_text("length=1\nei_ref=1\n")
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', str(data_dir / 'strain.csv'), out_dir=self.out_dir('strain_fit'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)
        self.assertIn('fiber distance', str(ctx.exception))

    def test_predict_deflection_grid(self):
        output = self.run_command('predict', self.dataset, chain=self.chain, out_dir=self.out_dir('pred'))
        prediction = pd.read_csv(self.root / 'pred' / 'prediction_u.csv')
        self.assertEqual(list(prediction.columns), ['kind', 'x', 'mean', 'std'])
        self.assertEqual(len(prediction), 50)
        self.assertEqual(prediction['x'].iloc[-1], 1.0)
        self.assertTrue(np.all(prediction['std'] >= 0))
        self.assertIn('manifest', output)

    def test_predict_scores_against_the_truth(self):
        self.run_command('predict', self.dataset, chain=self.chain, kinds=['u', 'm'], truth=self.truth,
                         grid_points=21, out_dir=self.out_dir('scored'))
        scores = pd.read_csv(self.root / 'scored' / 'prediction_scores.csv')
        self.assertEqual(scores['kind'].tolist(), ['u', 'm'])
        manifest = json.loads((self.root / 'scored' / 'manifest.json').read_text())
        self.assertEqual(set(manifest['summary']['normalized_rmse']), {'u', 'm'})
        self.assertEqual(manifest['summary']['grid_points'], 21)

    def test_predict_strain_without_fiber_distance(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, chain=self.chain, kinds=['eps'], out_dir=self.out_dir('eps'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)

    def test_predict_unknown_kind(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, chain=self.chain, kinds=['w'], out_dir=self.out_dir('w'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)

    def test_predict_with_a_chain_for_other_data(self):
        other = Chain(
            names=BASE_NAMES,
            samples=np.array([[0.1, 0.5, 1.0], [0.1, 0.5, 1.1]]),
            log_posterior_trace=np.zeros(2),
            acceptance_rate=0.5,
        )
        chain_csv = write_chain_csv(other, self.root / 'other_chain.csv')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, chain=str(chain_csv), out_dir=self.out_dir('other'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)
        self.assertIn('noise[u:sensors]', str(ctx.exception))

    def test_predict_with_a_malformed_chain(self):
        chain_csv = self.root / 'malformed_chain.csv'
        chain_csv.write_text("sigma_s,log_posterior\n0.1,2.0\n0.1,2.0,3.0,4.0\n")
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, chain=str(chain_csv), out_dir=self.out_dir('malformed'))
        self.assertEqual(ctx.exception.returncode, ExitCode.PARSE)

    def test_predict_unknown_noise_set(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, chain=self.chain, noise_set='u:gauge',
                             out_dir=self.out_dir('noise'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)

    def test_predict_requires_a_chain(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', self.dataset, out_dir=self.out_dir('nochain'))
        self.assertEqual(ctx.exception.returncode, ExitCode.CONFIG)

"""
Predict latent beam fields from a dataset and a fitted chain.

Usage:
    python manage.py predict <dataset.csv> --chain chain.csv [--kinds u,r,m,v] [options]

Examples:
    # Deflection on a 50-point grid
    python manage.py predict runs/benchmark/dataset.csv --chain runs/benchmark/chain.csv

    # All latent fields, scored against the synthesized truth
    python manage.py predict runs/benchmark/dataset.csv --chain runs/benchmark/chain.csv \\
        --kinds r,eps,m,v --truth runs/benchmark/truth.csv

Writes prediction_<kind>.csv per kind (kind,x,mean,std), prediction_scores.csv
when a truth table is given, and manifest.json.
"""
from pathlib import Path

import numpy as np

from beams.oracle import read_truth_csv
from core.commands import ConfiguredCommand, comma_list
from core.exceptions import ConfigError, ConsistencyError
from core.manifest import NUMBER, RunConfig
from gp.covariance import JitterPolicy
from gp.dataset import Problem, load_problem
from gp.inference import predict_mixture, score_predictions, write_prediction_csv
from gp.kernel import QuantityKind
from gp.posterior import BASE_NAMES, noise_name
from gp.sampler import Chain, read_chain_csv


def check_consistency(problem: Problem, chain: Chain) -> None:
    """The chain must sample exactly the parameters of the problem's learnable sets."""
    expected = BASE_NAMES + tuple(noise_name(obs.key) for obs in problem.learnable_sets)
    if tuple(chain.names) != expected:
        missing = sorted(set(expected) - set(chain.names))
        extra = sorted(set(chain.names) - set(expected))
        raise ConsistencyError(
            f"chain parameters do not match the dataset: missing {missing}, unexpected {extra}"
        )


class Command(ConfiguredCommand):
    help = 'Predict beam fields (mean and std) over a grid from a fitted chain'
    command_name = 'predict'
    option_types = {
        'dataset': (str,),
        'problem_config': (str,),
        'chain': (str,),
        'kinds': (list,),
        'grid_points': (int,),
        'grid_start': NUMBER,
        'grid_stop': NUMBER,
        'n_draws': (int,),
        'truth': (str,),
        'noise_set': (str,),
    }

    def add_command_arguments(self, parser):
        parser.add_argument('dataset', nargs='?', type=str, help='Dataset CSV the chain was fitted to')
        parser.add_argument('--problem-config', type=str, help='Problem config (default: sidecar of the CSV)')
        parser.add_argument('--chain', type=str, help='chain.csv written by fit')
        parser.add_argument('--kinds', type=comma_list(str), help='Fields to predict (default: u)')
        parser.add_argument('--grid-points', type=int, help='Query grid size (default: 50)')
        parser.add_argument('--grid-start', type=float, help='Grid start (default: 0)')
        parser.add_argument('--grid-stop', type=float, help='Grid end (default: L)')
        parser.add_argument('--n-draws', type=int, help='Chain draws in the mixture (default: settings)')
        parser.add_argument('--truth', type=str, help='truth.csv to score predictions against')
        parser.add_argument(
            '--noise-set',
            type=str,
            help='Add this set\'s noise (kind:label) to the std, for re-measurement checks',
        )

    def defaults(self) -> dict:
        from django.conf import settings
        return {
            'dataset': None,
            'problem_config': None,
            'chain': None,
            'kinds': [QuantityKind.DEFLECTION.tag],
            'grid_points': 50,
            'grid_start': 0.0,
            'grid_stop': None,
            'n_draws': settings.INFERENCE_N_DRAWS,
            'truth': None,
            'noise_set': None,
        }

    def run(self, config: RunConfig) -> tuple[list[Path], dict]:
        options = config.options
        if not options['dataset'] or not options['chain']:
            raise ConfigError("both a dataset CSV and --chain are required")
        try:
            kinds = [QuantityKind.from_tag(tag) for tag in options['kinds']]
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if options['grid_points'] < 1:
            raise ConfigError(f"grid points must be >= 1, got {options['grid_points']}")

        problem = load_problem(options['dataset'], options['problem_config'])
        chain = read_chain_csv(options['chain'])
        check_consistency(problem, chain)
        noise_set = options['noise_set']
        if noise_set is not None and noise_set not in {obs.key for obs in problem.all_sets}:
            raise ConsistencyError(f"unknown observation set '{noise_set}'")
        if QuantityKind.STRAIN in kinds and problem.fiber_distance is None:
            raise ConfigError("predicting strain requires fiber_distance in the problem config")

        stop = options['grid_stop'] if options['grid_stop'] is not None else problem.length
        grid = np.linspace(float(options['grid_start']), float(stop), int(options['grid_points']))

        out_dir = config.output_dir
        outputs = []
        results = []
        for kind in kinds:
            result = predict_mixture(
                problem,
                chain,
                kind,
                grid,
                n_draws=int(options['n_draws']),
                threads=config.threads,
                jitter_policy=JitterPolicy.from_settings(),
                noise_set=noise_set if noise_set and problem.set_by_key(noise_set).kind is kind else None,
            )
            results.append(result)
            outputs.append(write_prediction_csv(result, out_dir / f"prediction_{kind.tag}.csv"))
            if result.n_failed:
                self.stdout.write(self.style.WARNING(
                    f"  ! {kind.tag}: {result.n_failed} mixture component(s) skipped"
                ))

        summary: dict = {'kinds': [k.tag for k in kinds], 'grid_points': int(grid.size)}
        if options['truth']:
            scores = score_predictions(results, read_truth_csv(options['truth']))
            scores_csv = out_dir / 'prediction_scores.csv'
            scores.to_csv(scores_csv, index=False, float_format='%.17g')
            outputs.append(scores_csv)
            summary['normalized_rmse'] = dict(zip(scores['kind'], scores['normalized_rmse']))
            for row in scores.itertuples(index=False):
                self.stdout.write(f"  {row.kind}: normalized RMSE {row.normalized_rmse:.3e}")
        return outputs, summary

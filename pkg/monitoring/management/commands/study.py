"""
Run a parametric study of the stiffness Mahalanobis distance.

Usage:
    python manage.py study noise  [--snrs inf,100,10,5] [--ndps 1,5,20] [--seeds 5] [options]
    python manage.py study damage [--elements 1,2,3] [--reductions 0.1,0.2,0.3,0.4] [options]

Examples:
    # Noise sensitivity grid on four threads
    python manage.py study noise --threads 4 --out-dir runs/noise

    # Continue an interrupted damage study without redoing finished runs
    python manage.py study damage --out-dir runs/damage --resume

    # Show the grid and number of runs without fitting anything
    python manage.py study noise --dry-run

Writes <study>_runs.csv (one row per run, appended as runs finish),
<study>_summary.csv (per-cell medians) and manifest.json.
"""
import math
from pathlib import Path

import numpy as np

from beams.oracle import DEFAULT_SENSOR_FRACTIONS, BeamSpec, SensorPlan, SupportType
from core.commands import ConfiguredCommand, comma_list
from core.exceptions import ConfigError, ContractViolationError, DomainError, StudyFailedError
from core.manifest import NUMBER, RunConfig
from gp.fitting import FIT_OPTION_TYPES, fit_config_from_options, fit_option_defaults
from gp.kernel import QuantityKind
from monitoring.damage import (
    DEFAULT_POINTS,
    DEFAULT_REDUCTIONS,
    DEFAULT_SNRS,
    StudyGrid,
    StudyKind,
    StudyStore,
    damage_study,
    noise_study,
    severity_correlation,
)


class Command(ConfiguredCommand):
    help = 'Run the noise or damage study and write per-run and per-cell tables'
    command_name = 'study'
    option_types = {
        'study': (str,),
        'snrs': (list,),
        'ndps': (list,),
        'elements': (list,),
        'reductions': (list,),
        'seeds': (int,),
        'snr': NUMBER,
        'points_per_sensor': (int,),
        'length': NUMBER,
        'ei': NUMBER,
        'n_elements': (int,),
        'load': NUMBER,
        'sensor_fractions': (list,),
        'load_points': (int,),
        'resume': (bool,),
        'dry_run': (bool,),
        **FIT_OPTION_TYPES,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('study', nargs='?', choices=[k.value for k in StudyKind], help='Study to run')
        parser.add_argument('--snrs', type=comma_list(float), help='Noise study SNR axis (default: inf,100,10,5)')
        parser.add_argument('--ndps', type=comma_list(int), help='Noise study readings per sensor (default: 1,5,20)')
        parser.add_argument('--elements', type=comma_list(int), help='Damage study elements, 1-based (default: all)')
        parser.add_argument(
            '--reductions',
            type=comma_list(float),
            help='Damage study stiffness reductions (default: 0.1,0.2,0.3,0.4)',
        )
        parser.add_argument('--seeds', type=int, help='Replicates per cell (default: 5)')
        parser.add_argument('--snr', type=float, help='Damage study SNR (default: 10)')
        parser.add_argument('--points-per-sensor', type=int, help='Damage study readings per sensor (default: 5)')
        parser.add_argument('--length', type=float, help='Beam length L (default: 1)')
        parser.add_argument('--ei', type=float, help='Undamaged stiffness EI (default: 1)')
        parser.add_argument('--n-elements', type=int, help='FE elements (default: 20)')
        parser.add_argument('--load', type=float, help='Uniform load q (default: 1)')
        parser.add_argument('--sensor-fractions', type=comma_list(float), help='Deflection sensors as fractions of L')
        parser.add_argument('--load-points', type=int, help='Prescribed load points (default: 9)')
        parser.add_argument('--resume', action='store_true', default=None, help='Skip runs already in the runs CSV')
        parser.add_argument('--dry-run', action='store_true', default=None, help='Print the grid and exit')
        parser.add_argument('--chains', type=int, help='Chains per fit (default: 1)')
        parser.add_argument('--normalize', action='store_true', default=None, help='Per-set normalization')
        parser.add_argument('--mh-steps', type=int, help='Total MH proposals per chain')
        parser.add_argument('--mh-burn-in', type=int, help='Discarded prefix of each chain')
        parser.add_argument('--mh-thin', type=int, help='Keep every k-th sample after burn-in')
        parser.add_argument('--proposal-scale', type=float, help='Random-walk step std in log-parameter space')
        parser.add_argument('--target-acceptance', type=float, help='Acceptance targeted during burn-in')
        parser.add_argument('--adapt-window', type=int, help='Burn-in steps between proposal rescalings')
        parser.add_argument('--no-adapt', action='store_true', default=None, help='Keep the proposal scale fixed')
        parser.add_argument('--ei-prior-lower', type=float, help='EI prior lower bound as a multiple of EI_ref')
        parser.add_argument('--ei-prior-upper', type=float, help='EI prior upper bound as a multiple of EI_ref')

    def defaults(self) -> dict:
        return {
            'study': None,
            'snrs': list(DEFAULT_SNRS),
            'ndps': list(DEFAULT_POINTS),
            'elements': None,
            'reductions': list(DEFAULT_REDUCTIONS),
            'seeds': 5,
            'snr': 10.0,
            'points_per_sensor': 5,
            'length': 1.0,
            'ei': 1.0,
            'n_elements': 20,
            'load': 1.0,
            'sensor_fractions': list(DEFAULT_SENSOR_FRACTIONS),
            'load_points': 9,
            'resume': False,
            'dry_run': False,
            **fit_option_defaults(),
        }

    def run(self, config: RunConfig) -> tuple[list[Path], dict]:
        options = config.options
        if options['study'] is None:
            raise ConfigError("choose a study: noise or damage")
        try:
            study = StudyKind(options['study'])
        except ValueError as e:
            raise ConfigError(str(e)) from e

        try:
            spec = BeamSpec.uniform(
                length=float(options['length']),
                ei=float(options['ei']),
                n_elements=int(options['n_elements']),
                support=SupportType.CANTILEVER,
                load=float(options['load']),
            )
            positions = {QuantityKind.DEFLECTION: tuple(f * spec.length for f in options['sensor_fractions'])}
            spec.check_positions(np.asarray(positions[QuantityKind.DEFLECTION]))
            SensorPlan(positions=positions)
        except DomainError as e:
            raise ConfigError(str(e)) from e
        fit_config = fit_config_from_options(options, config.seed, threads=1)
        seeds = int(options['seeds'])
        if seeds < 1:
            raise ConfigError(f"seeds per cell must be >= 1, got {seeds}")

        if study is StudyKind.NOISE:
            axis1, axis2 = [float(s) for s in options['snrs']], [int(n) for n in options['ndps']]
        else:
            elements = options['elements'] or list(range(1, spec.n_elements + 1))
            axis1, axis2 = [int(e) for e in elements], [float(r) for r in options['reductions']]
        n_runs = len(axis1) * len(axis2) * seeds
        names = study.axis_names
        self.stdout.write(
            f"{study.value} study: {names[0]} {axis1} x {names[1]} {axis2}, "
            f"{seeds} seed(s) per cell, {n_runs} run(s)"
        )
        if options['dry_run']:
            return [], {'study': study.value, 'n_runs': n_runs, 'dry_run': True}

        store = StudyStore(config.output_dir, study)
        common = {
            'seed': config.seed,
            'load_points': int(options['load_points']),
            'threads': config.threads,
            'store': store,
            'resume': bool(options['resume']),
        }
        try:
            if study is StudyKind.NOISE:
                grid = noise_study(spec, positions, axis1, axis2, seeds, fit_config, **common)
            else:
                grid = damage_study(
                    spec,
                    positions,
                    fit_config,
                    elements=axis1,
                    reductions=axis2,
                    seeds=seeds,
                    snr=float(options['snr']),
                    points_per_sensor=int(options['points_per_sensor']),
                    **common,
                )
        except DomainError as e:
            raise ConfigError(str(e)) from e

        summary = self.summarize(grid)
        for cell in grid.flagged_cells:
            self.stdout.write(self.style.WARNING(
                f"  ! cell ({cell.axis1:g}, {cell.axis2:g}): {cell.n_failed} of {len(cell.runs)} runs failed"
            ))
        if len(grid.flagged_cells) == len(grid.cells):
            raise StudyFailedError(
                f"every cell of the {study.value} study failed; see {store.runs_path}",
            )
        return [store.runs_path, store.summary_path], summary

    def summarize(self, grid: StudyGrid) -> dict:
        summary = {
            'study': grid.study.value,
            'n_runs': sum(len(cell.runs) for cell in grid.cells.values()),
            'n_failed': sum(cell.n_failed for cell in grid.cells.values()),
            'flagged_cells': [[cell.axis1, cell.axis2] for cell in grid.flagged_cells],
        }
        if grid.study is StudyKind.DAMAGE:
            correlations = {}
            for element in grid.axis1_values:
                try:
                    correlations[f"{element:g}"] = severity_correlation(grid, element)
                except ContractViolationError:
                    continue
            summary['severity_correlation'] = {
                k: (None if math.isnan(v) else v) for k, v in correlations.items()
            }
        return summary

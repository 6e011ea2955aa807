"""
Synthesize a noisy beam dataset and its ground truth.

Usage:
    python manage.py synth [--config run.json] [--seed N] [--out-dir DIR] [options]

Examples:
    # Benchmark cantilever: 4 deflection sensors x 5 readings at SNR 10
    python manage.py synth --out-dir runs/benchmark

    # Noise-free readings
    python manage.py synth --snr inf --out-dir runs/noiseless

    # FE truth with element 1 weakened by 40%
    python manage.py synth --truth fe --damage-element 1 --damage-reduction 0.4

Writes dataset.csv (+ dataset.cfg sidecar), truth.csv and manifest.json.
"""
import math
from pathlib import Path

from beams.oracle import (
    BeamSpec,
    SensorPlan,
    SupportType,
    TruthModel,
    solve_beam,
    synth_dataset,
    truth_frame,
    write_truth_csv,
)
from core.commands import ConfiguredCommand, comma_list
from core.exceptions import ConfigError
from core.manifest import NUMBER, RunConfig
from gp.dataset import write_problem_csv
from gp.kernel import QuantityKind

DATASET_NAME = 'dataset.csv'
TRUTH_NAME = 'truth.csv'


class Command(ConfiguredCommand):
    help = 'Synthesize a noisy beam dataset and a dense ground-truth table'
    command_name = 'synth'
    option_types = {
        'length': NUMBER,
        'ei': NUMBER,
        'n_elements': (int,),
        'support': (str,),
        'load': NUMBER,
        'truth': (str,),
        'damage_element': (int,),
        'damage_reduction': NUMBER,
        'sensor_kind': (str,),
        'sensor_fractions': (list,),
        'points_per_sensor': (int,),
        'snr': NUMBER,
        'load_points': (int,),
        'fiber_distance': NUMBER,
        'truth_points': (int,),
    }

    def add_command_arguments(self, parser):
        parser.add_argument('--length', type=float, help='Beam length L in m (default: 1)')
        parser.add_argument('--ei', type=float, help='Bending stiffness EI in N m^2 (default: 1)')
        parser.add_argument('--n-elements', type=int, help='FE elements (default: 20)')
        parser.add_argument(
            '--support',
            choices=[s.value for s in SupportType],
            help='Support type (default: cantilever)',
        )
        parser.add_argument('--load', type=float, help='Uniform load q in N/m (default: 1)')
        parser.add_argument(
            '--truth',
            choices=[t.value for t in TruthModel],
            help='Ground truth model (default: analytic)',
        )
        parser.add_argument('--damage-element', type=int, help='1-based element to weaken (FE truth)')
        parser.add_argument('--damage-reduction', type=float, help='Stiffness reduction of that element, in [0, 1)')
        parser.add_argument(
            '--sensor-kind',
            choices=[k.tag for k in QuantityKind],
            help='Measured quantity (default: u)',
        )
        parser.add_argument(
            '--sensor-fractions',
            type=comma_list(float),
            help='Sensor positions as fractions of L (default: 0.25,0.5,0.75,1.0)',
        )
        parser.add_argument('--points-per-sensor', type=int, help='Readings per sensor N_dp (default: 5)')
        parser.add_argument('--snr', type=float, help='Signal-to-noise ratio; inf for noise-free (default: 10)')
        parser.add_argument('--load-points', type=int, help='Prescribed load points, 0 to omit (default: 9)')
        parser.add_argument('--fiber-distance', type=float, help='Fiber distance c in m, needed for strain')
        parser.add_argument('--truth-points', type=int, help='Grid points of truth.csv (default: 201)')

    def defaults(self) -> dict:
        return {
            'length': 1.0,
            'ei': 1.0,
            'n_elements': 20,
            'support': SupportType.CANTILEVER.value,
            'load': 1.0,
            'truth': TruthModel.ANALYTIC.value,
            'damage_element': None,
            'damage_reduction': 0.0,
            'sensor_kind': QuantityKind.DEFLECTION.tag,
            'sensor_fractions': None,
            'points_per_sensor': 5,
            'snr': 10.0,
            'load_points': 9,
            'fiber_distance': None,
            'truth_points': 201,
        }

    def run(self, config: RunConfig) -> tuple[list[Path], dict]:
        options = config.options
        try:
            support = SupportType(options['support'])
            truth = TruthModel(options['truth'])
            kind = QuantityKind.from_tag(options['sensor_kind'])
        except ValueError as e:
            raise ConfigError(str(e)) from e

        spec = BeamSpec.uniform(
            length=float(options['length']),
            ei=float(options['ei']),
            n_elements=int(options['n_elements']),
            support=support,
            load=float(options['load']),
        )
        ei_ref = spec.uniform_ei
        if options['damage_element'] is not None:
            if truth is not TruthModel.FE:
                raise ConfigError("damage requires --truth fe")
            spec = spec.with_damage(int(options['damage_element']), float(options['damage_reduction']))

        plan_kwargs = {
            'points_per_sensor': int(options['points_per_sensor']),
            'snr': float(options['snr']),
            'seed': config.seed,
            'load_points': int(options['load_points']),
        }
        if options['sensor_fractions']:
            positions = {kind: tuple(f * spec.length for f in options['sensor_fractions'])}
            plan = SensorPlan(positions=positions, **plan_kwargs)
        else:
            plan = SensorPlan.default_for(spec, **plan_kwargs)
            if kind is not QuantityKind.DEFLECTION:
                plan = SensorPlan(positions={kind: plan.positions[QuantityKind.DEFLECTION]}, **plan_kwargs)

        fiber = options['fiber_distance']
        fiber = None if fiber is None else float(fiber)
        problem = synth_dataset(spec, plan, truth, fiber_distance=fiber, ei_ref=ei_ref)

        out_dir = config.output_dir
        dataset = write_problem_csv(problem, out_dir / DATASET_NAME)
        frame = truth_frame(solve_beam(spec, truth), n_points=int(options['truth_points']), fiber_distance=fiber)
        truth_csv = write_truth_csv(frame, out_dir / TRUTH_NAME)

        rows = sum(obs.size for obs in problem.observation_sets)
        self.stdout.write(
            f"Synthesized {rows} observation row(s) in {len(problem.observation_sets)} set(s) "
            f"plus {len(problem.boundary_conditions)} boundary condition(s)"
        )
        summary = {
            'observation_rows': rows,
            'boundary_conditions': len(problem.boundary_conditions),
            'snr': None if math.isinf(plan.snr) else plan.snr,
            'ei_ref': ei_ref,
        }
        return [dataset, dataset.with_suffix('.cfg'), truth_csv], summary

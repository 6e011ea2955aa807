"""
Fit the physics-informed GP to a dataset and report the stiffness posterior.

Usage:
    python manage.py fit <dataset.csv> [--problem-config dataset.cfg] [--ei-ref EI] [options]

Examples:
    # Fit the benchmark dataset written by `synth`
    python manage.py fit runs/benchmark/dataset.csv --out-dir runs/benchmark

    # Four chains on four threads, per-set normalization
    python manage.py fit data.csv --ei-ref 2.1e7 --chains 4 --threads 4 --normalize

Writes chain.csv, correlation.csv, noise_report.csv, summary.json, summary.txt
and manifest.json.
"""
import json
from pathlib import Path

from core.commands import ConfiguredCommand
from core.exceptions import ConfigError, DegeneratePosteriorError
from core.manifest import NUMBER, RunConfig, json_default
from gp.dataset import load_problem
from gp.fitting import FIT_OPTION_TYPES, FitResult, fit_config_from_options, fit_option_defaults, fit_problem
from gp.sampler import write_chain_csv
from monitoring.damage import StiffnessPosterior, mahalanobis

CHAIN_NAME = 'chain.csv'
SUMMARY_NAME = 'summary.json'


class Command(ConfiguredCommand):
    help = 'Sample the parameter posterior of a dataset and summarize the stiffness'
    command_name = 'fit'
    option_types = {
        'dataset': (str,),
        'problem_config': (str,),
        'ei_ref': NUMBER,
        **FIT_OPTION_TYPES,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('dataset', nargs='?', type=str, help='Dataset CSV')
        parser.add_argument('--problem-config', type=str, help='Problem config (default: sidecar of the CSV)')
        parser.add_argument('--ei-ref', type=float, help='Reference stiffness for the EI prior and normalization')
        parser.add_argument('--chains', type=int, help='Independent chains with derived seeds (default: 1)')
        parser.add_argument(
            '--normalize',
            action='store_true',
            default=None,
            help='Scale every measured set by its max |value| before fitting',
        )
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
            'dataset': None,
            'problem_config': None,
            'ei_ref': None,
            **fit_option_defaults(),
        }

    def run(self, config: RunConfig) -> tuple[list[Path], dict]:
        options = config.options
        if not options['dataset']:
            raise ConfigError("a dataset CSV is required")
        problem = load_problem(options['dataset'], options['problem_config'])
        ei_ref = options['ei_ref'] if options['ei_ref'] is not None else problem.ei_ref
        if ei_ref is None:
            raise ConfigError("no reference stiffness: pass --ei-ref or set ei_ref in the problem config")

        fit_config = fit_config_from_options(options, config.seed, config.threads)
        result = fit_problem(problem, fit_config, ei_ref=float(ei_ref))
        summary = self.summarize(result)

        out_dir = config.output_dir
        chain_csv = write_chain_csv(result.chain, out_dir / CHAIN_NAME)
        correlation_csv = out_dir / 'correlation.csv'
        result.summary().correlation_frame().to_csv(correlation_csv, float_format='%.17g')
        noise_csv = out_dir / 'noise_report.csv'
        result.noise_report().to_csv(noise_csv, index=False, float_format='%.17g')
        summary_json = out_dir / SUMMARY_NAME
        summary_json.write_text(json.dumps(summary, indent=2, default=json_default))
        summary_txt = out_dir / 'summary.txt'
        summary_txt.write_text(self.render(result, summary))

        self.stdout.write(self.render(result, summary))
        for warning in summary['warnings']:
            self.stdout.write(self.style.WARNING(f"  ! {warning}"))
        return [chain_csv, correlation_csv, noise_csv, summary_json, summary_txt], summary

    def summarize(self, result: FitResult) -> dict:
        stats = result.summary()
        posterior = StiffnessPosterior.from_samples(result.ei_samples, result.ei_ref)
        warnings = list(result.chain.warnings)
        try:
            d_m = mahalanobis(posterior)
        except DegeneratePosteriorError as e:
            d_m = None
            warnings.append(str(e))
        return {
            'n_samples': len(result.chain),
            'acceptance_rate': result.chain.acceptance_rate,
            'chain_acceptance_rates': [c.acceptance_rate for c in result.chains],
            'map': result.map_params.as_dict(),
            'mean': dict(zip(stats.names, stats.mean.tolist())),
            'std': dict(zip(stats.names, stats.std.tolist())),
            'stiffness': posterior.as_dict(),
            'd_m': d_m,
            'rhat': result.rhat_dict(),
            'noise': result.noise_report().to_dict(orient='records'),
            'warnings': warnings,
            'sampler': result.config.to_dict(),
        }

    def render(self, result: FitResult, summary: dict) -> str:
        stiffness = summary['stiffness']
        lines = [
            f"Retained samples: {summary['n_samples']} (acceptance {summary['acceptance_rate']:.3f})",
            "MAP: " + ', '.join(f"{k}={v:.6g}" for k, v in summary['map'].items()),
            f"Stiffness: mu_EI={stiffness['mu_ei']:.4f}, sigma_EI={stiffness['sigma_ei']:.4f} "
            f"(x EI_ref={stiffness['ei_ref']:.6g}; {stiffness['percent_change']:+.2f}%)",
            "Mahalanobis distance d_M: "
            + ('undefined' if summary['d_m'] is None else f"{summary['d_m']:.4f}"),
        ]
        if summary['rhat']:
            lines.append("R-hat: " + ', '.join(f"{k}={v:.3f}" for k, v in summary['rhat'].items()))
        for row in summary['noise']:
            lines.append(
                f"Noise {row['set']}: sigma={row['sigma_mean']:.4g}, implied SNR={row['implied_snr']:.3g}"
            )
        return '\n'.join(lines) + '\n'

"""
Base class of the project's management commands.

Every command resolves a RunConfig (defaults < --config document < flags),
writes its outputs into the run directory together with a manifest, and
turns project errors into a CommandError carrying the matching exit code.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import BeamGPError, exit_code_for
from core.manifest import OptionTypes, RunConfig, load_config_document, resolve_config, write_manifest

logger = logging.getLogger(__name__)


def comma_list(cast: Callable[[str], Any]) -> Callable[[str], list]:
    """argparse type for `a,b,c` lists."""
    def parse(text: str) -> list:
        return [cast(part.strip()) for part in text.split(',') if part.strip()]
    return parse


class ConfiguredCommand(BaseCommand):
    command_name: str = ''
    option_types: OptionTypes = {}

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            help='JSON run config, or the manifest.json of an earlier run to reproduce it',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Run seed; every random stream is derived from it (default: settings.DEFAULT_SEED)',
        )
        parser.add_argument(
            '--out-dir',
            type=str,
            help='Output directory (default: settings.OUTPUT_DIR)',
        )
        parser.add_argument(
            '--threads',
            type=int,
            help='Worker threads for independent jobs (default: settings.WORKER_THREADS)',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser) -> None:
        pass

    def defaults(self) -> dict:
        raise NotImplementedError

    def overrides(self, options: dict) -> dict:
        """Option values given on the command line; None means not given."""
        return {name: options.get(name) for name in self.option_types}

    def run(self, config: RunConfig) -> tuple[list[Path], dict]:
        """Produce the outputs; returns their paths and a summary for the manifest."""
        raise NotImplementedError

    def resolve(self, options: dict) -> RunConfig:
        document = load_config_document(options['config']) if options.get('config') else None
        return resolve_config(
            self.command_name,
            self.defaults(),
            self.option_types,
            document=document,
            overrides=self.overrides(options),
            seed=options.get('seed'),
            out_dir=options.get('out_dir'),
            threads=options.get('threads'),
        )

    def handle(self, *args: Any, **options: Any) -> None:
        try:
            config = self.resolve(options)
            config.output_dir.mkdir(parents=True, exist_ok=True)
            outputs, summary = self.run(config)
            manifest = write_manifest(config, outputs, summary)
        except (BeamGPError, OSError) as e:
            code = exit_code_for(e)
            logger.debug(f"{self.command_name} failed with exit code {int(code)}", exc_info=True)
            raise CommandError(f"{type(e).__name__}: {e}", returncode=int(code)) from e

        for path in outputs:
            self.stdout.write(f"  {path}")
        self.stdout.write(self.style.SUCCESS(f"✓ {self.command_name} finished; manifest at {manifest}"))

"""
Run configuration documents and the manifest written next to every output.

A manifest holds the fully resolved RunConfig under its `config` key, so
passing a manifest back through `--config` reproduces the run.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from django.utils import timezone

from core.exceptions import ConfigError, ParseError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
RECORDED_PACKAGES = ('numpy', 'scipy', 'pandas', 'Django')

NUMBER = (int, float)
OptionTypes = Mapping[str, tuple[type, ...]]


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    out_dir: str
    threads: int = 1
    options: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'seed': self.seed,
            'out_dir': self.out_dir,
            'threads': self.threads,
            'options': dict(self.options),
        }

    @property
    def output_dir(self) -> Path:
        return Path(self.out_dir)

    @classmethod
    def validate_dict(cls, data: dict, option_types: OptionTypes) -> list[str]:
        """
        Validate a run configuration dict.
        Returns a list of error messages (empty list if valid).
        """
        errors = []
        for key in ('command', 'seed', 'out_dir'):
            if key not in data:
                errors.append(f"missing '{key}'")
        seed = data.get('seed')
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            errors.append(f"'seed' must be a non-negative integer, got {seed!r}")
        threads = data.get('threads', 1)
        if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
            errors.append(f"'threads' must be an integer >= 1, got {threads!r}")
        options = data.get('options', {})
        if not isinstance(options, dict):
            errors.append("'options' must be an object")
            return errors
        for name, value in options.items():
            if name not in option_types:
                errors.append(f"options: unknown option '{name}'")
                continue
            if value is None:
                continue
            expected = option_types[name]
            if isinstance(value, bool) and bool not in expected:
                errors.append(f"options.{name}: expected {_type_names(expected)}, got {value!r}")
            elif not isinstance(value, expected):
                errors.append(f"options.{name}: expected {_type_names(expected)}, got {value!r}")
        return errors

    @classmethod
    def from_dict(cls, data: dict, option_types: OptionTypes) -> RunConfig:
        errors = cls.validate_dict(data, option_types)
        if errors:
            raise ConfigError(f"Invalid run config: {'; '.join(errors)}")
        return cls(
            command=str(data['command']),
            seed=int(data['seed']),
            out_dir=str(data['out_dir']),
            threads=int(data.get('threads', 1)),
            options=dict(data.get('options', {})),
        )


def _type_names(types: Sequence[type]) -> str:
    return ' or '.join(t.__name__ for t in types)


def load_config_document(path: Union[str, Path]) -> dict:
    """Read a JSON run config; a manifest contributes its `config` section."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON in {path}: {e.msg}", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    if 'config' in data and isinstance(data['config'], dict):
        return data['config']
    return data


def resolve_config(
    command: str,
    defaults: dict,
    option_types: OptionTypes,
    document: Optional[dict] = None,
    overrides: Optional[dict] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
) -> RunConfig:
    """Defaults, then the config document, then command-line values that were given."""
    from django.conf import settings

    document = document or {}
    if document.get('command', command) != command:
        raise ConfigError(f"config was written for '{document['command']}', not '{command}'")
    options = dict(defaults)
    options.update(document.get('options', {}))
    options.update({k: v for k, v in (overrides or {}).items() if v is not None})
    data = {
        'command': command,
        'seed': seed if seed is not None else document.get('seed', settings.DEFAULT_SEED),
        'out_dir': out_dir or document.get('out_dir') or str(settings.OUTPUT_DIR),
        'threads': threads if threads is not None else document.get('threads', settings.WORKER_THREADS),
        'options': options,
    }
    return RunConfig.from_dict(data, option_types)


def package_versions() -> dict[str, str]:
    versions = {}
    for name in RECORDED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


def json_default(value: Any) -> Any:
    """numpy scalars and arrays become Python values; anything else its string form."""
    if hasattr(value, 'tolist'):
        return value.tolist()
    return str(value)


def write_manifest(config: RunConfig, outputs: Sequence[Path], summary: Optional[dict] = None) -> Path:
    path = config.output_dir / MANIFEST_NAME
    manifest = {
        'command': config.command,
        'created_at': timezone.now().isoformat(),
        'config': config.to_dict(),
        'outputs': sorted(Path(p).name for p in outputs),
        'summary': summary or {},
        'versions': package_versions(),
    }
    path.write_text(json.dumps(manifest, indent=2, default=json_default))
    logger.info(f"Wrote manifest {path}")
    return path

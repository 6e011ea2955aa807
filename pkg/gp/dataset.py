"""
Observation sets, boundary conditions and the CSV/sidecar formats.

A Problem is the ordered list of sensor groups a fit is conditioned on,
plus the boundary conditions, which enter the model as noise-free
single-point datasets. Sets are keyed by `<kind>:<label>`.

Dataset CSV, one observation per row, header required:

    kind,label,x,value[,sigma]

`sigma` empty means the set's noise is learned; `sigma=0` marks a
prescribed (virtual) set such as the known load. The sidecar config holds
`length`, `fiber_distance`, `ei_ref` and `bc.<kind>.<x>=<value>` entries,
either as JSON or as key=value lines.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
import pandas as pd
from django.utils.functional import cached_property

from core.exceptions import ConfigError, DomainError, ParseError
from gp.kernel import QuantityKind

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['kind', 'label', 'x', 'value', 'sigma']
REQUIRED_COLUMNS = CSV_COLUMNS[:4]
# Positions this close outside [0, L] are clamped-equal, not rejected.
LOCATION_TOLERANCE = 1e-12


def format_number(value: float) -> str:
    """Decimal text that reads back bit-exact."""
    return format(float(value), '.17g')


@dataclass(frozen=True)
class KnownNoise:
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError(f"known noise sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class LearnableNoise:
    """Noise std learned by the sampler, with uniform prior bounds."""
    lower: float = 0.0
    upper: float = math.inf


NoiseModel = Union[KnownNoise, LearnableNoise]


@dataclass(frozen=True)
class ObservationSet:
    kind: QuantityKind
    locations: tuple[float, ...]
    values: tuple[float, ...]
    noise: NoiseModel = field(default_factory=LearnableNoise)
    label: str = ''
    virtual: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, 'locations', tuple(float(v) for v in self.locations))
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        if not self.locations:
            raise DomainError(f"observation set '{self.key}' is empty")
        if len(self.locations) != len(self.values):
            raise DomainError(
                f"observation set '{self.key}' has {len(self.locations)} locations "
                f"but {len(self.values)} values"
            )
        if isinstance(self.noise, KnownNoise) and self.noise.sigma == 0 and not self.virtual:
            raise DomainError(
                f"observation set '{self.key}': zero noise is reserved for boundary "
                f"conditions and prescribed loads"
            )

    @property
    def key(self) -> str:
        return f"{self.kind.tag}:{self.label}"

    @property
    def size(self) -> int:
        return len(self.locations)

    @property
    def is_learnable(self) -> bool:
        return isinstance(self.noise, LearnableNoise)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array(self.locations, dtype=float)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def value_scale(self) -> float:
        """Max absolute value, used for per-set normalization; 1 for all-zero sets."""
        scale = float(np.max(np.abs(self.y)))
        return scale if scale > 0 else 1.0


@dataclass(frozen=True)
class BoundaryCondition:
    kind: QuantityKind
    location: float
    value: float = 0.0

    @property
    def label(self) -> str:
        return f"bc@{format(self.location, 'g')}"


def bc_to_observation(bc: BoundaryCondition, length: Optional[float] = None) -> ObservationSet:
    """Encode a boundary condition as a single-point, noise-free dataset."""
    if length is not None and not _on_beam(bc.location, length):
        raise DomainError(f"boundary condition at x={bc.location} lies outside the beam [0, {length}]")
    return ObservationSet(
        kind=bc.kind,
        locations=(bc.location,),
        values=(bc.value,),
        noise=KnownNoise(0.0),
        label=bc.label,
        virtual=True,
    )


def _on_beam(x: float, length: float) -> bool:
    tol = LOCATION_TOLERANCE * max(length, 1.0)
    return -tol <= x <= length + tol


@dataclass(frozen=True)
class Problem:
    length: float
    observation_sets: tuple[ObservationSet, ...]
    boundary_conditions: tuple[BoundaryCondition, ...] = ()
    fiber_distance: Optional[float] = None
    ei_ref: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, 'observation_sets', tuple(self.observation_sets))
        object.__setattr__(self, 'boundary_conditions', tuple(self.boundary_conditions))
        if self.fiber_distance is None:
            strains = [obs.key for obs in self.observation_sets if obs.kind is QuantityKind.STRAIN]
            strains += [f"bc@{bc.location:g}" for bc in self.boundary_conditions if bc.kind is QuantityKind.STRAIN]
            if strains:
                raise ConfigError(f"strain set(s) {strains} need a fiber distance; set fiber_distance in the config")
        errors = self.validate()
        if errors:
            raise DomainError(f"invalid problem: {'; '.join(errors)}")
        free = 3 + len(self.learnable_sets)
        if self.n_observations < free:
            logger.warning(
                f"Problem has {self.n_observations} observations for {free} free parameters"
            )

    def validate(self) -> list[str]:
        """Returns a list of error messages (empty list if valid)."""
        errors = []
        if not (math.isfinite(self.length) and self.length > 0):
            errors.append(f"beam length must be positive, got {self.length}")
            return errors
        if self.fiber_distance is not None and not self.fiber_distance > 0:
            errors.append(f"fiber distance must be positive, got {self.fiber_distance}")
        if self.ei_ref is not None and not self.ei_ref > 0:
            errors.append(f"reference stiffness must be positive, got {self.ei_ref}")
        if not self.observation_sets:
            errors.append("at least one observation set is required")
        keys = set()
        for obs in self.all_sets:
            if obs.key in keys:
                errors.append(f"duplicate observation set '{obs.key}'")
            keys.add(obs.key)
            outside = [x for x in obs.locations if not _on_beam(x, self.length)]
            if outside:
                errors.append(f"set '{obs.key}' has locations outside [0, {self.length}]: {outside}")
            if obs.kind is QuantityKind.STRAIN and self.fiber_distance is None:
                errors.append(f"set '{obs.key}' holds strains but no fiber distance is configured")
        return errors

    @cached_property
    def bc_sets(self) -> tuple[ObservationSet, ...]:
        return tuple(bc_to_observation(bc) for bc in self.boundary_conditions)

    @cached_property
    def all_sets(self) -> tuple[ObservationSet, ...]:
        """Observation sets followed by boundary-condition sets: the block order of K_p."""
        return self.observation_sets + self.bc_sets

    @cached_property
    def learnable_sets(self) -> tuple[ObservationSet, ...]:
        return tuple(s for s in self.all_sets if s.is_learnable)

    @cached_property
    def y(self) -> np.ndarray:
        return np.concatenate([s.y for s in self.all_sets])

    @property
    def n_observations(self) -> int:
        return sum(s.size for s in self.all_sets)

    def set_by_key(self, key: str) -> ObservationSet:
        for obs in self.all_sets:
            if obs.key == key:
                return obs
        raise KeyError(key)

    def with_sets(self, observation_sets: Iterable[ObservationSet]) -> Problem:
        return replace(self, observation_sets=tuple(observation_sets))

    def config(self) -> ProblemConfig:
        return ProblemConfig(
            length=self.length,
            fiber_distance=self.fiber_distance,
            ei_ref=self.ei_ref,
            boundary_conditions=self.boundary_conditions,
        )


@dataclass(frozen=True)
class ProblemConfig:
    """Sidecar configuration of a dataset CSV."""
    length: float
    fiber_distance: Optional[float] = None
    ei_ref: Optional[float] = None
    boundary_conditions: tuple[BoundaryCondition, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            'length': self.length,
            'fiber_distance': self.fiber_distance,
            'ei_ref': self.ei_ref,
            'boundary_conditions': [
                {'kind': bc.kind.tag, 'x': bc.location, 'value': bc.value}
                for bc in self.boundary_conditions
            ],
        }

    def to_key_values(self) -> str:
        lines = [f"length={format_number(self.length)}"]
        if self.fiber_distance is not None:
            lines.append(f"fiber_distance={format_number(self.fiber_distance)}")
        if self.ei_ref is not None:
            lines.append(f"ei_ref={format_number(self.ei_ref)}")
        for bc in self.boundary_conditions:
            lines.append(f"bc.{bc.kind.tag}.{format_number(bc.location)}={format_number(bc.value)}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def validate_dict(cls, data: dict) -> list[str]:
        """Returns a list of error messages (empty list if valid)."""
        errors = []
        if 'length' not in data:
            errors.append("missing 'length'")
        for name in ('length', 'fiber_distance', 'ei_ref'):
            value = data.get(name)
            if value is None:
                continue
            try:
                number = float(value)
            except (TypeError, ValueError):
                errors.append(f"'{name}' must be a number, got {value!r}")
                continue
            if not (math.isfinite(number) and number > 0):
                errors.append(f"'{name}' must be positive, got {value!r}")
        for i, bc in enumerate(data.get('boundary_conditions', [])):
            prefix = f"boundary_conditions[{i}]"
            if not isinstance(bc, dict):
                errors.append(f"{prefix}: must be an object")
                continue
            for key in ('kind', 'x'):
                if key not in bc:
                    errors.append(f"{prefix}: missing '{key}'")
            if 'kind' in bc:
                try:
                    QuantityKind.from_tag(str(bc['kind']))
                except ValueError as e:
                    errors.append(f"{prefix}: {e}")
            for key in ('x', 'value'):
                if key in bc:
                    try:
                        float(bc[key])
                    except (TypeError, ValueError):
                        errors.append(f"{prefix}: '{key}' must be a number")
        return errors

    @classmethod
    def from_dict(cls, data: dict) -> ProblemConfig:
        errors = cls.validate_dict(data)
        if errors:
            raise ConfigError(f"Invalid problem config: {'; '.join(errors)}")
        length = float(data['length'])
        bcs = tuple(
            BoundaryCondition(
                kind=QuantityKind.from_tag(str(bc['kind'])),
                location=float(bc['x']),
                value=float(bc.get('value', 0.0)),
            )
            for bc in data.get('boundary_conditions', [])
        )
        for bc in bcs:
            if not _on_beam(bc.location, length):
                raise DomainError(f"boundary condition at x={bc.location} lies outside the beam [0, {length}]")
        fiber = data.get('fiber_distance')
        ei_ref = data.get('ei_ref')
        return cls(
            length=length,
            fiber_distance=None if fiber is None else float(fiber),
            ei_ref=None if ei_ref is None else float(ei_ref),
            boundary_conditions=bcs,
        )


def parse_key_values(text: str) -> dict[str, Any]:
    """Turns `key=value` lines into the dict shape ProblemConfig.from_dict expects."""
    data: dict[str, Any] = {'boundary_conditions': []}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ParseError(f"expected key=value, got {raw!r}", line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        if key.startswith('bc.'):
            parts = key.split('.', 2)
            if len(parts) != 3 or not parts[2]:
                raise ParseError(f"boundary condition key must be bc.<kind>.<x>, got {key!r}", line=number)
            data['boundary_conditions'].append({'kind': parts[1], 'x': parts[2], 'value': value})
        elif key in ('length', 'fiber_distance', 'ei_ref'):
            data[key] = value
        else:
            raise ParseError(f"unknown config key {key!r}", line=number)
    return data


def load_problem_config(path: Union[str, Path]) -> ProblemConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == '.json':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {path}: {e.msg}", line=e.lineno) from e
    else:
        data = parse_key_values(text)
    return ProblemConfig.from_dict(data)


def write_problem_config(config: ProblemConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.suffix == '.json':
        path.write_text(json.dumps(config.to_dict(), indent=2))
    else:
        path.write_text(config.to_key_values())
    return path


def sidecar_path(csv_path: Union[str, Path]) -> Optional[Path]:
    """The config next to a dataset CSV: `<stem>.cfg` or `<stem>.json`."""
    csv_path = Path(csv_path)
    for suffix in ('.cfg', '.json'):
        candidate = csv_path.with_suffix(suffix)
        if candidate.exists():
            return candidate
    return None


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column '{column}' is not a number: {text!r}", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"column '{column}' must be finite, got {text!r}", line=line)
    return value


def load_problem_csv(path: Union[str, Path], config: ProblemConfig) -> Problem:
    """Parse a dataset CSV into a validated Problem, grouping rows by kind and label."""
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty; a header row is required", line=1) from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(f"malformed row in {path}: {e}", line=int(match.group(1)) if match else None) from e

    columns = [c.strip() for c in frame.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise ParseError(f"header is missing column(s) {missing}", line=1)
    frame.columns = columns
    frame = frame.fillna('')

    groups: dict[tuple[QuantityKind, str], dict[str, Any]] = {}
    for index, row in enumerate(frame.itertuples(index=False)):
        line = index + 2
        record = row._asdict()
        if all(str(v).strip() == '' for v in record.values()):
            continue
        try:
            kind = QuantityKind.from_tag(str(record['kind']))
        except ValueError as e:
            raise ParseError(str(e), line=line) from None
        label = str(record['label']).strip()
        x = _parse_float(str(record['x']).strip(), 'x', line)
        value = _parse_float(str(record['value']).strip(), 'value', line)
        sigma_text = str(record.get('sigma', '')).strip()
        sigma = None if sigma_text == '' else _parse_float(sigma_text, 'sigma', line)
        if sigma is not None and sigma < 0:
            raise ParseError(f"sigma must be >= 0, got {sigma_text}", line=line)
        if not _on_beam(x, config.length):
            raise DomainError(f"line {line}: x={x} lies outside the beam [0, {config.length}]")

        group = groups.setdefault((kind, label), {'x': [], 'y': [], 'sigma': sigma, 'line': line})
        if group['sigma'] != sigma:
            raise ParseError(
                f"set '{kind.tag}:{label}' mixes sigma values "
                f"({group['sigma']!r} from line {group['line']} and {sigma!r})",
                line=line,
            )
        group['x'].append(x)
        group['y'].append(value)

    sets = []
    for (kind, label), group in groups.items():
        sigma = group['sigma']
        sets.append(ObservationSet(
            kind=kind,
            locations=tuple(group['x']),
            values=tuple(group['y']),
            noise=LearnableNoise() if sigma is None else KnownNoise(sigma),
            label=label,
            virtual=sigma == 0,
        ))
    logger.info(f"Loaded {len(sets)} observation set(s) from {path}")
    return Problem(
        length=config.length,
        observation_sets=tuple(sets),
        boundary_conditions=config.boundary_conditions,
        fiber_distance=config.fiber_distance,
        ei_ref=config.ei_ref,
    )


def problem_frame(problem: Problem) -> pd.DataFrame:
    rows = []
    for obs in problem.observation_sets:
        sigma = '' if obs.is_learnable else format_number(obs.noise.sigma)
        for x, value in zip(obs.locations, obs.values):
            rows.append({
                'kind': obs.kind.tag,
                'label': obs.label,
                'x': format_number(x),
                'value': format_number(value),
                'sigma': sigma,
            })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_problem_csv(problem: Problem, path: Union[str, Path], config_path: Optional[Path] = None) -> Path:
    """Write the observation sets as CSV and the rest of the Problem as its sidecar."""
    path = Path(path)
    problem_frame(problem).to_csv(path, index=False)
    write_problem_config(problem.config(), config_path or path.with_suffix('.cfg'))
    return path


def load_problem(csv_path: Union[str, Path], config_path: Optional[Union[str, Path]] = None) -> Problem:
    """Dataset CSV plus its config: `config_path` if given, else the sidecar next to the CSV."""
    config_path = Path(config_path) if config_path else sidecar_path(csv_path)
    if config_path is None:
        raise ConfigError(f"no problem config for {csv_path}; write {Path(csv_path).with_suffix('.cfg')} "
                          f"or pass one explicitly")
    return load_problem_csv(csv_path, load_problem_config(config_path))

"""
Ground truth for synthetic experiments: closed-form solutions of a uniformly
loaded beam, a Hermite-cubic finite element model with element-wise
stiffness, and noisy sensor data generated from either.

Every field is returned under the sign conventions of `gp.kernel`, built
from the deflection derivatives {0: u, 1: u', 2: u'', 3: u''', 4: u''''}.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from scipy.linalg import LinAlgError, solve

from core.exceptions import ConfigError, DomainError, ModelError, ParseError
from core.seeding import make_rng
from gp.dataset import (
    LOCATION_TOLERANCE,
    BoundaryCondition,
    KnownNoise,
    LearnableNoise,
    ObservationSet,
    Problem,
    format_number,
)
from gp.kernel import DEFAULT_CONVENTION, MAX_ORDER, QuantityKind, Scale, SignConvention

logger = logging.getLogger(__name__)

DEFAULT_SENSOR_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
SENSOR_LABEL = 'sensors'
LOAD_LABEL = 'prescribed'
TRUTH_COLUMNS = ['kind', 'x', 'value']
# Grid used to find the peak response when sizing the noise.
PEAK_GRID_POINTS = 1001
# Reduced stiffness matrices conditioned worse than this are treated as singular.
MAX_CONDITION = 1e13


class SupportType(str, Enum):
    CANTILEVER = 'cantilever'
    SIMPLY_SUPPORTED = 'simply_supported'

    def boundary_conditions(self, length: float) -> tuple[BoundaryCondition, ...]:
        if self is SupportType.CANTILEVER:
            return (
                BoundaryCondition(QuantityKind.DEFLECTION, 0.0),
                BoundaryCondition(QuantityKind.ROTATION, 0.0),
                BoundaryCondition(QuantityKind.MOMENT, length),
                BoundaryCondition(QuantityKind.SHEAR, length),
            )
        return (
            BoundaryCondition(QuantityKind.DEFLECTION, 0.0),
            BoundaryCondition(QuantityKind.DEFLECTION, length),
            BoundaryCondition(QuantityKind.MOMENT, 0.0),
            BoundaryCondition(QuantityKind.MOMENT, length),
        )

    def fixed_dofs(self, n_elements: int) -> tuple[int, ...]:
        if self is SupportType.CANTILEVER:
            return (0, 1)
        return (0, 2 * n_elements)


class TruthModel(str, Enum):
    ANALYTIC = 'analytic'
    FE = 'fe'


@dataclass(frozen=True)
class BeamSpec:
    length: float
    ei_elements: tuple[float, ...]
    support: SupportType = SupportType.CANTILEVER
    load: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'ei_elements', tuple(float(e) for e in self.ei_elements))
        if not (math.isfinite(self.length) and self.length > 0):
            raise DomainError(f"beam length must be positive, got {self.length}")
        if not self.ei_elements:
            raise DomainError("a beam needs at least one element")
        if any(not (math.isfinite(e) and e > 0) for e in self.ei_elements):
            raise DomainError(f"element stiffnesses must be positive, got {self.ei_elements}")
        if not math.isfinite(self.load):
            raise DomainError(f"load must be finite, got {self.load}")

    @classmethod
    def uniform(
        cls,
        length: float,
        ei: float,
        n_elements: int = 20,
        support: SupportType = SupportType.CANTILEVER,
        load: float = 1.0,
    ) -> BeamSpec:
        return cls(length=length, ei_elements=(ei,) * n_elements, support=support, load=load)

    @property
    def n_elements(self) -> int:
        return len(self.ei_elements)

    @property
    def element_length(self) -> float:
        return self.length / self.n_elements

    @property
    def is_uniform(self) -> bool:
        return len(set(self.ei_elements)) == 1

    @property
    def uniform_ei(self) -> float:
        if not self.is_uniform:
            raise DomainError("beam stiffness varies along the length")
        return self.ei_elements[0]

    def with_damage(self, element: int, reduction: float) -> BeamSpec:
        """Reduce the stiffness of 1-based `element` by the fraction `reduction`."""
        if not 1 <= element <= self.n_elements:
            raise DomainError(f"element must lie in [1, {self.n_elements}], got {element}")
        if not 0 <= reduction < 1:
            raise DomainError(f"stiffness reduction must lie in [0, 1), got {reduction}")
        ei = list(self.ei_elements)
        ei[element - 1] *= 1.0 - reduction
        return replace(self, ei_elements=tuple(ei))

    def check_positions(self, x: np.ndarray) -> None:
        tol = LOCATION_TOLERANCE * max(self.length, 1.0)
        if np.any(x < -tol) or np.any(x > self.length + tol):
            raise DomainError(f"positions must lie on the beam [0, {self.length}]")

    def to_dict(self) -> dict:
        return {
            'length': self.length,
            'ei_elements': list(self.ei_elements),
            'support': self.support.value,
            'load': self.load,
        }

    @classmethod
    def from_dict(cls, data: dict) -> BeamSpec:
        return cls(
            length=float(data['length']),
            ei_elements=tuple(data['ei_elements']),
            support=SupportType(data.get('support', SupportType.CANTILEVER.value)),
            load=float(data.get('load', 1.0)),
        )


@dataclass(frozen=True)
class SensorPlan:
    """Sensor positions per kind, repeated readings per sensor and the noise level."""
    positions: Mapping[QuantityKind, tuple[float, ...]]
    points_per_sensor: int = 5
    snr: float = 10.0
    seed: int = 0
    load_points: int = 9

    def __post_init__(self) -> None:
        object.__setattr__(self, 'positions', {
            QuantityKind(k): tuple(float(x) for x in v) for k, v in self.positions.items()
        })
        if not any(self.positions.values()):
            raise DomainError("a sensor plan needs at least one sensor")
        if self.points_per_sensor < 1:
            raise DomainError(f"points per sensor must be >= 1, got {self.points_per_sensor}")
        if not self.snr > 0:
            raise DomainError(f"SNR must be positive or infinite, got {self.snr}")
        if self.load_points < 0:
            raise DomainError(f"load points must be >= 0, got {self.load_points}")

    @classmethod
    def default_for(cls, spec: BeamSpec, **kwargs) -> SensorPlan:
        """Four equally spaced deflection sensors, away from the pinned end(s)."""
        if spec.support is SupportType.CANTILEVER:
            fractions = DEFAULT_SENSOR_FRACTIONS
        else:
            fractions = (0.2, 0.4, 0.6, 0.8)
        positions = {QuantityKind.DEFLECTION: tuple(f * spec.length for f in fractions)}
        return cls(positions=positions, **kwargs)

    def to_dict(self) -> dict:
        return {
            'positions': {k.tag: list(v) for k, v in self.positions.items()},
            'points_per_sensor': self.points_per_sensor,
            'snr': None if math.isinf(self.snr) else self.snr,
            'seed': self.seed,
            'load_points': self.load_points,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SensorPlan:
        snr = data.get('snr', 10.0)
        return cls(
            positions={QuantityKind.from_tag(k): tuple(v) for k, v in data['positions'].items()},
            points_per_sensor=int(data.get('points_per_sensor', 5)),
            snr=math.inf if snr is None else float(snr),
            seed=int(data.get('seed', 0)),
            load_points=int(data.get('load_points', 9)),
        )


class BeamResponse(Protocol):
    spec: BeamSpec

    def derivatives(self, x: np.ndarray) -> dict[int, np.ndarray]: ...


def evaluate_field(
    response: BeamResponse,
    kind: QuantityKind,
    x,
    fiber_distance: Optional[float] = None,
    convention: SignConvention = DEFAULT_CONVENTION,
):
    """Field `kind` of a solved beam at x; scalars in, scalar out."""
    scalar = np.ndim(x) == 0
    positions = np.atleast_1d(np.asarray(x, dtype=float))
    response.spec.check_positions(positions)
    if kind is QuantityKind.STRAIN:
        if fiber_distance is None:
            raise ConfigError("a fiber distance c is required for strain")
        if not fiber_distance > 0:
            raise DomainError(f"fiber distance c must be positive, got {fiber_distance}")
    derivatives = response.derivatives(positions)
    ei = _stiffness_at(response.spec, positions)
    operator = convention.operator(kind)
    values = operator.sign * derivatives[operator.derivative_order]
    if operator.scale is Scale.STIFFNESS:
        values = values * ei
    elif operator.scale is Scale.FIBER:
        values = values * fiber_distance
    return float(values[0]) if scalar else values


def _element_of(spec: BeamSpec, x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x / spec.element_length).astype(int), 0, spec.n_elements - 1)


def _stiffness_at(spec: BeamSpec, x: np.ndarray) -> np.ndarray:
    return np.asarray(spec.ei_elements)[_element_of(spec, x)]


@dataclass(frozen=True)
class AnalyticBeam:
    """Closed-form deflection polynomial of a uniform beam under uniform load."""
    spec: BeamSpec

    def __post_init__(self) -> None:
        if not self.spec.is_uniform:
            raise DomainError("the analytic solution requires a uniform bending stiffness")

    @property
    def deflection(self) -> Polynomial:
        q, length, ei = self.spec.load, self.spec.length, self.spec.uniform_ei
        if self.spec.support is SupportType.CANTILEVER:
            # u = q x^2 (x^2 - 4Lx + 6L^2) / 24EI
            coefficients = [0.0, 0.0, 6 * length ** 2, -4 * length, 1.0]
        else:
            # u = q x (L^3 - 2Lx^2 + x^3) / 24EI
            coefficients = [0.0, length ** 3, 0.0, -2 * length, 1.0]
        return Polynomial(coefficients) * (q / (24.0 * ei))

    def derivatives(self, x: np.ndarray) -> dict[int, np.ndarray]:
        u = self.deflection
        return {order: u.deriv(order)(x) if order else u(x) for order in range(MAX_ORDER + 1)}


def cantilever_analytic(
    q: float,
    length: float,
    ei: float,
    kind: QuantityKind,
    x,
    fiber_distance: Optional[float] = None,
    convention: SignConvention = DEFAULT_CONVENTION,
):
    spec = BeamSpec(length=length, ei_elements=(ei,), support=SupportType.CANTILEVER, load=q)
    return evaluate_field(AnalyticBeam(spec), kind, x, fiber_distance, convention)


def simply_supported_analytic(
    q: float,
    length: float,
    ei: float,
    kind: QuantityKind,
    x,
    fiber_distance: Optional[float] = None,
    convention: SignConvention = DEFAULT_CONVENTION,
):
    spec = BeamSpec(length=length, ei_elements=(ei,), support=SupportType.SIMPLY_SUPPORTED, load=q)
    return evaluate_field(AnalyticBeam(spec), kind, x, fiber_distance, convention)


def element_stiffness(ei: float, h: float) -> np.ndarray:
    """4x4 Euler-Bernoulli element stiffness, DOF order (w_i, theta_i, w_j, theta_j)."""
    return ei / h ** 3 * np.array([
        [12.0, 6 * h, -12.0, 6 * h],
        [6 * h, 4 * h ** 2, -6 * h, 2 * h ** 2],
        [-12.0, -6 * h, 12.0, -6 * h],
        [6 * h, 2 * h ** 2, -6 * h, 4 * h ** 2],
    ])


def element_load(q: float, h: float) -> np.ndarray:
    """Consistent nodal loads of a uniform distributed load."""
    return q * h / 12.0 * np.array([6.0, h, 6.0, -h])


@dataclass(frozen=True)
class FESolution:
    """
    Nodal deflections and rotations of the assembled model.

    Inside an element the deflection is the Hermite interpolant of its nodal
    values plus the element's particular solution for the uniform load, which
    vanishes with its slope at both nodes. Moment and shear are recovered from
    the element end forces K_e d_e - f_e.
    """
    spec: BeamSpec
    nodal: np.ndarray
    end_moment: np.ndarray = field(repr=False)
    end_shear: np.ndarray = field(repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.spec.length, self.spec.n_elements + 1)

    @property
    def nodal_deflection(self) -> np.ndarray:
        return self.nodal[0::2]

    @property
    def nodal_rotation(self) -> np.ndarray:
        return self.nodal[1::2]

    def derivatives(self, x: np.ndarray) -> dict[int, np.ndarray]:
        spec = self.spec
        h = spec.element_length
        q = spec.load
        element = _element_of(spec, x)
        ei = np.asarray(spec.ei_elements)[element]
        s = x - element * h
        xi = s / h
        w1, t1 = self.nodal[2 * element], self.nodal[2 * element + 1]
        w2, t2 = self.nodal[2 * element + 2], self.nodal[2 * element + 3]

        shape = (1 - 3 * xi ** 2 + 2 * xi ** 3, h * (xi - 2 * xi ** 2 + xi ** 3),
                 3 * xi ** 2 - 2 * xi ** 3, h * (-xi ** 2 + xi ** 3))
        slope = ((-6 * xi + 6 * xi ** 2) / h, 1 - 4 * xi + 3 * xi ** 2,
                 (6 * xi - 6 * xi ** 2) / h, -2 * xi + 3 * xi ** 2)
        bubble = q / (24.0 * ei) * s ** 2 * (h - s) ** 2
        bubble_slope = q / (12.0 * ei) * s * (h - s) * (h - 2 * s)

        u = w1 * shape[0] + t1 * shape[1] + w2 * shape[2] + t2 * shape[3] + bubble
        r = w1 * slope[0] + t1 * slope[1] + w2 * slope[2] + t2 * slope[3] + bubble_slope
        v0 = self.end_shear[element]
        m = self.end_moment[element] + v0 * s - 0.5 * q * s ** 2
        v = v0 - q * s
        # default convention: m = -EI u'', v = -EI u'''
        return {0: u, 1: r, 2: -m / ei, 3: -v / ei, 4: np.full_like(u, q) / ei}


def fe_solve(spec: BeamSpec, fixed_dofs: Optional[Sequence[int]] = None) -> FESolution:
    """Assemble and solve the Hermite-cubic model; `fixed_dofs` overrides the support."""
    n = spec.n_elements
    h = spec.element_length
    n_dofs = 2 * (n + 1)
    stiffness = np.zeros((n_dofs, n_dofs))
    loads = np.zeros(n_dofs)
    for e, ei in enumerate(spec.ei_elements):
        dofs = slice(2 * e, 2 * e + 4)
        stiffness[dofs, dofs] += element_stiffness(ei, h)
        loads[dofs] += element_load(spec.load, h)

    fixed = tuple(spec.support.fixed_dofs(n) if fixed_dofs is None else fixed_dofs)
    free = np.setdiff1d(np.arange(n_dofs), fixed)
    reduced = stiffness[np.ix_(free, free)]
    if np.linalg.cond(reduced) > MAX_CONDITION:
        raise ModelError(f"global stiffness is singular with fixed DOFs {list(fixed)}; the beam is a mechanism")
    try:
        solution = solve(reduced, loads[free], assume_a='sym')
    except LinAlgError as e:
        raise ModelError(f"global stiffness is singular: {e}") from e

    nodal = np.zeros(n_dofs)
    nodal[free] = solution
    end_moment = np.empty(n)
    end_shear = np.empty(n)
    for e, ei in enumerate(spec.ei_elements):
        forces = element_stiffness(ei, h) @ nodal[2 * e:2 * e + 4] - element_load(spec.load, h)
        end_moment[e] = forces[1]
        end_shear[e] = -forces[0]
    logger.debug(f"Solved FE beam with {n} element(s), tip deflection {nodal[-2]:.6g}")
    return FESolution(spec=spec, nodal=nodal, end_moment=end_moment, end_shear=end_shear)


def solve_beam(spec: BeamSpec, truth: TruthModel) -> BeamResponse:
    if truth is TruthModel.ANALYTIC:
        return AnalyticBeam(spec)
    return fe_solve(spec)


def peak_response(
    response: BeamResponse,
    kind: QuantityKind,
    fiber_distance: Optional[float] = None,
    extra_points: Sequence[float] = (),
) -> float:
    """Max |field| over the beam."""
    grid = np.union1d(np.linspace(0.0, response.spec.length, PEAK_GRID_POINTS), np.asarray(extra_points, float))
    return float(np.max(np.abs(evaluate_field(response, kind, grid, fiber_distance))))


def noise_sigma(peak: float, snr: float) -> float:
    """sigma = |peak response| / SNR; zero for an infinite SNR."""
    return 0.0 if math.isinf(snr) else abs(peak) / snr


def synth_dataset(
    spec: BeamSpec,
    plan: SensorPlan,
    truth: TruthModel = TruthModel.ANALYTIC,
    fiber_distance: Optional[float] = None,
    ei_ref: Optional[float] = None,
    convention: SignConvention = DEFAULT_CONVENTION,
) -> Problem:
    """
    N_dp independent noisy readings per sensor around the true field, the
    prescribed load as a noise-free set, and the support's boundary conditions.
    """
    if truth is TruthModel.ANALYTIC and not spec.is_uniform:
        raise ConfigError("analytic truth requires a uniform bending stiffness; use the FE model")
    response = solve_beam(spec, truth)
    rng = make_rng(plan.seed)

    sets = []
    for kind, positions in plan.positions.items():
        if not positions:
            continue
        x = np.asarray(positions, dtype=float)
        spec.check_positions(x)
        sigma = noise_sigma(peak_response(response, kind, fiber_distance, positions), plan.snr)
        exact = evaluate_field(response, kind, x, fiber_distance, convention)
        locations = np.repeat(x, plan.points_per_sensor)
        values = np.repeat(exact, plan.points_per_sensor)
        if sigma > 0:
            values = values + sigma * rng.standard_normal(values.size)
        logger.info(f"Synthesized {values.size} {kind.tag} reading(s) with noise sigma {sigma:.6g}")
        sets.append(ObservationSet(
            kind=kind,
            locations=tuple(locations),
            values=tuple(values),
            noise=LearnableNoise(),
            label=SENSOR_LABEL,
        ))

    if plan.load_points:
        x = np.linspace(0.0, spec.length, plan.load_points)
        sets.append(ObservationSet(
            kind=QuantityKind.LOAD,
            locations=tuple(x),
            values=tuple(evaluate_field(response, QuantityKind.LOAD, x, fiber_distance, convention)),
            noise=KnownNoise(0.0),
            label=LOAD_LABEL,
            virtual=True,
        ))

    if ei_ref is None and spec.is_uniform:
        ei_ref = spec.uniform_ei
    return Problem(
        length=spec.length,
        observation_sets=tuple(sets),
        boundary_conditions=spec.support.boundary_conditions(spec.length),
        fiber_distance=fiber_distance,
        ei_ref=ei_ref,
    )


def truth_frame(
    response: BeamResponse,
    kinds: Optional[Sequence[QuantityKind]] = None,
    n_points: int = 201,
    fiber_distance: Optional[float] = None,
    convention: SignConvention = DEFAULT_CONVENTION,
) -> pd.DataFrame:
    """Dense `kind,x,value` table of the true fields, for scoring predictions later."""
    if kinds is None:
        kinds = [k for k in QuantityKind if k is not QuantityKind.STRAIN or fiber_distance is not None]
    x = np.linspace(0.0, response.spec.length, n_points)
    frames = [
        pd.DataFrame({'kind': kind.tag, 'x': x, 'value': evaluate_field(response, kind, x, fiber_distance, convention)})
        for kind in kinds
    ]
    return pd.concat(frames, ignore_index=True)[TRUTH_COLUMNS]


def write_truth_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    out = frame.copy()
    for column in ('x', 'value'):
        out[column] = out[column].map(format_number)
    out.to_csv(path, index=False)
    return path


def read_truth_csv(path: Union[str, Path]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError(f"{path} is not a valid truth CSV: {e}") from e
    missing = [c for c in TRUTH_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"truth file {path} is missing column(s) {missing}")
    return frame

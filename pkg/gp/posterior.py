"""
Log-prior, log-likelihood and unnormalized log-posterior of the parameter
vector psi = {sigma_s, ell, EI, sigma_a per learnable set}.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from core.exceptions import ContractViolationError, DomainError, NumericalSingularityError
from gp.covariance import CovarianceFactor, JitterPolicy, assemble, factorize
from gp.dataset import LearnableNoise, Problem
from gp.kernel import DEFAULT_CONVENTION, KernelParams, SignConvention

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
BASE_NAMES = ('sigma_s', 'ell', 'ei')


def noise_name(set_key: str) -> str:
    return f"noise[{set_key}]"


def set_key_from_name(name: str) -> Optional[str]:
    if name.startswith('noise[') and name.endswith(']'):
        return name[len('noise['):-1]
    return None


@dataclass(frozen=True)
class ParamVector:
    sigma_s: float
    ell: float
    ei: float
    noise_sigmas: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'noise_sigmas', dict(self.noise_sigmas))
        for name, value in zip(self.names, self.to_array()):
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"parameter {name} must be finite and positive, got {value}")

    @property
    def names(self) -> tuple[str, ...]:
        return BASE_NAMES + tuple(noise_name(key) for key in self.noise_sigmas)

    @property
    def kernel_params(self) -> KernelParams:
        return KernelParams(sigma_s=self.sigma_s, ell=self.ell)

    def to_array(self) -> np.ndarray:
        return np.array([self.sigma_s, self.ell, self.ei, *self.noise_sigmas.values()], dtype=float)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.to_array().tolist()))

    @classmethod
    def from_array(cls, names: Sequence[str], values: Sequence[float]) -> ParamVector:
        if len(names) != len(values):
            raise ContractViolationError(f"{len(names)} names for {len(values)} values")
        named = dict(zip(names, (float(v) for v in values)))
        missing = [n for n in BASE_NAMES if n not in named]
        if missing:
            raise ContractViolationError(f"parameter vector is missing {missing}")
        noises = {}
        for name in names:
            key = set_key_from_name(name)
            if key is not None:
                noises[key] = named[name]
            elif name not in BASE_NAMES:
                raise ContractViolationError(f"unknown parameter name {name!r}")
        return cls(sigma_s=named['sigma_s'], ell=named['ell'], ei=named['ei'], noise_sigmas=noises)


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors; a missing name means U(0, inf), i.e. improper and flat."""
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'bounds', dict(self.bounds))
        for name, (lower, upper) in self.bounds.items():
            if not lower < upper:
                raise DomainError(f"prior for {name} needs lower < upper, got ({lower}, {upper})")

    def interval(self, name: str) -> tuple[float, float]:
        return self.bounds.get(name, (0.0, math.inf))

    @classmethod
    def for_problem(
        cls,
        problem: Problem,
        ei_ref: float,
        ei_factors: tuple[float, float] = (0.1, 2.0),
    ) -> PriorSpec:
        """EI ~ U(f_lo * EI_ref, f_hi * EI_ref); noise bounds come from each learnable set."""
        bounds = {'ei': (ei_factors[0] * ei_ref, ei_factors[1] * ei_ref)}
        for obs in problem.learnable_sets:
            assert isinstance(obs.noise, LearnableNoise)
            if obs.noise.lower > 0 or math.isfinite(obs.noise.upper):
                bounds[noise_name(obs.key)] = (obs.noise.lower, obs.noise.upper)
        return cls(bounds=bounds)

    def describe_violations(self, psi: ParamVector) -> list[str]:
        violations = []
        for name, value in psi.as_dict().items():
            lower, upper = self.interval(name)
            if not lower <= value <= upper:
                violations.append(f"{name}={value:.6g} outside [{lower:.6g}, {upper:.6g}]")
        return violations


def log_prior(psi: ParamVector, prior: PriorSpec) -> float:
    total = 0.0
    for name, value in psi.as_dict().items():
        lower, upper = prior.interval(name)
        if not lower <= value <= upper:
            return -math.inf
        width = upper - lower
        if math.isfinite(width):
            total -= math.log(width)
    return total


def gaussian_log_likelihood(y: np.ndarray, factor: CovarianceFactor) -> float:
    """log N(y | 0, L L^T) from the triangular factor."""
    z = factor.whiten(y)
    n = y.shape[0]
    return float(-0.5 * (z @ z) - 0.5 * factor.log_det - 0.5 * n * LOG_2PI)


def normalized_y(problem: Problem, scales: Optional[Mapping[str, float]]) -> np.ndarray:
    if scales is None:
        return problem.y
    return np.concatenate([obs.y / scales[obs.key] for obs in problem.all_sets])


def log_likelihood(
    problem: Problem,
    psi: ParamVector,
    convention: SignConvention = DEFAULT_CONVENTION,
    jitter_policy: JitterPolicy = JitterPolicy(),
    scales: Optional[Mapping[str, float]] = None,
) -> float:
    cov = assemble(problem, psi.kernel_params, psi.ei, psi.noise_sigmas, convention, scales)
    factor = factorize(cov, jitter_policy)
    return gaussian_log_likelihood(normalized_y(problem, scales), factor)


def log_posterior(
    problem: Problem,
    psi: ParamVector,
    prior: PriorSpec,
    convention: SignConvention = DEFAULT_CONVENTION,
    jitter_policy: JitterPolicy = JitterPolicy(),
    scales: Optional[Mapping[str, float]] = None,
) -> float:
    lp = log_prior(psi, prior)
    if lp == -math.inf:
        return lp
    return lp + log_likelihood(problem, psi, convention, jitter_policy, scales)


@dataclass(frozen=True)
class LogSpaceTarget:
    """
    Posterior density of psi expressed over the sampler state s = log(psi).

    The Jacobian term sum(s) keeps the target a density over psi itself.
    Singular covariances evaluate to -inf so the sampler simply rejects them.
    """
    problem: Problem
    prior: PriorSpec
    names: tuple[str, ...]
    convention: SignConvention = DEFAULT_CONVENTION
    jitter_policy: JitterPolicy = JitterPolicy()
    scales: Optional[Mapping[str, float]] = None

    @classmethod
    def for_problem(cls, problem: Problem, prior: PriorSpec, **kwargs) -> LogSpaceTarget:
        names = BASE_NAMES + tuple(noise_name(obs.key) for obs in problem.learnable_sets)
        return cls(problem=problem, prior=prior, names=names, **kwargs)

    def encode(self, values: np.ndarray) -> np.ndarray:
        return np.log(np.asarray(values, dtype=float))

    def decode(self, state: np.ndarray) -> np.ndarray:
        return np.exp(state)

    def log_jacobian(self, state: np.ndarray) -> float:
        return float(np.sum(state))

    def params(self, state: np.ndarray) -> ParamVector:
        return ParamVector.from_array(self.names, self.decode(state))

    def __call__(self, state: np.ndarray) -> float:
        values = self.decode(state)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            return -math.inf
        psi = ParamVector.from_array(self.names, values)
        try:
            value = log_posterior(self.problem, psi, self.prior, self.convention, self.jitter_policy, self.scales)
        except NumericalSingularityError as e:
            logger.debug(f"Rejecting state with singular covariance: {e}")
            return -math.inf
        if value == -math.inf:
            return value
        return value + self.log_jacobian(state)

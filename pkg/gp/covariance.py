"""
Global block covariance K_p over every observation set, its noise blocks,
and a jittered Cholesky factorization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from core.exceptions import DomainError, NumericalSingularityError
from gp.dataset import KnownNoise, Problem
from gp.kernel import DEFAULT_CONVENTION, KernelParams, SignConvention, cross_kernel_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssembledCovariance:
    matrix: np.ndarray
    block_index: Mapping[str, slice]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class JitterPolicy:
    """Jitter schedule; all values are multiples of each observation set's mean prior variance."""
    initial: float = 1e-10
    growth: float = 10.0
    maximum: float = 1e-4

    def __post_init__(self) -> None:
        if not (0 < self.initial <= self.maximum and self.growth > 1):
            raise DomainError(f"invalid jitter policy {self}")

    @classmethod
    def from_settings(cls) -> JitterPolicy:
        from django.conf import settings
        return cls(
            initial=settings.JITTER_INITIAL,
            growth=settings.JITTER_GROWTH,
            maximum=settings.JITTER_MAX,
        )


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower Cholesky factor of K_p + diag(jitter); `jitter_used` is the multiplier that succeeded."""
    lower: np.ndarray
    jitter_used: float
    block_index: Mapping[str, slice] = field(default_factory=dict)
    jitter: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve((self.lower, True), b, check_finite=False)

    def whiten(self, b: np.ndarray) -> np.ndarray:
        """L^-1 b."""
        return solve_triangular(self.lower, b, lower=True, check_finite=False)

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def noise_variances(problem: Problem, noises: Mapping[str, float]) -> dict[str, float]:
    """sigma_a**2 per set key; learnable sets take theirs from `noises`."""
    variances = {}
    for obs in problem.all_sets:
        if obs.is_learnable:
            if obs.key not in noises:
                raise DomainError(f"no noise sigma supplied for learnable set '{obs.key}'")
            sigma = noises[obs.key]
            if not sigma > 0:
                raise DomainError(f"noise sigma for set '{obs.key}' must be positive, got {sigma}")
        else:
            assert isinstance(obs.noise, KnownNoise)
            sigma = obs.noise.sigma
        variances[obs.key] = float(sigma) ** 2
    return variances


def block_index(problem: Problem) -> dict[str, slice]:
    index = {}
    start = 0
    for obs in problem.all_sets:
        index[obs.key] = slice(start, start + obs.size)
        start += obs.size
    return index


def assemble(
    problem: Problem,
    params: KernelParams,
    ei: float,
    noises: Mapping[str, float],
    convention: SignConvention = DEFAULT_CONVENTION,
    scales: Optional[Mapping[str, float]] = None,
) -> AssembledCovariance:
    """
    K_p[i, j] = cross_kernel(kind_i, kind_j, x_i, x_j) + sigma_a**2 * [i == j, same set].

    With `scales`, every block is divided by s_a * s_b: the covariance of the
    normalized observations y_a / s_a. Noise variances are then in normalized units.
    """
    if not ei > 0:
        raise DomainError(f"bending stiffness must be positive, got {ei}")
    variances = noise_variances(problem, noises)
    sets = problem.all_sets
    index = block_index(problem)
    n = problem.n_observations
    matrix = np.empty((n, n))
    c = problem.fiber_distance

    for a, set_a in enumerate(sets):
        rows = index[set_a.key]
        for set_b in sets[a:]:
            cols = index[set_b.key]
            block = cross_kernel_matrix(params, ei, c, set_a.kind, set_b.kind, set_a.x, set_b.x, convention)
            if scales is not None:
                block = block / (scales[set_a.key] * scales[set_b.key])
            matrix[rows, cols] = block
            matrix[cols, rows] = block.T
        diagonal = np.arange(rows.start, rows.stop)
        matrix[diagonal, diagonal] += variances[set_a.key]

    return AssembledCovariance(matrix=matrix, block_index=index)


def jitter_scale(cov: AssembledCovariance) -> np.ndarray:
    """
    Per-row jitter unit: the mean diagonal of the row's observation set, so
    each set is regularized in its own units. Rows outside `block_index` fall
    back to trace(K)/N, which is also the unit of a single-set matrix.
    """
    diagonal = np.diag(cov.matrix)
    overall = float(np.sum(diagonal)) / diagonal.size
    if not overall > 0:
        overall = 1.0
    scale = np.full(diagonal.size, overall)
    for rows in cov.block_index.values():
        block = diagonal[rows]
        if block.size and float(np.mean(block)) > 0:
            scale[rows] = float(np.mean(block))
    return scale


def factorize(cov: AssembledCovariance, jitter_policy: JitterPolicy = JitterPolicy()) -> CovarianceFactor:
    """Cholesky of K + jitter*diag(scale), escalating the jitter geometrically until it succeeds."""
    matrix = cov.matrix
    if not np.all(np.isfinite(matrix)):
        raise NumericalSingularityError("covariance matrix has non-finite entries")
    scale = jitter_scale(cov)
    jitter = jitter_policy.initial
    limit = jitter_policy.maximum * (1 + 1e-12)
    while jitter <= limit:
        added = jitter * scale
        try:
            lower = cholesky(matrix + np.diag(added), lower=True, check_finite=False)
        except LinAlgError:
            logger.debug(f"Cholesky failed with jitter {jitter:.3e}, escalating")
            jitter *= jitter_policy.growth
            continue
        return CovarianceFactor(lower=lower, jitter_used=jitter, block_index=cov.block_index, jitter=added)
    raise NumericalSingularityError(
        f"covariance is not positive definite up to jitter {jitter_policy.maximum:.3e} x the diagonal scale "
        f"(degenerate hyperparameters, e.g. a length scale far beyond the beam)"
    )

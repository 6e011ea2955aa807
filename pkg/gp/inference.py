"""
Predictive distributions of any beam field at query positions: the Gaussian
conditional for one parameter vector, and its mixture over chain draws.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.exceptions import (
    ConfigError,
    ContractViolationError,
    DomainError,
    InferenceError,
    NumericalSingularityError,
)
from gp.covariance import JitterPolicy, assemble, factorize, noise_variances
from gp.dataset import Problem, format_number
from gp.kernel import DEFAULT_CONVENTION, QuantityKind, SignConvention, cross_kernel_matrix
from gp.posterior import ParamVector, normalized_y
from gp.sampler import Chain

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ['kind', 'x', 'mean', 'std']


@dataclass(frozen=True)
class GaussianPrediction:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.covariance), 0.0, None)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class PredictiveResult:
    kind: QuantityKind
    locations: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    per_sample_means: Optional[np.ndarray] = None
    n_failed: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'kind': self.kind.tag,
            'x': self.locations,
            'mean': self.mean,
            'std': self.std,
        }, columns=PREDICTION_COLUMNS)


def _query_positions(problem: Problem, x_star) -> np.ndarray:
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if x_star.size == 0:
        raise ContractViolationError("no query positions given")
    if not np.all(np.isfinite(x_star)):
        raise DomainError("query positions must be finite")
    outside = (x_star < 0) | (x_star > problem.length)
    if outside.any():
        logger.warning(f"Extrapolating {int(outside.sum())} query position(s) outside [0, {problem.length}]")
    return x_star


def predict_conditional(
    problem: Problem,
    psi: ParamVector,
    kind: QuantityKind,
    x_star,
    convention: SignConvention = DEFAULT_CONVENTION,
    jitter_policy: JitterPolicy = JitterPolicy(),
    scales: Optional[Mapping[str, float]] = None,
    noise_set: Optional[str] = None,
) -> GaussianPrediction:
    """
    mean = K*^T K_p^-1 y and cov = K** - K*^T K_p^-1 K*, in raw units of `kind`.

    `noise_set` adds that set's noise variance to the diagonal, for checking
    re-measurements instead of the latent field.
    """
    if kind is QuantityKind.STRAIN and problem.fiber_distance is None:
        raise ConfigError("predicting strain requires a fiber distance in the problem config")
    x_star = _query_positions(problem, x_star)
    params = psi.kernel_params
    c = problem.fiber_distance

    factor = factorize(assemble(problem, params, psi.ei, psi.noise_sigmas, convention, scales), jitter_policy)
    blocks = []
    for obs in problem.all_sets:
        block = cross_kernel_matrix(params, psi.ei, c, obs.kind, kind, obs.x, x_star, convention)
        if scales is not None:
            block = block / scales[obs.key]
        blocks.append(block)
    k_star = np.vstack(blocks)
    k_star_star = cross_kernel_matrix(params, psi.ei, c, kind, kind, x_star, x_star, convention)

    mean = k_star.T @ factor.solve(normalized_y(problem, scales))
    v = factor.whiten(k_star)
    covariance = k_star_star - v.T @ v

    if noise_set is not None:
        obs = problem.set_by_key(noise_set)
        if obs.kind is not kind:
            raise ContractViolationError(f"set '{noise_set}' does not measure {kind.tag}")
        variance = noise_variances(problem, psi.noise_sigmas)[noise_set]
        if scales is not None:
            variance *= scales[noise_set] ** 2
        covariance = covariance + variance * np.eye(x_star.size)
    return GaussianPrediction(mean=mean, covariance=covariance)


def draw_indices(n_samples: int, n_draws: int) -> np.ndarray:
    """`n_draws` equally spaced indices into a chain of `n_samples`."""
    if n_samples < 1:
        raise ContractViolationError("chain is empty")
    if n_draws < 1:
        raise ContractViolationError(f"n_draws must be >= 1, got {n_draws}")
    if n_draws > n_samples:
        logger.info(f"Requested {n_draws} draws from a chain of {n_samples}; using all samples")
        n_draws = n_samples
    return np.unique(np.round(np.linspace(0, n_samples - 1, n_draws)).astype(int))


def predict_mixture(
    problem: Problem,
    chain: Chain,
    kind: QuantityKind,
    x_star,
    n_draws: int = 200,
    threads: int = 1,
    convention: SignConvention = DEFAULT_CONVENTION,
    jitter_policy: JitterPolicy = JitterPolicy(),
    scales: Optional[Mapping[str, float]] = None,
    noise_set: Optional[str] = None,
    keep_components: bool = False,
) -> PredictiveResult:
    """Equally weighted Gaussian mixture over chain draws, reduced to its mean and std."""
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    indices = draw_indices(len(chain), n_draws)

    def component(index: int) -> Optional[tuple[np.ndarray, np.ndarray]]:
        psi = chain.param_vector(index)
        try:
            prediction = predict_conditional(
                problem, psi, kind, x_star, convention, jitter_policy, scales, noise_set,
            )
        except (NumericalSingularityError, DomainError) as e:
            logger.warning(f"Skipping chain sample {index} in the {kind.tag} mixture: {e}")
            return None
        return prediction.mean, prediction.variance

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(component, indices))
    else:
        outcomes = [component(i) for i in indices]

    succeeded = [o for o in outcomes if o is not None]
    failed = len(outcomes) - len(succeeded)
    if not succeeded:
        raise InferenceError(f"all {len(outcomes)} mixture components failed for {kind.tag}")

    means = np.stack([m for m, _ in succeeded])
    variances = np.stack([v for _, v in succeeded])
    mean = means.mean(axis=0)
    # law of total variance over equally weighted components
    variance = (variances + means ** 2).mean(axis=0) - mean ** 2
    std = np.sqrt(np.clip(variance, 0.0, None))
    logger.info(f"Mixture for {kind.tag}: {len(succeeded)} component(s), {failed} skipped")
    return PredictiveResult(
        kind=kind,
        locations=x_star,
        mean=mean,
        std=std,
        per_sample_means=means if keep_components else None,
        n_failed=failed,
    )


def normalized_rmse(predicted, truth) -> float:
    """RMSE(predicted - truth) / max|truth|; plain RMSE when the truth is identically zero."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ContractViolationError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    rmse = float(np.sqrt(np.mean((predicted - truth) ** 2)))
    scale = float(np.max(np.abs(truth)))
    return rmse / scale if scale > 0 else rmse


def score_predictions(results: Sequence[PredictiveResult], truth: pd.DataFrame) -> pd.DataFrame:
    """
    Normalized RMSE of each prediction's mean against a `kind,x,value` truth table.
    Truth values are linearly interpolated onto the prediction grid.
    """
    rows = []
    for result in results:
        subset = truth[truth['kind'] == result.kind.tag].sort_values('x')
        if subset.empty:
            logger.warning(f"No truth values for {result.kind.tag}; not scored")
            continue
        expected = np.interp(result.locations, subset['x'].to_numpy(float), subset['value'].to_numpy(float))
        rows.append({
            'kind': result.kind.tag,
            'n_points': result.locations.size,
            'normalized_rmse': normalized_rmse(result.mean, expected),
        })
    return pd.DataFrame(rows, columns=['kind', 'n_points', 'normalized_rmse'])


def write_prediction_csv(result: PredictiveResult, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = result.to_frame()
    for column in ('x', 'mean', 'std'):
        frame[column] = frame[column].map(format_number)
    frame.to_csv(path, index=False)
    return path

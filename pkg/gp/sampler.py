"""
Random-walk Metropolis-Hastings over the parameter posterior, MAP
extraction and chain diagnostics.

The sampler walks in an unconstrained state space; a target object maps
between that space and parameter values (`encode`/`decode`) and reports the
log-Jacobian of the map so the recorded trace is the log-posterior of the
parameters themselves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd

from core.exceptions import ContractViolationError, DomainError, InvalidStartError, ParseError
from core.seeding import make_rng
from gp.posterior import ParamVector

logger = logging.getLogger(__name__)

LOG_POSTERIOR_COLUMN = 'log_posterior'


class Target(Protocol):
    names: tuple[str, ...]

    def __call__(self, state: np.ndarray) -> float: ...

    def encode(self, values: np.ndarray) -> np.ndarray: ...

    def decode(self, state: np.ndarray) -> np.ndarray: ...

    def log_jacobian(self, state: np.ndarray) -> float: ...


@dataclass(frozen=True)
class DensityTarget:
    """A log-density sampled directly in its own coordinates."""
    log_density: Callable[[np.ndarray], float]
    names: tuple[str, ...] = ('x',)

    def __call__(self, state: np.ndarray) -> float:
        return float(self.log_density(state))

    def encode(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)

    def decode(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=float)

    def log_jacobian(self, state: np.ndarray) -> float:
        return 0.0


@dataclass(frozen=True)
class Adaptation:
    """Rescale proposals towards `target` acceptance, once per `window` burn-in steps."""
    target: float = 0.30
    window: int = 100

    def __post_init__(self) -> None:
        if not 0 < self.target < 1:
            raise DomainError(f"target acceptance must lie in (0, 1), got {self.target}")
        if self.window < 1:
            raise DomainError(f"adaptation window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class MHConfig:
    n_steps: int = 20000
    burn_in: int = 5000
    thin: int = 10
    proposal_scales: Union[float, tuple[float, ...]] = 0.05
    adapt: Optional[Adaptation] = field(default_factory=Adaptation)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < self.n_steps:
            raise DomainError(f"burn_in must satisfy 0 <= burn_in < n_steps, got {self.burn_in}/{self.n_steps}")
        if self.thin < 1:
            raise DomainError(f"thin must be >= 1, got {self.thin}")
        if np.any(np.asarray(self.proposal_scales, dtype=float) <= 0):
            raise DomainError("proposal scales must be positive")

    @property
    def n_retained(self) -> int:
        return (self.n_steps - self.burn_in) // self.thin

    def scales_for(self, dim: int) -> np.ndarray:
        scales = np.asarray(self.proposal_scales, dtype=float)
        if scales.ndim == 0:
            return np.full(dim, float(scales))
        if scales.shape != (dim,):
            raise ContractViolationError(f"{scales.shape[0]} proposal scales for {dim} parameters")
        return scales.copy()

    def to_dict(self) -> dict:
        scales = self.proposal_scales
        return {
            'n_steps': self.n_steps,
            'burn_in': self.burn_in,
            'thin': self.thin,
            'proposal_scales': list(scales) if isinstance(scales, tuple) else scales,
            'adapt': None if self.adapt is None else {'target': self.adapt.target, 'window': self.adapt.window},
            'seed': self.seed,
        }


@dataclass
class Chain:
    """Retained samples in parameter space, one row per sample."""
    names: tuple[str, ...]
    samples: np.ndarray
    log_posterior_trace: np.ndarray
    acceptance_rate: float
    final_scales: Optional[np.ndarray] = None
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def map_index(self) -> int:
        if len(self) == 0:
            raise ContractViolationError("chain is empty")
        return int(np.argmax(self.log_posterior_trace))

    def map_sample(self) -> np.ndarray:
        return self.samples[self.map_index]

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def param_vector(self, index: int) -> ParamVector:
        return ParamVector.from_array(self.names, self.samples[index])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.samples, columns=list(self.names))
        frame[LOG_POSTERIOR_COLUMN] = self.log_posterior_trace
        return frame


def run_mh(target: Target, init: Union[ParamVector, Sequence[float], np.ndarray], config: MHConfig) -> Chain:
    """Gaussian random-walk Metropolis-Hastings, reproducible from `config.seed`."""
    values = init.to_array() if isinstance(init, ParamVector) else np.asarray(init, dtype=float).reshape(-1)
    state = target.encode(values)
    current = target(state)
    if not math.isfinite(current):
        raise InvalidStartError(f"target density is zero at the initial point {values.tolist()}")

    dim = state.shape[0]
    scales = config.scales_for(dim)
    rng = make_rng(config.seed)
    steps = rng.standard_normal((config.n_steps, dim))
    uniforms = rng.random(config.n_steps)

    retained = np.empty((config.n_retained, dim))
    trace = np.empty(config.n_retained)
    kept = 0
    accepted_after_burn_in = 0
    window_accepts = 0
    windows_done = 0
    log_multiplier = 0.0
    multiplier = 1.0
    adapt = config.adapt

    for step in range(config.n_steps):
        proposal = state + multiplier * scales * steps[step]
        candidate = target(proposal)
        if math.isnan(candidate):
            candidate = -math.inf
        log_alpha = candidate - current
        accept = log_alpha >= 0 or uniforms[step] < math.exp(log_alpha)
        if accept:
            state = proposal
            current = candidate

        if step < config.burn_in:
            if adapt is not None:
                window_accepts += accept
                if (step + 1) % adapt.window == 0:
                    windows_done += 1
                    rate = window_accepts / adapt.window
                    log_multiplier += (rate - adapt.target) / math.sqrt(windows_done)
                    multiplier = math.exp(log_multiplier)
                    window_accepts = 0
                    logger.debug(f"Adapted proposal multiplier to {multiplier:.4g} (window acceptance {rate:.3f})")
            continue

        accepted_after_burn_in += accept
        if (step - config.burn_in + 1) % config.thin == 0:
            retained[kept] = target.decode(state)
            trace[kept] = current - target.log_jacobian(state)
            kept += 1

    acceptance = accepted_after_burn_in / (config.n_steps - config.burn_in)
    chain = Chain(
        names=tuple(target.names),
        samples=retained,
        log_posterior_trace=trace,
        acceptance_rate=acceptance,
        final_scales=multiplier * scales,
    )
    if accepted_after_burn_in == 0:
        message = "no proposal was accepted after burn-in; the chain did not move"
        chain.warnings.append(message)
        logger.warning(message)
    logger.info(f"MH finished: {kept} samples retained, acceptance {acceptance:.3f}")
    return chain


def map_estimate(chain: Chain) -> ParamVector:
    """The retained sample with the highest log-posterior."""
    if len(chain) == 0:
        raise ContractViolationError("cannot take the MAP of an empty chain")
    return chain.param_vector(chain.map_index)


@dataclass(frozen=True)
class ChainSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    correlation: np.ndarray
    degenerate: np.ndarray

    def correlation_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.correlation, index=list(self.names), columns=list(self.names))

    def correlation_between(self, a: str, b: str) -> float:
        return float(self.correlation[self.names.index(a), self.names.index(b)])


def chain_summary(chain: Chain) -> ChainSummary:
    """Mean, std and correlation of the retained samples, in parameter space."""
    n = len(chain)
    if n < 2:
        raise ContractViolationError(f"chain summary needs at least 2 samples, got {n}")
    samples = chain.samples
    mean = samples.mean(axis=0)
    std = samples.std(axis=0, ddof=1)
    centered = samples - mean
    covariance = centered.T @ centered / (n - 1)
    degenerate = ~(std > 0)
    safe = np.where(degenerate, 1.0, std)
    correlation = covariance / np.outer(safe, safe)
    correlation[degenerate, :] = 0.0
    correlation[:, degenerate] = 0.0
    correlation = np.clip(correlation, -1.0, 1.0)
    if degenerate.any():
        flat = [name for name, flag in zip(chain.names, degenerate) if flag]
        logger.warning(f"Constant parameter trace(s) {flat}; correlations reported as 0")
    return ChainSummary(names=chain.names, mean=mean, std=std, correlation=correlation, degenerate=degenerate)


def merge_chains(chains: Sequence[Chain]) -> Chain:
    """Pool several chains over the same parameters into one."""
    if not chains:
        raise ContractViolationError("no chains to merge")
    names = chains[0].names
    if any(c.names != names for c in chains):
        raise ContractViolationError("chains sample different parameters")
    weights = np.array([len(c) for c in chains], dtype=float)
    return Chain(
        names=names,
        samples=np.concatenate([c.samples for c in chains]),
        log_posterior_trace=np.concatenate([c.log_posterior_trace for c in chains]),
        acceptance_rate=float(np.average([c.acceptance_rate for c in chains], weights=weights)),
        warnings=[w for c in chains for w in c.warnings],
    )


def gelman_rubin(chains: Sequence[Chain]) -> np.ndarray:
    """Potential scale reduction per parameter; NaN where within-chain variance is zero."""
    if len(chains) < 2:
        raise ContractViolationError("R-hat needs at least two chains")
    n = min(len(c) for c in chains)
    if n < 2:
        raise ContractViolationError("R-hat needs at least two samples per chain")
    stacked = np.stack([c.samples[:n] for c in chains])
    within = stacked.var(axis=1, ddof=1).mean(axis=0)
    between = n * stacked.mean(axis=1).var(axis=0, ddof=1)
    pooled = (n - 1) / n * within + between / n
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(within > 0, np.sqrt(pooled / within), np.nan)


def write_chain_csv(chain: Chain, path: Union[str, Path]) -> Path:
    path = Path(path)
    chain.to_frame().to_csv(path, index=False, float_format='%.17g')
    return path


def read_chain_csv(path: Union[str, Path], acceptance_rate: Optional[float] = None) -> Chain:
    """
    Load a chain written by write_chain_csv. Without a recorded acceptance rate
    the fraction of retained transitions that moved is used instead.
    """
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty; a header row is required", line=1) from None
    except pd.errors.ParserError as e:
        raise ParseError(f"{path} is not a valid chain CSV: {e}") from e
    if LOG_POSTERIOR_COLUMN not in frame.columns:
        raise ParseError(f"{path} has no '{LOG_POSTERIOR_COLUMN}' column", line=1)
    if frame.empty:
        raise ParseError(f"{path} holds no samples", line=2)
    names = tuple(c for c in frame.columns if c != LOG_POSTERIOR_COLUMN)
    try:
        samples = frame[list(names)].to_numpy(dtype=float)
        trace = frame[LOG_POSTERIOR_COLUMN].to_numpy(dtype=float)
    except ValueError as e:
        raise ParseError(f"{path} holds a non-numeric sample: {e}") from e
    if acceptance_rate is None:
        moved = np.any(np.diff(samples, axis=0) != 0, axis=1)
        acceptance_rate = float(moved.mean()) if moved.size else 0.0
    return Chain(
        names=names,
        samples=samples,
        log_posterior_trace=trace,
        acceptance_rate=acceptance_rate,
    )


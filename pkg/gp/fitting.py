"""
The fit pipeline: prior from the reference stiffness, heuristic starting
point, one or more MH chains and the posterior summaries reported by `fit`.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from core.exceptions import ConfigError, DomainError, InvalidStartError
from core.seeding import derive_seed
from gp.covariance import JitterPolicy
from gp.dataset import LearnableNoise, Problem
from gp.kernel import DEFAULT_CONVENTION, QuantityKind, SignConvention
from gp.posterior import LogSpaceTarget, ParamVector, PriorSpec, noise_name, set_key_from_name
from gp.sampler import (
    Adaptation,
    Chain,
    ChainSummary,
    MHConfig,
    chain_summary,
    gelman_rubin,
    map_estimate,
    merge_chains,
    run_mh,
)

logger = logging.getLogger(__name__)

INIT_NOISE_FRACTION = 0.1


@dataclass(frozen=True)
class FitConfig:
    mh: MHConfig = field(default_factory=MHConfig)
    n_chains: int = 1
    threads: int = 1
    normalize: bool = False
    ei_factors: tuple[float, float] = (0.1, 2.0)
    jitter: JitterPolicy = field(default_factory=JitterPolicy)
    convention: SignConvention = DEFAULT_CONVENTION

    def __post_init__(self) -> None:
        if self.n_chains < 1:
            raise ConfigError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        low, high = self.ei_factors
        if not 0 < low < high:
            raise ConfigError(f"EI prior factors must satisfy 0 < lower < upper, got {self.ei_factors}")

    def to_dict(self) -> dict:
        return {
            'mh': self.mh.to_dict(),
            'n_chains': self.n_chains,
            'threads': self.threads,
            'normalize': self.normalize,
            'ei_factors': list(self.ei_factors),
            'jitter': {'initial': self.jitter.initial, 'growth': self.jitter.growth, 'maximum': self.jitter.maximum},
        }


def set_scales(problem: Problem) -> dict[str, float]:
    """Per-set normalization: max |value| for measured sets, 1 for virtual ones."""
    return {obs.key: 1.0 if obs.virtual else obs.value_scale() for obs in problem.all_sets}


def _normalized_prior(prior: PriorSpec, scales: dict[str, float]) -> PriorSpec:
    bounds = dict(prior.bounds)
    for name, (lower, upper) in prior.bounds.items():
        key = set_key_from_name(name)
        if key is not None:
            bounds[name] = (lower / scales[key], upper / scales[key])
    return PriorSpec(bounds=bounds)


def initial_params(problem: Problem, ei_ref: float, scales: Optional[dict[str, float]] = None) -> ParamVector:
    """
    sigma_s from the spread of the deflection data (all measured data without
    any), ell = L/2, EI = EI_ref, sigma_a = 10% of each set's spread.
    """
    measured = [obs for obs in problem.observation_sets if not obs.virtual]
    deflections = [obs for obs in measured if obs.kind is QuantityKind.DEFLECTION] or measured
    pooled = np.concatenate([obs.y for obs in deflections]) if deflections else np.zeros(1)
    sigma_s = float(np.std(pooled)) or float(np.max(np.abs(pooled))) or 1.0

    noises = {}
    for obs in problem.learnable_sets:
        scale = 1.0 if scales is None else scales[obs.key]
        spread = float(np.std(obs.y / scale)) or obs.value_scale() / scale
        sigma = INIT_NOISE_FRACTION * spread
        assert isinstance(obs.noise, LearnableNoise)
        lower, upper = obs.noise.lower / scale, obs.noise.upper / scale
        if not lower < sigma < upper:
            sigma = (lower + upper) / 2 if math.isfinite(upper) else max(2 * lower, sigma)
        noises[obs.key] = sigma
    return ParamVector(sigma_s=sigma_s, ell=problem.length / 2, ei=ei_ref, noise_sigmas=noises)


@dataclass
class FitResult:
    problem: Problem
    ei_ref: float
    prior: PriorSpec
    chains: list[Chain]
    chain: Chain
    config: FitConfig
    rhat: Optional[np.ndarray] = None

    @property
    def map_params(self) -> ParamVector:
        return map_estimate(self.chain)

    def summary(self) -> ChainSummary:
        return chain_summary(self.chain)

    @property
    def ei_samples(self) -> np.ndarray:
        return self.chain.column('ei')

    @property
    def ei_mean(self) -> float:
        return float(np.mean(self.ei_samples))

    @property
    def ei_std(self) -> float:
        return float(np.std(self.ei_samples, ddof=1))

    @property
    def percent_change(self) -> float:
        """Change of the posterior mean stiffness relative to EI_ref, in percent."""
        return 100.0 * (self.ei_mean / self.ei_ref - 1.0)

    def noise_report(self) -> pd.DataFrame:
        """Posterior noise per learnable set, least trustworthy (lowest SNR) first."""
        rows = []
        for obs in self.problem.learnable_sets:
            sigma = float(np.mean(self.chain.column(noise_name(obs.key))))
            peak = float(np.max(np.abs(obs.y)))
            rows.append({
                'set': obs.key,
                'n_points': obs.size,
                'sigma_mean': sigma,
                'sigma_std': float(np.std(self.chain.column(noise_name(obs.key)), ddof=1)),
                'implied_snr': peak / sigma if sigma > 0 else math.inf,
            })
        frame = pd.DataFrame(rows, columns=['set', 'n_points', 'sigma_mean', 'sigma_std', 'implied_snr'])
        return frame.sort_values('implied_snr', kind='stable').reset_index(drop=True)

    def rhat_dict(self) -> Optional[dict[str, float]]:
        if self.rhat is None:
            return None
        return {name: float(value) for name, value in zip(self.chain.names, self.rhat)}


def _to_raw_units(chain: Chain, scales: dict[str, float]) -> Chain:
    factors = np.array([
        scales[key] if (key := set_key_from_name(name)) is not None else 1.0
        for name in chain.names
    ])
    return replace(chain, samples=chain.samples * factors)


def _start_error(target: LogSpaceTarget, init: ParamVector) -> InvalidStartError:
    violations = target.prior.describe_violations(init)
    if violations:
        names = [v.split('=', 1)[0] for v in violations]
        return InvalidStartError(
            f"initial point lies outside the prior: {'; '.join(violations)}; "
            f"widen the prior bounds or adjust the reference stiffness",
            offending=names,
        )
    return InvalidStartError(
        "covariance is singular at the initial point; check the beam length and data scale",
    )


def fit_problem(
    problem: Problem,
    config: FitConfig,
    ei_ref: Optional[float] = None,
    init: Optional[ParamVector] = None,
) -> FitResult:
    """Sample the parameter posterior of `problem` and pool the chains."""
    ei_ref = ei_ref if ei_ref is not None else problem.ei_ref
    if ei_ref is None:
        raise ConfigError("a reference stiffness (ei_ref) is required to set the EI prior")
    if not ei_ref > 0:
        raise ConfigError(f"reference stiffness must be positive, got {ei_ref}")

    prior = PriorSpec.for_problem(problem, ei_ref, config.ei_factors)
    scales = set_scales(problem) if config.normalize else None
    sampled_prior = prior if scales is None else _normalized_prior(prior, scales)
    target = LogSpaceTarget.for_problem(
        problem,
        sampled_prior,
        convention=config.convention,
        jitter_policy=config.jitter,
        scales=scales,
    )
    start = init if init is not None else initial_params(problem, ei_ref, scales)
    if not math.isfinite(target(target.encode(start.to_array()))):
        raise _start_error(target, start)

    mh_configs = [
        replace(config.mh, seed=config.mh.seed if config.n_chains == 1 else derive_seed(config.mh.seed, i))
        for i in range(config.n_chains)
    ]
    logger.info(
        f"Fitting {problem.n_observations} observations with {len(target.names)} parameters, "
        f"{config.n_chains} chain(s) of {config.mh.n_steps} steps"
    )
    if config.n_chains > 1 and config.threads > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, config.n_chains)) as pool:
            chains = list(pool.map(lambda c: run_mh(target, start, c), mh_configs))
    else:
        chains = [run_mh(target, start, c) for c in mh_configs]

    if scales is not None:
        chains = [_to_raw_units(c, scales) for c in chains]
    rhat = gelman_rubin(chains) if len(chains) > 1 else None
    pooled = merge_chains(chains) if len(chains) > 1 else chains[0]
    return FitResult(
        problem=problem,
        ei_ref=ei_ref,
        prior=prior,
        chains=chains,
        chain=pooled,
        config=config,
        rhat=rhat,
    )


FIT_OPTION_TYPES: dict[str, tuple[type, ...]] = {
    'mh_steps': (int,),
    'mh_burn_in': (int,),
    'mh_thin': (int,),
    'proposal_scale': (int, float),
    'target_acceptance': (int, float),
    'adapt_window': (int,),
    'no_adapt': (bool,),
    'ei_prior_lower': (int, float),
    'ei_prior_upper': (int, float),
    'chains': (int,),
    'normalize': (bool,),
}


def fit_option_defaults() -> dict:
    """Sampler and prior options as the commands expose them, from settings."""
    from django.conf import settings
    return {
        'mh_steps': settings.MH_N_STEPS,
        'mh_burn_in': settings.MH_BURN_IN,
        'mh_thin': settings.MH_THIN,
        'proposal_scale': settings.MH_PROPOSAL_SCALE,
        'target_acceptance': settings.MH_TARGET_ACCEPTANCE,
        'adapt_window': settings.MH_ADAPT_WINDOW,
        'no_adapt': False,
        'ei_prior_lower': settings.EI_PRIOR_FACTORS[0],
        'ei_prior_upper': settings.EI_PRIOR_FACTORS[1],
        'chains': 1,
        'normalize': False,
    }


def fit_config_from_options(options: dict, seed: int, threads: int = 1) -> FitConfig:
    try:
        adapt = None if options['no_adapt'] else Adaptation(
            target=float(options['target_acceptance']),
            window=int(options['adapt_window']),
        )
        mh = MHConfig(
            n_steps=int(options['mh_steps']),
            burn_in=int(options['mh_burn_in']),
            thin=int(options['mh_thin']),
            proposal_scales=float(options['proposal_scale']),
            adapt=adapt,
            seed=seed,
        )
    except DomainError as e:
        raise ConfigError(f"invalid sampler options: {e}") from e
    return FitConfig(
        mh=mh,
        n_chains=int(options['chains']),
        threads=threads,
        normalize=bool(options['normalize']),
        ei_factors=(float(options['ei_prior_lower']), float(options['ei_prior_upper'])),
        jitter=JitterPolicy.from_settings(),
    )

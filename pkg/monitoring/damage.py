"""
Stiffness-based damage scoring and the two parameter studies.

A fit's stiffness posterior is normalized by the reference stiffness and
scored by its Mahalanobis distance from 1. The studies sweep a rectangular
grid (SNR x readings per sensor, or damaged element x stiffness reduction),
repeat every cell over several seeds and report the median per cell.

Supports:
- resume: runs already present in the long-form CSV are skipped, keyed by
  `<study>:<axis1>:<axis2>:<seed>`
- durability: every finished run is appended to the long-form CSV at once
"""
from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from beams.oracle import BeamSpec, SensorPlan, TruthModel, synth_dataset
from core.exceptions import BeamGPError, ContractViolationError, DegeneratePosteriorError, DomainError
from core.seeding import derive_seed
from gp.dataset import format_number
from gp.fitting import FitConfig, fit_problem
from gp.kernel import QuantityKind

logger = logging.getLogger(__name__)

RUN_COLUMNS = ['axis1', 'axis2', 'seed', 'd_m', 'mu_ei', 'sigma_ei', 'error']
SUMMARY_COLUMNS = ['axis1', 'axis2', 'd_m', 'mu_ei', 'sigma_ei', 'n_runs', 'n_failed', 'flagged']
DEFAULT_SNRS = (math.inf, 100.0, 10.0, 5.0)
DEFAULT_POINTS = (1, 5, 20)
DEFAULT_REDUCTIONS = (0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class StiffnessPosterior:
    """Stiffness posterior normalized by the reference: N(mu_ei, sigma_ei) in units of EI_ref."""
    mu_ei: float
    sigma_ei: float
    ei_mean: float
    ei_std: float
    ei_ref: float
    n_samples: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_ei) and self.sigma_ei >= 0):
            raise DomainError(f"sigma_ei must be finite and >= 0, got {self.sigma_ei}")
        if not self.ei_ref > 0:
            raise DomainError(f"reference stiffness must be positive, got {self.ei_ref}")

    @classmethod
    def from_samples(cls, samples, ei_ref: float) -> StiffnessPosterior:
        samples = np.asarray(samples, dtype=float)
        if samples.size < 2:
            raise ContractViolationError("a stiffness posterior needs at least 2 samples")
        mean = float(np.mean(samples))
        std = float(np.std(samples, ddof=1))
        return cls(
            mu_ei=mean / ei_ref,
            sigma_ei=std / ei_ref,
            ei_mean=mean,
            ei_std=std,
            ei_ref=ei_ref,
            n_samples=samples.size,
        )

    def as_dict(self) -> dict[str, float]:
        return {
            'mu_ei': self.mu_ei,
            'sigma_ei': self.sigma_ei,
            'ei_mean': self.ei_mean,
            'ei_std': self.ei_std,
            'ei_ref': self.ei_ref,
            'percent_change': 100.0 * (self.mu_ei - 1.0),
        }


def mahalanobis(post: StiffnessPosterior) -> float:
    """d_M = |mu_ei - 1| / sigma_ei."""
    if post.sigma_ei == 0:
        raise DegeneratePosteriorError("stiffness posterior has zero spread; d_M is undefined")
    return abs(post.mu_ei - 1.0) / post.sigma_ei


class StudyKind(str, Enum):
    NOISE = 'noise'
    DAMAGE = 'damage'

    @property
    def axis_names(self) -> tuple[str, str]:
        if self is StudyKind.NOISE:
            return ('snr', 'n_dp')
        return ('element', 'reduction')


def _build_idempotency_key(study: StudyKind, axis1, axis2, seed: int) -> str:
    """
    Unique key of one study run.

    Format: {study}:{axis1}:{axis2}:{seed}
    """
    return f"{study.value}:{format_number(axis1)}:{format_number(axis2)}:{seed}"


@dataclass(frozen=True)
class StudyRun:
    study: StudyKind
    axis1: float
    axis2: float
    seed: int
    d_m: float = math.nan
    mu_ei: float = math.nan
    sigma_ei: float = math.nan
    error: str = ''

    @property
    def key(self) -> str:
        return _build_idempotency_key(self.study, self.axis1, self.axis2, self.seed)

    @property
    def failed(self) -> bool:
        return bool(self.error)

    def as_row(self) -> dict:
        return {
            'axis1': self.axis1,
            'axis2': self.axis2,
            'seed': self.seed,
            'd_m': self.d_m,
            'mu_ei': self.mu_ei,
            'sigma_ei': self.sigma_ei,
            'error': self.error,
        }


@dataclass
class StudyCell:
    axis1: float
    axis2: float
    runs: list[StudyRun] = field(default_factory=list)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    @property
    def succeeded(self) -> list[StudyRun]:
        return [r for r in self.runs if not r.failed]

    @property
    def n_failed(self) -> int:
        return len(self.runs) - len(self.succeeded)

    @property
    def flagged(self) -> bool:
        """More than half of the runs failed."""
        return self.n_failed * 2 > len(self.runs)

    def median(self, attribute: str) -> float:
        values = [getattr(r, attribute) for r in self.succeeded]
        return float(np.median(values)) if values else math.nan

    @property
    def d_m(self) -> float:
        return self.median('d_m')

    @property
    def mu_ei(self) -> float:
        return self.median('mu_ei')

    @property
    def sigma_ei(self) -> float:
        return self.median('sigma_ei')


@dataclass
class StudyGrid:
    study: StudyKind
    axis1_values: tuple[float, ...]
    axis2_values: tuple[float, ...]
    cells: dict[tuple[float, float], StudyCell] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for a in self.axis1_values:
            for b in self.axis2_values:
                self.cells.setdefault((a, b), StudyCell(a, b))

    def cell(self, axis1: float, axis2: float) -> StudyCell:
        return self.cells[(axis1, axis2)]

    def add(self, run: StudyRun) -> None:
        self.cell(run.axis1, run.axis2).runs.append(run)

    @property
    def flagged_cells(self) -> list[StudyCell]:
        return [c for c in self.cells.values() if c.flagged]

    def long_frame(self) -> pd.DataFrame:
        rows = [
            run.as_row()
            for key in self.ordered_keys()
            for run in sorted(self.cells[key].runs, key=lambda r: r.seed)
        ]
        return pd.DataFrame(rows, columns=RUN_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for key in self.ordered_keys():
            cell = self.cells[key]
            rows.append({
                'axis1': cell.axis1,
                'axis2': cell.axis2,
                'd_m': cell.d_m,
                'mu_ei': cell.mu_ei,
                'sigma_ei': cell.sigma_ei,
                'n_runs': len(cell.runs),
                'n_failed': cell.n_failed,
                'flagged': cell.flagged,
            })
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    def ordered_keys(self) -> list[tuple[float, float]]:
        return [(a, b) for a in self.axis1_values for b in self.axis2_values]


class StudyStore:
    """Long-form and summary CSVs of one study in an output directory."""

    def __init__(self, directory: Path, study: StudyKind):
        self.directory = Path(directory)
        self.study = study
        self._lock = threading.Lock()

    @property
    def runs_path(self) -> Path:
        return self.directory / f"{self.study.value}_runs.csv"

    @property
    def summary_path(self) -> Path:
        return self.directory / f"{self.study.value}_summary.csv"

    def completed(self) -> dict[str, StudyRun]:
        """Runs already on disk, by idempotency key; failed runs are retried."""
        if not self.runs_path.exists():
            return {}
        frame = pd.read_csv(self.runs_path, float_precision='round_trip')
        frame['error'] = frame['error'].fillna('')
        runs = {}
        for row in frame.itertuples(index=False):
            if str(row.error):
                continue
            run = StudyRun(
                study=self.study,
                axis1=float(row.axis1),
                axis2=float(row.axis2),
                seed=int(row.seed),
                d_m=float(row.d_m),
                mu_ei=float(row.mu_ei),
                sigma_ei=float(row.sigma_ei),
            )
            runs[run.key] = run
        return runs

    def append(self, run: StudyRun) -> None:
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            header = not self.runs_path.exists()
            pd.DataFrame([run.as_row()], columns=RUN_COLUMNS).to_csv(
                self.runs_path, mode='a', header=header, index=False, float_format='%.17g',
            )

    def write(self, grid: StudyGrid) -> tuple[Path, Path]:
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            grid.long_frame().to_csv(self.runs_path, index=False, float_format='%.17g')
            grid.summary_frame().to_csv(self.summary_path, index=False, float_format='%.17g')
        return self.runs_path, self.summary_path


@dataclass(frozen=True)
class StudyJob:
    axis1: float
    axis2: float
    replicate: int
    data_seed: int
    fit_seed: int
    run: Callable[[StudyJob], tuple[float, float, float]] = field(repr=False, compare=False)


def _job_seeds(seed: int, i: int, j: int, replicate: int) -> tuple[int, int]:
    return derive_seed(seed, i, j, replicate, 0), derive_seed(seed, i, j, replicate, 1)


def _execute(study: StudyKind, job: StudyJob) -> StudyRun:
    try:
        d_m, mu, sigma = job.run(job)
    except (BeamGPError, ArithmeticError) as e:
        logger.error(
            f"{study.value} run ({job.axis1}, {job.axis2}) seed {job.data_seed} failed: {e}",
            exc_info=True,
        )
        return StudyRun(study, job.axis1, job.axis2, job.data_seed, error=str(e) or type(e).__name__)
    logger.info(f"{study.value} run ({job.axis1}, {job.axis2}) seed {job.data_seed}: d_M={d_m:.4g}")
    return StudyRun(study, job.axis1, job.axis2, job.data_seed, d_m=d_m, mu_ei=mu, sigma_ei=sigma)


def run_study(
    study: StudyKind,
    axis1_values: Sequence[float],
    axis2_values: Sequence[float],
    jobs: Sequence[StudyJob],
    threads: int = 1,
    store: Optional[StudyStore] = None,
    resume: bool = False,
) -> StudyGrid:
    """Execute every job not already completed; results do not depend on execution order."""
    grid = StudyGrid(study, tuple(axis1_values), tuple(axis2_values))
    done = store.completed() if (store is not None and resume) else {}
    pending = []
    for job in jobs:
        key = _build_idempotency_key(study, job.axis1, job.axis2, job.data_seed)
        if key in done:
            logger.debug(f"Skipping completed run {key}")
            grid.add(done[key])
        else:
            pending.append(job)
    if done:
        logger.info(f"Resuming {study.value} study: {len(jobs) - len(pending)} run(s) already complete")

    def execute(job: StudyJob) -> StudyRun:
        run = _execute(study, job)
        if store is not None:
            store.append(run)
        return run

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            finished = list(pool.map(execute, pending))
    else:
        finished = [execute(job) for job in pending]
    for run in finished:
        grid.add(run)

    if store is not None:
        store.write(grid)
    for cell in grid.flagged_cells:
        logger.warning(f"Cell ({cell.axis1}, {cell.axis2}) failed in {cell.n_failed} of {len(cell.runs)} runs")
    return grid


def _score(spec: BeamSpec, plan: SensorPlan, truth: TruthModel, fit_config: FitConfig,
           fit_seed: int, ei_true: float, fiber_distance: Optional[float]) -> tuple[float, float, float]:
    problem = synth_dataset(spec, plan, truth, fiber_distance=fiber_distance, ei_ref=ei_true)
    config = replace(fit_config, mh=replace(fit_config.mh, seed=fit_seed))
    fit = fit_problem(problem, config, ei_ref=ei_true)
    post = StiffnessPosterior.from_samples(fit.ei_samples, ei_true)
    return mahalanobis(post), post.mu_ei, post.sigma_ei


def noise_study(
    spec: BeamSpec,
    positions: Mapping[QuantityKind, Sequence[float]],
    snr_list: Sequence[float],
    ndp_list: Sequence[int],
    seeds: int,
    fit_config: FitConfig,
    seed: int = 0,
    truth: TruthModel = TruthModel.ANALYTIC,
    load_points: int = 9,
    fiber_distance: Optional[float] = None,
    threads: int = 1,
    store: Optional[StudyStore] = None,
    resume: bool = False,
) -> StudyGrid:
    """d_M over an SNR x readings-per-sensor grid, `seeds` replicates per cell."""
    if not snr_list or not ndp_list:
        raise ContractViolationError("noise study needs nonempty SNR and N_dp lists")
    if seeds < 1:
        raise ContractViolationError(f"seeds per cell must be >= 1, got {seeds}")
    ei_true = spec.uniform_ei

    def run(job: StudyJob) -> tuple[float, float, float]:
        plan = SensorPlan(
            positions=positions,
            points_per_sensor=int(job.axis2),
            snr=job.axis1,
            seed=job.data_seed,
            load_points=load_points,
        )
        return _score(spec, plan, truth, fit_config, job.fit_seed, ei_true, fiber_distance)

    jobs = []
    for i, snr in enumerate(snr_list):
        for j, ndp in enumerate(ndp_list):
            for replicate in range(seeds):
                data_seed, fit_seed = _job_seeds(seed, i, j, replicate)
                jobs.append(StudyJob(float(snr), float(ndp), replicate, data_seed, fit_seed, run))
    return run_study(StudyKind.NOISE, [float(s) for s in snr_list], [float(n) for n in ndp_list],
                     jobs, threads, store, resume)


def damage_study(
    spec: BeamSpec,
    positions: Mapping[QuantityKind, Sequence[float]],
    fit_config: FitConfig,
    elements: Optional[Sequence[int]] = None,
    reductions: Sequence[float] = DEFAULT_REDUCTIONS,
    seeds: int = 5,
    snr: float = 10.0,
    points_per_sensor: int = 5,
    seed: int = 0,
    load_points: int = 9,
    fiber_distance: Optional[float] = None,
    threads: int = 1,
    store: Optional[StudyStore] = None,
    resume: bool = False,
) -> StudyGrid:
    """
    d_M of a uniform-EI fit to FE data of a beam with one weakened element,
    normalized by the undamaged stiffness, over element x reduction.
    """
    ei_true = spec.uniform_ei
    elements = list(elements) if elements is not None else list(range(1, spec.n_elements + 1))
    if not elements or not reductions:
        raise ContractViolationError("damage study needs nonempty element and reduction lists")
    for reduction in reductions:
        if not 0 <= reduction < 1:
            raise DomainError(f"stiffness reduction must lie in [0, 1), got {reduction}")

    def run(job: StudyJob) -> tuple[float, float, float]:
        damaged = spec.with_damage(int(job.axis1), job.axis2)
        plan = SensorPlan(
            positions=positions,
            points_per_sensor=points_per_sensor,
            snr=snr,
            seed=job.data_seed,
            load_points=load_points,
        )
        return _score(damaged, plan, TruthModel.FE, fit_config, job.fit_seed, ei_true, fiber_distance)

    jobs = []
    for i, element in enumerate(elements):
        for j, reduction in enumerate(reductions):
            for replicate in range(seeds):
                data_seed, fit_seed = _job_seeds(seed, i, j, replicate)
                jobs.append(StudyJob(float(element), float(reduction), replicate, data_seed, fit_seed, run))
    return run_study(StudyKind.DAMAGE, [float(e) for e in elements], [float(r) for r in reductions],
                     jobs, threads, store, resume)


def severity_correlation(grid: StudyGrid, element: float) -> float:
    """Spearman correlation between reduction and d_M over every successful run at `element`."""
    if grid.study is not StudyKind.DAMAGE:
        raise ContractViolationError("severity correlation applies to damage studies")
    pairs = [
        (run.axis2, run.d_m)
        for key in grid.ordered_keys() if key[0] == element
        for run in grid.cells[key].succeeded
    ]
    if len(pairs) < 3:
        raise ContractViolationError("need at least 3 successful runs for a rank correlation")
    reductions, distances = zip(*pairs)
    rho, _ = spearmanr(reductions, distances)
    return float(rho)

"""Monte-Carlo experiment engine.

A sweep runs ``trials`` noise realizations at every SNR of the list. All
methods of a trial see the same ``(A, x0, y)``; per-trial seeds come from
``SeedSequence([master, snr_index, trial])`` so a report depends only on the
sweep definition. Failed trials are kept as records, excluded from the
means, and fail the method once they exceed ``FAILURE_TOLERANCE``.
"""

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel
from scipy import stats
from tqdm import tqdm

from copra.config import settings
from copra.models import GammaGrid, IllPosedProblem, NoisyObservation, SvdFactors
from copra.schemas import (
    BoundCovariance,
    BoundPoint,
    BoundReport,
    CopraConfig,
    MethodAggregate,
    MethodId,
    ProblemSpec,
    Provenance,
    RuntimeEntry,
    RuntimeReport,
    SweepReport,
    SweepSpec,
    TomoMethodSummary,
    TomoReport,
    TrialRecord,
    X0Distribution,
)

from . import baselines, diagnostics, problems, regularizer, tomography
from .spectral import compute_svd, partition

logger = logging.getLogger(__name__)

TOMO_METHODS = [MethodId.COPRA, MethodId.QUASIOPT, MethodId.LCURVE, MethodId.GCV]


def build_problem(spec: ProblemSpec, seed: Optional[int] = None) -> IllPosedProblem:
    """Instantiate ``spec``; ``seed`` overrides ``spec.seed`` for the random families."""
    seed = spec.seed if seed is None else seed
    params = spec.params
    if spec.name == "rank_deficient":
        r = int(params.get("r", spec.n - 5))
        return problems.rank_deficient(spec.n, r, seed, params.get("dist", X0Distribution.GAUSSIAN))
    if spec.name == "full_rank":
        m = int(params.get("m", 2 * spec.n))
        return problems.full_rank(m, spec.n, seed, params.get("dist", X0Distribution.GAUSSIAN))
    if spec.name == "tomo":
        n_rays = params.get("n_rays")
        return problems.tomo(spec.n, None if n_rays is None else int(n_rays), seed)
    return problems.generate(spec.name, spec.n, params)


def second_moment(problem: IllPosedProblem) -> NDArray[np.float64]:
    """``E[x0 x0^T]`` for the random families, a trace-matched white matrix otherwise."""
    n = problem.n
    dist = problem.meta.get("dist")
    if dist == X0Distribution.GAUSSIAN.value:
        return np.eye(n)
    if dist == X0Distribution.UNIFORM.value:
        return np.full((n, n), 0.25) + np.eye(n) / 12.0
    x0 = problem.x0
    return float(x0 @ x0) / n * np.eye(n)


def config_hash(model: Union[BaseModel, dict]) -> str:
    data = model.model_dump(mode="json") if isinstance(model, BaseModel) else model
    payload = json.dumps(data, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def input_digest(problem: IllPosedProblem, y: NDArray[np.float64]) -> str:
    digest = hashlib.sha256()
    for array in (problem.a, problem.x0, y):
        digest.update(np.ascontiguousarray(array, dtype=np.float64).tobytes())
    return digest.hexdigest()


def trial_seeds(master: int, snr_index: int, trial: int) -> Tuple[int, int]:
    """(noise seed, problem seed) of one trial."""
    noise, draw = np.random.SeedSequence([master, snr_index, trial]).generate_state(2)
    return int(noise), int(draw)


@dataclass(frozen=True)
class MethodRun:
    x_hat: NDArray[np.float64]
    runtime_ns: int
    branch: str = ""


@dataclass(frozen=True)
class TrialInputs:
    problem: IllPosedProblem
    svd: SvdFactors
    grid: GammaGrid
    r_x0: NDArray[np.float64]
    observation: NoisyObservation
    digest: str


@dataclass
class _SweepContext:
    spec: SweepSpec
    cfg: CopraConfig
    shared: Optional[Tuple[IllPosedProblem, SvdFactors, GammaGrid, NDArray[np.float64]]] = None


def _prepare(problem: IllPosedProblem, grid_points: int):
    svd = compute_svd(problem.a)
    return problem, svd, baselines.gamma_grid(svd.sigma_max, grid_points), second_moment(problem)


def run_method(method: MethodId, inputs: TrialInputs, cfg: CopraConfig) -> MethodRun:
    """Estimate ``x0`` with ``method``; the shared SVD is not part of the timing."""
    svd, y = inputs.svd, inputs.observation.y
    branch = ""
    start = time.perf_counter_ns()
    if method == MethodId.COPRA:
        result = regularizer.estimate(svd, y, cfg)
        x_hat, branch = result.x_hat, result.branch.value
    elif method == MethodId.OLS:
        x_hat = baselines.ols_solve(svd, y)
    elif method == MethodId.LMMSE:
        x_hat = baselines.lmmse_oracle(svd, y, inputs.r_x0, inputs.observation.sigma_z2)
    else:
        selection = baselines.select(method, svd, y, inputs.grid)
        x_hat = regularizer.rls_solve(svd, y, selection.gamma)
        branch = "endpoint" if selection.at_endpoint else ""
    elapsed = max(time.perf_counter_ns() - start, 1)
    return MethodRun(x_hat=x_hat, runtime_ns=elapsed, branch=branch)


def trial_inputs(ctx: _SweepContext, snr_index: int, trial: int) -> TrialInputs:
    spec = ctx.spec
    noise_seed, problem_seed = trial_seeds(spec.seed, snr_index, trial)
    if ctx.shared is None:
        prepared = _prepare(build_problem(spec.problem, seed=problem_seed), spec.grid_points)
    else:
        prepared = ctx.shared
    problem, svd, grid, r_x0 = prepared
    observation = problems.observe(problem, spec.snr_db_list[snr_index], noise_seed)
    return TrialInputs(problem, svd, grid, r_x0, observation, input_digest(problem, observation.y))


def _run_trial(ctx: _SweepContext, snr_index: int, trial: int) -> List[TrialRecord]:
    spec = ctx.spec
    snr_db = spec.snr_db_list[snr_index]
    noise_seed, _ = trial_seeds(spec.seed, snr_index, trial)

    try:
        inputs = trial_inputs(ctx, snr_index, trial)
    except Exception as e:
        logger.error(f"Trial {trial} at {snr_db} dB: could not build inputs: {e}")
        error = f"{type(e).__name__}: {e}"
        return [
            TrialRecord(method=m, snr_db=snr_db, trial=trial, seed=noise_seed, nmse=float("nan"),
                        runtime_ns=0, failed=True, error=error)
            for m in spec.methods
        ]

    records = []
    for method in spec.methods:
        try:
            run = run_method(method, inputs, ctx.cfg)
            if not np.all(np.isfinite(run.x_hat)):
                raise FloatingPointError("estimate has non-finite entries")
            records.append(
                TrialRecord(
                    method=method,
                    snr_db=snr_db,
                    trial=trial,
                    seed=noise_seed,
                    nmse=problems.nmse(run.x_hat, inputs.problem.x0),
                    runtime_ns=run.runtime_ns,
                    branch=run.branch,
                    input_digest=inputs.digest,
                )
            )
        except Exception as e:
            logger.debug(f"{method.value} failed on trial {trial} at {snr_db} dB: {e}")
            records.append(
                TrialRecord(
                    method=method,
                    snr_db=snr_db,
                    trial=trial,
                    seed=noise_seed,
                    nmse=float("nan"),
                    runtime_ns=0,
                    failed=True,
                    error=f"{type(e).__name__}: {e}",
                    input_digest=inputs.digest,
                )
            )
    return records


def to_db(value: float) -> float:
    if value > 0:
        return float(10.0 * np.log10(value))
    return float("-inf") if value == 0 else float("nan")


def aggregate(records: Iterable[TrialRecord], snr_db_list: Sequence[float], methods: Sequence[MethodId]) -> List[MethodAggregate]:
    """Mean-then-dB aggregation, ordered by SNR then by method."""
    groups: Dict[Tuple[MethodId, float], List[TrialRecord]] = {}
    for record in records:
        groups.setdefault((record.method, record.snr_db), []).append(record)

    aggregates = []
    for snr_db in snr_db_list:
        for method in methods:
            group = groups.get((method, snr_db), [])
            ok = [r for r in group if not r.failed]
            mean_nmse = float(np.mean([r.nmse for r in ok])) if ok else float("nan")
            mean_runtime = float(np.mean([r.runtime_ns for r in ok])) if ok else float("nan")
            aggregates.append(
                MethodAggregate(
                    method=method,
                    snr_db=snr_db,
                    trials=len(ok),
                    failed=len(group) - len(ok),
                    mean_nmse=mean_nmse,
                    nmse_db=to_db(mean_nmse),
                    mean_runtime_ns=mean_runtime,
                )
            )
    return aggregates


def failed_methods(records: Sequence[TrialRecord], methods: Sequence[MethodId]) -> List[MethodId]:
    failing = []
    for method in methods:
        own = [r for r in records if r.method == method]
        failures = sum(r.failed for r in own)
        if own and failures / len(own) > settings.FAILURE_TOLERANCE:
            logger.warning(f"{method.value} failed {failures} of {len(own)} trials")
            failing.append(method)
    return failing


def _context(spec: SweepSpec) -> _SweepContext:
    ctx = _SweepContext(spec=spec, cfg=CopraConfig(c=spec.c))
    if not spec.regenerate:
        ctx.shared = _prepare(build_problem(spec.problem), spec.grid_points)
    return ctx


def run_sweep(spec: SweepSpec, jobs: Optional[int] = None, progress: bool = True) -> SweepReport:
    """Run every (SNR, trial) pair of ``spec`` and aggregate the records."""
    jobs = jobs or settings.default_jobs
    ctx = _context(spec)
    tasks = [(i, t) for i in range(len(spec.snr_db_list)) for t in range(spec.trials)]
    logger.info(
        f"Sweep {spec.problem.name}-{spec.problem.n}: {len(spec.snr_db_list)} SNR values x "
        f"{spec.trials} trials, methods {[m.value for m in spec.methods]}, {jobs} workers"
    )

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        chunks = list(
            tqdm(
                pool.map(lambda task: _run_trial(ctx, *task), tasks),
                total=len(tasks),
                desc=f"Sweep {spec.problem.name}",
                disable=not progress,
            )
        )
    records = [record for chunk in chunks for record in chunk]

    report = SweepReport(
        spec=spec,
        aggregates=aggregate(records, spec.snr_db_list, spec.methods),
        provenance=Provenance(master_seed=spec.seed, config_hash=config_hash(spec)),
        failed_methods=failed_methods(records, spec.methods),
        records=records,
    )
    logger.info(f"Sweep finished: {len(records)} records, failed methods {[m.value for m in report.failed_methods]}")
    return report


def run_rank_deficient_sweep(
    m: int,
    r: int,
    dist: Union[str, X0Distribution],
    snr_list: Sequence[float],
    trials: int,
    seed: int = 0,
    methods: Optional[Sequence[MethodId]] = None,
    jobs: Optional[int] = None,
    progress: bool = True,
) -> SweepReport:
    """Sweep with a fresh ``A = B B^T / m`` and ``x0`` per trial."""
    spec = SweepSpec(
        problem=ProblemSpec(name="rank_deficient", n=m, seed=seed, params={"r": r, "dist": X0Distribution(dist).value}),
        snr_db_list=list(snr_list),
        trials=trials,
        seed=seed,
        regenerate=True,
        **({"methods": list(methods)} if methods else {}),
    )
    return run_sweep(spec, jobs=jobs, progress=progress)


def psnr_from_nmse(nmse: float, x0: NDArray[np.float64]) -> float:
    """``10 log10(max(x0)^2 / mean((x_hat - x0)^2))`` written in terms of the NMSE."""
    if nmse == 0:
        return float("inf")
    return to_db(float(np.max(x0)) ** 2 * x0.size / (nmse * float(x0 @ x0)))


@dataclass(frozen=True)
class TomoOutcome:
    report: TomoReport
    images: Dict[str, NDArray[np.float64]]
    sweep: SweepReport


def received_image(problem: IllPosedProblem, y: NDArray[np.float64], n_side: int) -> NDArray[np.float64]:
    """``y`` itself for a square operator, the back-projection ``A^T y`` otherwise."""
    data = y if problem.m == problem.n else problem.a.T @ y
    return tomography.unstack_columns(data, n_side)


def run_tomo_restoration(
    n_side: int,
    snr_db: float,
    trials: int,
    methods: Optional[Sequence[MethodId]] = None,
    seed: int = 0,
    n_rays: Optional[int] = None,
    jobs: Optional[int] = None,
    progress: bool = True,
) -> TomoOutcome:
    """Restore the phantom from random-ray projections, one ray draw per trial.

    PSNR is averaged over trials in dB; images are those of the first trial.
    """
    methods = list(methods or TOMO_METHODS)
    params = {} if n_rays is None else {"n_rays": n_rays}
    spec = SweepSpec(
        problem=ProblemSpec(name="tomo", n=n_side, seed=seed, params=params),
        snr_db_list=[snr_db],
        trials=trials,
        methods=methods,
        seed=seed,
        regenerate=True,
    )
    sweep = run_sweep(spec, jobs=jobs, progress=progress)

    x0 = tomography.stack_columns(tomography.phantom(n_side))
    summaries = []
    for method in methods:
        own = [r for r in sweep.records if r.method == method]
        ok = [r for r in own if not r.failed]
        values = [psnr_from_nmse(r.nmse, x0) for r in ok]
        summaries.append(
            TomoMethodSummary(
                method=method,
                mean_psnr_db=float(np.mean(values)) if values else float("nan"),
                trials=len(ok),
                failed=len(own) - len(ok),
            )
        )

    ctx = _context(spec)
    inputs = trial_inputs(ctx, 0, 0)
    images = {
        "original": tomography.unstack_columns(inputs.problem.x0, n_side),
        "received": received_image(inputs.problem, inputs.observation.y, n_side),
    }
    for method in methods:
        try:
            images[method.value] = tomography.unstack_columns(run_method(method, inputs, ctx.cfg).x_hat, n_side)
        except Exception as e:
            logger.warning(f"No restored image for {method.value}: {e}")

    report = TomoReport(
        n_side=n_side,
        n_rays=int(inputs.problem.meta["n_rays"]),
        snr_db=snr_db,
        summaries=summaries,
        provenance=sweep.provenance,
    )
    return TomoOutcome(report=report, images=images, sweep=sweep)


def run_bound_approx_experiment(
    problem: Union[IllPosedProblem, ProblemSpec],
    snr_list: Sequence[float],
    seed: int = 0,
    c: Optional[float] = None,
    r_x0=None,
    covariance: Union[str, BoundCovariance] = BoundCovariance.DETERMINISTIC,
) -> BoundReport:
    """Compare the prior-free perturbation bound with the exact one at the suboptimal rho.

    ``R`` is ``x0 x0^T`` for a deterministic covariance and
    :func:`second_moment` for an ensemble one; an explicit ``r_x0`` wins over
    both. The noise variance is the one an SNR of ``snr_db`` implies; no
    noise is drawn.
    """
    covariance = BoundCovariance(covariance)
    if isinstance(problem, ProblemSpec):
        problem = build_problem(problem, seed=seed)
    svd = compute_svd(problem.a)
    part = partition(svd, settings.PARTITION_C if c is None else c)
    if r_x0 is not None:
        r = np.asarray(r_x0, dtype=np.float64)
    elif covariance is BoundCovariance.ENSEMBLE:
        r = second_moment(problem)
    else:
        r = np.outer(problem.x0, problem.x0)
    clean = problem.clean_signal
    energy = float(clean @ clean)

    points = []
    for snr_db in snr_list:
        sigma_z2 = energy / (problem.n * 10.0 ** (snr_db / 10.0))
        rho = diagnostics.suboptimal_rho(r, sigma_z2)
        exact = diagnostics.delta_bound_exact(rho, svd, part, r, sigma_z2)
        approx = diagnostics.delta_bound_approx(rho, svd, part)
        trace_form = diagnostics.delta_bound_trace(rho, svd, part, r, sigma_z2)
        error = ((exact ** 2 - approx ** 2) / exact ** 2) ** 2
        points.append(
            BoundPoint(
                snr_db=snr_db,
                rho=rho,
                delta_exact=exact,
                delta_approx=approx,
                delta_trace=trace_form,
                nmse=error,
                nmse_db=to_db(error),
            )
        )

    spearman = None
    if len(points) >= 2:
        correlation, _ = stats.spearmanr([p.snr_db for p in points], [p.nmse_db for p in points])
        spearman = None if np.isnan(correlation) else float(correlation)
    logger.info(f"Bound experiment on {problem.name} ({covariance.value}): n1={part.n1}, spearman={spearman}")
    return BoundReport(problem=problem.name, n1=part.n1, covariance=covariance, points=points, spearman=spearman)


def measure_runtime(spec: SweepSpec, warmup: int = 1, progress: bool = True) -> RuntimeReport:
    """Per-method mean wall time on one worker, after ``warmup`` discarded trials.

    ``setup_ns`` is the mean time of the SVD and projection that all methods
    of a trial share; it is not part of any method's timing.
    """
    ctx = _context(spec)
    for trial in range(warmup):
        inputs = trial_inputs(ctx, 0, trial)
        for method in spec.methods:
            try:
                run_method(method, inputs, ctx.cfg)
            except Exception as e:
                logger.debug(f"Warm-up run of {method.value} failed: {e}")

    sweep = run_sweep(spec, jobs=1, progress=progress)

    setup = []
    for trial in range(spec.trials):
        inputs = trial_inputs(ctx, 0, trial)
        start = time.perf_counter_ns()
        svd = compute_svd(inputs.problem.a)
        regularizer.projected_observation(svd, inputs.observation.y)
        setup.append(time.perf_counter_ns() - start)

    entries = []
    for method in spec.methods:
        timings = [r.runtime_ns for r in sweep.records if r.method == method and not r.failed]
        entries.append(
            RuntimeEntry(
                method=method.value,
                mean_ns=float(np.mean(timings)) if timings else float("nan"),
                trials=len(timings),
            )
        )
    by_snr = [
        RuntimeEntry(method=a.method.value, mean_ns=a.mean_runtime_ns, trials=a.trials, snr_db=a.snr_db)
        for a in sweep.aggregates
    ]
    return RuntimeReport(
        entries=entries,
        by_snr=by_snr,
        setup_ns=float(np.mean(setup)),
        provenance=sweep.provenance,
    )

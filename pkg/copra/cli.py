#!/usr/bin/env python3
"""Batch command line for copra.

Exit codes: 0 on success, 2 for bad arguments, 3 when a solver or a sweep
fails. Errors are printed to stderr as ``{"error": ..., "message": ...}``.
Every run leaves ``manifest.json`` in its output directory; ``replay`` reruns
a manifest.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from copra.config import Settings, settings, setup_logging
from copra.errors import (
    CopraError,
    InvalidDimension,
    InvalidThresholdConstant,
    SweepFailed,
    UnknownProblem,
)
from copra.schemas import DEFAULT_METHODS, BoundCovariance, CopraConfig, MethodId, ProblemSpec, SweepSpec
from copra.schemas.results import BaselineResultDocument, CopraResultDocument
from copra.services import baselines, harness, problems, regularizer
from copra.services.spectral import compute_svd
from copra.utils import reports
from copra.utils.run_tracker import RunTracker, load_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3

ARGUMENT_ERRORS = (ValidationError, UnknownProblem, InvalidDimension, InvalidThresholdConstant, argparse.ArgumentTypeError)

SPECTRUM_PROBLEMS = "shaw,baart,foxgood,deriv2,heat,wing,spikes,ilaplace"


def parse_snr_range(text: str) -> List[float]:
    """``start:step:stop`` (inclusive), a comma list, or a single value."""
    try:
        if ":" in text:
            start, step, stop = (float(part) for part in text.split(":"))
            if step <= 0 or stop < start:
                raise argparse.ArgumentTypeError(f"invalid SNR range {text!r}")
            count = int(round((stop - start) / step)) + 1
            return [start + k * step for k in range(count)]
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR value {text!r}") from None


def parse_methods(text: str) -> List[MethodId]:
    try:
        return [MethodId(name.strip()) for name in text.split(",") if name.strip()]
    except ValueError:
        choices = ", ".join(m.value for m in MethodId)
        raise argparse.ArgumentTypeError(f"unknown method in {text!r}; choose from {choices}") from None


def parse_param(text: str) -> tuple:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def resolve_seed(flag: int) -> int:
    """``COPRA_SEED`` from the environment wins over ``--seed``."""
    env_seed = Settings().COPRA_SEED
    return flag if env_seed is None else env_seed


def _params(args) -> Dict[str, Any]:
    return dict(getattr(args, "param", None) or [])


def _copra_config(args) -> CopraConfig:
    return CopraConfig(c=args.c) if args.c is not None else CopraConfig()


def _problem_spec(args, seed: int) -> ProblemSpec:
    return ProblemSpec(name=args.problem, n=args.n, seed=seed, params=_params(args))


def cmd_solve(args, seed: int) -> List[Path]:
    problem = harness.build_problem(_problem_spec(args, seed))
    observation = problems.observe(problem, args.snr, seed)
    svd = compute_svd(problem.a)
    y = observation.y
    method = MethodId(args.method)

    if method == MethodId.COPRA:
        result = regularizer.estimate(svd, y, _copra_config(args))
        document = CopraResultDocument(**result.to_dict())
        logger.info(f"COPRA: rho={result.rho:.6e} branch={result.branch.value} iters={result.iters}")
    elif method == MethodId.OLS:
        drops = baselines.pseudo_inverse_drops(svd)
        document = BaselineResultDocument(
            method=method,
            x_hat=baselines.ols_solve(svd, y).tolist(),
            flags=["pseudo-inverse"] if drops else [],
        )
    elif method == MethodId.LMMSE:
        x_hat = baselines.lmmse_oracle(svd, y, harness.second_moment(problem), observation.sigma_z2)
        document = BaselineResultDocument(method=method, x_hat=x_hat.tolist())
    else:
        grid = baselines.gamma_grid(svd.sigma_max)
        selection = baselines.select(method, svd, y, grid)
        document = BaselineResultDocument(
            method=method,
            gamma=selection.gamma,
            x_hat=regularizer.rls_solve(svd, y, selection.gamma).tolist(),
            at_endpoint=selection.at_endpoint,
            flags=["grid-endpoint"] if selection.at_endpoint else [],
        )

    path = reports.write_json(document, args.output_dir / f"solve_{problem.name}_{method.value}.json")
    print(path)
    return [path]


def _check_sweep(report) -> None:
    if report.failed_methods:
        failures = {
            m.value: sum(r.failed for r in report.records if r.method == m) for m in report.failed_methods
        }
        raise SweepFailed(f"methods failed too many trials: {', '.join(failures)}", failures)


def _write_sweep(report, stem: str, args) -> List[Path]:
    output_dir = args.output_dir
    return [
        reports.write_trials_csv(report.records, output_dir / f"{stem}_trials.csv", args.fmt),
        reports.write_json(report, output_dir / f"{stem}_report.json"),
        reports.write_plot_data(report, output_dir / f"{stem}_nmse.csv", args.cap_db, args.fmt),
    ]


def cmd_sweep(args, seed: int) -> List[Path]:
    spec = SweepSpec(
        problem=_problem_spec(args, seed),
        snr_db_list=args.snr,
        trials=args.trials,
        methods=args.methods,
        seed=seed,
        c=args.c if args.c is not None else settings.PARTITION_C,
        regenerate=args.regenerate,
    )
    report = harness.run_sweep(spec, jobs=args.jobs, progress=not args.quiet)
    outputs = _write_sweep(report, f"sweep_{args.problem}_{args.n}", args)
    _check_sweep(report)
    return outputs


def cmd_rankdef(args, seed: int) -> List[Path]:
    report = harness.run_rank_deficient_sweep(
        args.m, args.r, args.dist, args.snr, args.trials, seed,
        methods=args.methods, jobs=args.jobs, progress=not args.quiet,
    )
    outputs = _write_sweep(report, f"rankdef_{args.m}_{args.r}_{args.dist}", args)
    _check_sweep(report)
    return outputs


def cmd_tomo(args, seed: int) -> List[Path]:
    outcome = harness.run_tomo_restoration(
        args.size, args.snr, args.trials, args.methods, seed,
        n_rays=args.rays, jobs=args.jobs, progress=not args.quiet,
    )
    stem = f"tomo_{args.size}"
    outputs = [
        reports.write_psnr_csv(outcome.report, args.output_dir / f"{stem}_psnr.csv", args.fmt),
        reports.write_json(outcome.report, args.output_dir / f"{stem}_report.json"),
        reports.write_trials_csv(outcome.sweep.records, args.output_dir / f"{stem}_trials.csv", args.fmt),
    ]
    for label, image in outcome.images.items():
        outputs.append(reports.write_pgm(image, args.output_dir / f"{stem}_{label}.pgm"))
    for summary in outcome.report.summaries:
        logger.info(f"{summary.method.value}: mean PSNR {summary.mean_psnr_db:.2f} dB over {summary.trials} trials")
    _check_sweep(outcome.sweep)
    return outputs


def cmd_bounds(args, seed: int) -> List[Path]:
    results = []
    for name in args.problems.split(","):
        spec = ProblemSpec(name=name.strip(), n=args.n, seed=seed)
        results.append(harness.run_bound_approx_experiment(spec, args.snr, seed, c=args.c, covariance=args.covariance))
    return [
        reports.write_bounds_csv(results, args.output_dir / "bounds.csv", args.fmt),
        reports.write_json({"reports": [r.model_dump(mode="json") for r in results]}, args.output_dir / "bounds_report.json"),
    ]


def cmd_bench(args, seed: int) -> List[Path]:
    spec = SweepSpec(
        problem=_problem_spec(args, seed),
        snr_db_list=args.snr,
        trials=args.trials,
        methods=args.methods,
        seed=seed,
    )
    report = harness.measure_runtime(spec, warmup=args.warmup, progress=not args.quiet)
    for entry in report.entries:
        logger.info(f"{entry.method}: {entry.mean_ns / 1e3:.1f} us over {entry.trials} trials")
    stem = f"bench_{args.problem}_{args.n}"
    return [
        reports.write_runtime_csv(report, args.output_dir / f"{stem}_runtime.csv", args.fmt),
        reports.write_json(report, args.output_dir / f"{stem}_report.json"),
    ]


def cmd_generate(args, seed: int) -> List[Path]:
    problem = harness.build_problem(_problem_spec(args, seed))
    svd = compute_svd(problem.a) if args.with_svd else None
    document = problems.to_document(problem, svd)
    return [reports.write_json(document, args.output_dir / f"problem_{problem.name}_{problem.n}.json")]


def cmd_spectrum(args, seed: int) -> List[Path]:
    spectra = []
    for name in args.problems.split(","):
        problem = harness.build_problem(ProblemSpec(name=name.strip(), n=args.n, seed=seed))
        sigma = compute_svd(problem.a).sigma
        spectra.append((problem.name, sigma, problems.decay_class(sigma)))
    return [reports.write_spectrum_csv(spectra, args.output_dir / f"spectrum_{args.n}.csv", args.fmt)]


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "rankdef": cmd_rankdef,
    "tomo": cmd_tomo,
    "bounds": cmd_bounds,
    "bench": cmd_bench,
    "generate": cmd_generate,
    "spectrum": cmd_spectrum,
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Master seed (COPRA_SEED overrides it)")
    common.add_argument("--output-dir", type=Path, default=settings.OUTPUT_DIR, help=f"Output directory (default: {settings.OUTPUT_DIR})")
    common.add_argument("--jobs", type=int, default=None, help="Worker threads (default: available cores)")
    common.add_argument("--quiet", action="store_true", help="Hide progress bars and INFO messages")
    common.add_argument("--log-level", default=None, help=f"File log level (default: {settings.LOG_LEVEL})")
    common.add_argument("--format", dest="fmt", choices=list(reports.TABLE_FORMATS), default="csv", help="Table output format (default: csv)")
    return common


def _add_problem(parser: argparse.ArgumentParser, n_default: int = 50) -> None:
    parser.add_argument("--problem", required=True, help="Generator name, rank_deficient, full_rank or tomo")
    parser.add_argument("--n", type=int, default=n_default, help=f"Problem size (default: {n_default})")
    parser.add_argument("--param", type=parse_param, action="append", help="Extra generator parameter key=value")


def _add_experiment(parser: argparse.ArgumentParser, methods: str, trials: int) -> None:
    parser.add_argument("--snr", type=parse_snr_range, default=parse_snr_range("10:10:40"), help="SNR list in dB, start:step:stop or comma list (default: 10:10:40)")
    parser.add_argument("--trials", type=int, default=trials, help=f"Noise realizations per SNR (default: {trials})")
    parser.add_argument("--methods", type=parse_methods, default=parse_methods(methods), help=f"Comma list of methods (default: {methods})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copra", description="Constrained-perturbation regularization and its benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    default_methods = ",".join(m.value for m in DEFAULT_METHODS)

    solve = sub.add_parser("solve", parents=[common], help="Estimate x0 once with one method")
    _add_problem(solve)
    solve.add_argument("--snr", type=float, default=20.0, help="SNR in dB (default: 20)")
    solve.add_argument("--method", choices=[m.value for m in MethodId], default=MethodId.COPRA.value)
    solve.add_argument("--c", type=float, default=None, help="Partition constant")

    sweep = sub.add_parser("sweep", parents=[common], help="NMSE versus SNR on one problem")
    _add_problem(sweep)
    _add_experiment(sweep, default_methods, settings.DEFAULT_TRIALS)
    sweep.add_argument("--c", type=float, default=None, help="Partition constant")
    sweep.add_argument("--regenerate", action="store_true", help="Draw a fresh problem every trial")
    sweep.add_argument("--cap-db", type=float, default=None, help="Upper cap applied to plot data only")

    rankdef = sub.add_parser("rankdef", parents=[common], help="Sweep over random rank-deficient operators")
    rankdef.add_argument("--m", type=int, default=50)
    rankdef.add_argument("--r", type=int, default=45)
    rankdef.add_argument("--dist", choices=["gaussian", "uniform"], default="gaussian")
    _add_experiment(rankdef, default_methods, settings.DEFAULT_TRIALS)
    rankdef.add_argument("--cap-db", type=float, default=None, help="Upper cap applied to plot data only")

    tomo = sub.add_parser("tomo", parents=[common], help="Phantom restoration from random rays")
    tomo.add_argument("--size", type=int, default=16, help="Pixels per side (default: 16)")
    tomo.add_argument("--rays", type=int, default=None, help="Number of rays (default: size^2)")
    tomo.add_argument("--snr", type=float, default=30.0, help="SNR in dB (default: 30)")
    tomo.add_argument("--trials", type=int, default=100)
    tomo.add_argument("--methods", type=parse_methods, default=list(harness.TOMO_METHODS))

    bounds = sub.add_parser("bounds", parents=[common], help="Prior-free against exact perturbation bound")
    bounds.add_argument("--problems", default="wing,heat,foxgood,deriv2")
    bounds.add_argument("--n", type=int, default=50)
    bounds.add_argument("--snr", type=parse_snr_range, default=parse_snr_range("0:10:40"))
    bounds.add_argument("--c", type=float, default=None, help="Partition constant")
    bounds.add_argument(
        "--covariance",
        choices=[c.value for c in BoundCovariance],
        default=BoundCovariance.DETERMINISTIC.value,
        help="Prior covariance of the exact bound: x0 x0^T or the generator's second moment (default: deterministic)",
    )

    bench = sub.add_parser("bench", parents=[common], help="Mean runtime per method")
    _add_problem(bench)
    _add_experiment(bench, "copra,gcv,lcurve,quasiopt", 100)
    bench.add_argument("--warmup", type=int, default=1)

    generate = sub.add_parser("generate", parents=[common], help="Write a problem as JSON")
    _add_problem(generate)
    generate.add_argument("--with-svd", action="store_true", help="Embed the factorization")

    spectrum = sub.add_parser("spectrum", parents=[common], help="Singular values and decay class per problem")
    spectrum.add_argument("--problems", default=SPECTRUM_PROBLEMS)
    spectrum.add_argument("--n", type=int, default=50)

    replay = sub.add_parser("replay", help="Rerun the command recorded in a manifest")
    replay.add_argument("manifest", type=Path, help="manifest.json or the directory holding it")
    replay.add_argument("--output-dir", type=Path, default=None, help="Write outputs here instead")

    return parser


def normalized_argv(argv: List[str], seed: int) -> List[str]:
    """``argv`` with the effective seed pinned, so a replay ignores the environment."""
    kept, skip = [], False
    for token in argv:
        if skip:
            skip = False
            continue
        if token == "--seed":
            skip = True
            continue
        if token.startswith("--seed="):
            continue
        kept.append(token)
    return kept + ["--seed", str(seed)]


def _report_error(kind: str, error: BaseException) -> None:
    print(json.dumps({"error": kind, "message": str(error)}), file=sys.stderr)


def _replay(args) -> int:
    manifest = load_manifest(args.manifest)
    argv = list(manifest.argv)
    if args.output_dir is not None:
        argv += ["--output-dir", str(args.output_dir)]
    logger.info(f"Replaying '{manifest.command}' recorded with seed {manifest.seed}")
    return main(argv)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    quiet = getattr(args, "quiet", False)
    setup_logging(level=getattr(args, "log_level", None), console_level=logging.WARNING if quiet else logging.INFO)

    if args.command == "replay":
        try:
            return _replay(args)
        except (OSError, ValidationError, json.JSONDecodeError) as e:
            _report_error(type(e).__name__, e)
            return EXIT_USAGE

    try:
        seed = resolve_seed(args.seed)
    except ValidationError as e:
        _report_error("InvalidSeed", e)
        return EXIT_USAGE

    tracker = RunTracker(args.output_dir, args.command, normalized_argv(argv, seed), seed, harness.config_hash(args_fingerprint(args, seed)))
    try:
        with tracker:
            tracker.mark_in_progress(jobs=str(args.jobs or settings.default_jobs))
            outputs = COMMANDS[args.command](args, seed)
            tracker.mark_completed(outputs)
        return EXIT_OK
    except ARGUMENT_ERRORS as e:
        logger.error(f"Invalid arguments: {e}")
        _report_error(type(e).__name__, e)
        return EXIT_USAGE
    except SweepFailed as e:
        logger.error(f"Sweep failed: {e}")
        _report_error(type(e).__name__, e)
        return EXIT_FAILURE
    except (CopraError, ArithmeticError, RuntimeError, ValueError) as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        _report_error(type(e).__name__, e)
        return EXIT_FAILURE


def args_fingerprint(args, seed: int) -> Dict[str, Any]:
    """Arguments that determine the outputs; worker count and verbosity do not."""
    values = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    for key in ("output_dir", "quiet", "log_level", "jobs"):
        values.pop(key, None)
    values["seed"] = seed
    return values


if __name__ == "__main__":
    sys.exit(main())

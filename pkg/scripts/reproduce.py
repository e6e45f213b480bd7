#!/usr/bin/env python3

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Tuple

from tqdm import tqdm

# Add project root to Python path
sys.path.append(str(Path(__file__).parent.parent))

from copra.cli import main as copra_main
from copra.config import settings, setup_logging

logger = logging.getLogger(__name__)

SWEEP_PROBLEMS = ["shaw", "baart", "foxgood", "deriv2", "heat", "wing", "spikes", "ilaplace"]


def experiment_plan(output_dir: Path, trials: int, seed: int) -> List[Tuple[str, List[str]]]:
    """Every experiment as (label, cli argv), each in its own output directory."""
    common = ["--seed", str(seed), "--quiet"]
    plan = []
    for name in SWEEP_PROBLEMS:
        plan.append((
            f"sweep-{name}",
            ["sweep", "--problem", name, "--n", "50", "--trials", str(trials),
             "--output-dir", str(output_dir / f"sweep_{name}"), *common],
        ))
    for dist in ("gaussian", "uniform"):
        plan.append((
            f"rankdef-{dist}",
            ["rankdef", "--dist", dist, "--trials", str(trials),
             "--output-dir", str(output_dir / f"rankdef_{dist}"), *common],
        ))
    plan.append(("tomo", ["tomo", "--trials", str(max(trials // 10, 1)), "--output-dir", str(output_dir / "tomo"), *common]))
    plan.append(("bounds", ["bounds", "--output-dir", str(output_dir / "bounds"), *common]))
    plan.append(("bench", ["bench", "--problem", "shaw", "--output-dir", str(output_dir / "bench"), *common]))
    plan.append(("spectrum", ["spectrum", "--output-dir", str(output_dir / "spectrum"), *common]))
    return plan


def main() -> int:
    parser = argparse.ArgumentParser(description="Run every benchmark experiment in sequence")
    parser.add_argument(
        "--output-dir",
        type=str,
        default=str(settings.OUTPUT_DIR),
        help=f"Root output directory (default: {settings.OUTPUT_DIR})"
    )
    parser.add_argument(
        "--trials",
        type=int,
        default=settings.DEFAULT_TRIALS,
        help=f"Noise realizations per SNR (default: {settings.DEFAULT_TRIALS})"
    )
    parser.add_argument("--seed", type=int, default=0, help="Master seed (default: 0)")
    parser.add_argument("--only", type=str, default=None, help="Comma list of experiment labels to run")
    args = parser.parse_args()

    setup_logging()
    plan = experiment_plan(Path(args.output_dir), args.trials, args.seed)
    if args.only:
        wanted = set(args.only.split(","))
        plan = [step for step in plan if step[0] in wanted]

    failures = []
    start_time = time.time()
    for label, argv in tqdm(plan, desc="Experiments"):
        logger.info(f"Running {label}")
        code = copra_main(argv)
        if code != 0:
            logger.error(f"{label} exited with code {code}")
            failures.append(label)

    elapsed = time.time() - start_time
    logger.info(f"Finished {len(plan)} experiments in {elapsed:.2f} seconds, {len(failures)} failed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

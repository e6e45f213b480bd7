"""File writers for experiment outputs.

Column order of every CSV is part of the output contract; floats are written
with ``repr`` so a rerun with the same seed reproduces the files byte for byte
(runtime columns aside). Every table writer also takes ``fmt="json"``, which
writes the same rows as a list of objects keyed by column name, next to the
CSV path with a ``.json`` suffix.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel

from copra.schemas import BoundReport, RuntimeReport, SweepReport, TomoReport, TrialRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRIAL_COLUMNS = ["method", "snr_db", "seed", "nmse", "runtime_ns", "branch"]
PLOT_COLUMNS = ["snr_db", "method", "nmse_db"]
PSNR_COLUMNS = ["method", "mean_psnr_db", "trials", "failed"]
BOUND_COLUMNS = ["problem", "snr_db", "rho", "delta_exact", "delta_approx", "nmse_db"]
RUNTIME_COLUMNS = ["snr_db", "method", "mean_runtime_ns", "trials"]
SPECTRUM_COLUMNS = ["problem", "index", "sigma", "decay_class"]

TABLE_FORMATS = ("csv", "json")


def _number(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, str) and not value:
        return None
    return value


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]], fmt: str = "csv") -> Path:
    if fmt not in TABLE_FORMATS:
        raise ValueError(f"unknown table format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = path.with_suffix(".json")
        records = [{key: _json_value(v) for key, v in zip(header, row)} for row in rows]
        path.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def write_trials_csv(records: Iterable[TrialRecord], path: PathLike, fmt: str = "csv") -> Path:
    rows = (
        (r.method.value, r.snr_db, r.seed, r.nmse, r.runtime_ns, "failed" if r.failed else r.branch)
        for r in records
    )
    return _write_rows(path, TRIAL_COLUMNS, rows, fmt)


def write_json(document: Union[BaseModel, dict], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = document.model_dump(mode="json") if isinstance(document, BaseModel) else document
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def plot_rows(report: SweepReport, cap_db: Optional[float] = None) -> List[tuple]:
    """(snr_db, method, nmse_db) rows; ``cap_db`` clips the displayed value only."""
    rows = []
    for item in report.aggregates:
        value = item.nmse_db
        if cap_db is not None and np.isfinite(value):
            value = min(value, cap_db)
        rows.append((item.snr_db, item.method.value, value))
    return rows


def write_plot_data(report: SweepReport, path: PathLike, cap_db: Optional[float] = None, fmt: str = "csv") -> Path:
    return _write_rows(path, PLOT_COLUMNS, plot_rows(report, cap_db), fmt)


def write_psnr_csv(report: TomoReport, path: PathLike, fmt: str = "csv") -> Path:
    rows = ((s.method.value, s.mean_psnr_db, s.trials, s.failed) for s in report.summaries)
    return _write_rows(path, PSNR_COLUMNS, rows, fmt)


def write_bounds_csv(reports: Sequence[BoundReport], path: PathLike, fmt: str = "csv") -> Path:
    rows = (
        (report.problem, p.snr_db, p.rho, p.delta_exact, p.delta_approx, p.nmse_db)
        for report in reports
        for p in report.points
    )
    return _write_rows(path, BOUND_COLUMNS, rows, fmt)


def write_runtime_csv(report: RuntimeReport, path: PathLike, fmt: str = "csv") -> Path:
    rows = [(e.snr_db, e.method, e.mean_ns, e.trials) for e in report.by_snr]
    rows.append(("", "setup", report.setup_ns, ""))
    return _write_rows(path, RUNTIME_COLUMNS, rows, fmt)


def write_spectrum_csv(spectra: Sequence[tuple], path: PathLike, fmt: str = "csv") -> Path:
    """``spectra`` holds ``(problem, sigma, decay_class)`` triples."""
    rows = (
        (name, i + 1, float(s), label)
        for name, sigma, label in spectra
        for i, s in enumerate(sigma)
    )
    return _write_rows(path, SPECTRUM_COLUMNS, rows, fmt)


def to_gray(image: NDArray[np.float64]) -> NDArray[np.uint8]:
    """Affine map of the finite range of ``image`` onto 0..255."""
    image = np.asarray(image, dtype=np.float64)
    finite = np.isfinite(image)
    if not np.any(finite):
        return np.zeros(image.shape, dtype=np.uint8)
    low, high = float(np.min(image[finite])), float(np.max(image[finite]))
    span = high - low
    if span == 0:
        return np.zeros(image.shape, dtype=np.uint8)
    scaled = np.where(finite, (image - low) / span, 0.0)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(image: NDArray[np.float64], path: PathLike) -> Path:
    """Binary 8-bit PGM, row-major."""
    gray = to_gray(image)
    rows, cols = gray.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        handle.write(np.ascontiguousarray(gray).tobytes())
    logger.debug(f"Wrote image {path}")
    return path

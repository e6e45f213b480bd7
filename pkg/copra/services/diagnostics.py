"""Oracle computations used to check the regularizer.

These take the true second-moment matrix ``R = E[x0 x0^T]`` and the noise
variance explicitly. They are verification tools only; the regularizer
itself never sees them.
"""

import logging
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize

from copra.config import settings
from copra.errors import DegenerateCovariance, InvalidCovariance, OutOfDomain, Undefined
from copra.models import ErrorBoundReport, GammaGrid, MseCurve, SpectralPartition, SvdFactors

from .baselines import gamma_grid

logger = logging.getLogger(__name__)


def projected_covariance_diagonal(svd: SvdFactors, r_x0) -> NDArray[np.float64]:
    """``diag(V^T R V)``."""
    r = np.asarray(r_x0, dtype=np.float64)
    if r.shape != (svd.n, svd.n):
        raise InvalidCovariance(f"covariance has shape {r.shape}, expected ({svd.n}, {svd.n})")
    return np.einsum("ji,jk,ki->i", svd.v, r, svd.v)


def mse_values(svd: SvdFactors, r_x0, sigma_z2: float, gammas) -> NDArray[np.float64]:
    """``sigma_z^2 sum s/d^2 + gamma^2 sum r_i/d^2`` with ``s = sigma^2``, ``d = s + gamma``."""
    r_diag = projected_covariance_diagonal(svd, r_x0)[:, None]
    s2 = svd.sigma[:, None] ** 2
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))[None, :]
    d2 = (s2 + g) ** 2
    return sigma_z2 * np.sum(s2 / d2, axis=0) + g[0] ** 2 * np.sum(r_diag / d2, axis=0)


def mse_derivative(svd: SvdFactors, r_x0, sigma_z2: float, gammas) -> NDArray[np.float64]:
    r_diag = projected_covariance_diagonal(svd, r_x0)[:, None]
    s2 = svd.sigma[:, None] ** 2
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))[None, :]
    d3 = (s2 + g) ** 3
    return -2.0 * sigma_z2 * np.sum(s2 / d3, axis=0) + 2.0 * g[0] * np.sum(s2 * r_diag / d3, axis=0)


def mse_oracle(svd: SvdFactors, r_x0, sigma_z2: float, grid: Optional[GammaGrid] = None) -> MseCurve:
    """Exact MSE curve and its minimizer.

    The grid minimum is refined by a root search on the derivative within
    the neighbouring grid cells.
    """
    grid = grid or gamma_grid(svd.sigma_max)
    gammas = grid.values
    mse = mse_values(svd, r_x0, sigma_z2, gammas)
    k = int(np.argmin(mse))
    minimizer, minimum = float(gammas[k]), float(mse[k])

    if 0 < k < grid.count - 1:
        low, high = float(gammas[k + 1]), float(gammas[k - 1])
        slope = lambda g: float(mse_derivative(svd, r_x0, sigma_z2, g)[0])
        if slope(low) < 0 < slope(high):
            root = optimize.brentq(slope, low, high, xtol=1e-15 * low, rtol=4 * np.finfo(float).eps)
            value = float(mse_values(svd, r_x0, sigma_z2, root)[0])
            if value <= minimum:
                minimizer, minimum = float(root), value
    else:
        logger.debug(f"MSE minimum at grid end (gamma={minimizer:.3e})")

    return MseCurve(gammas=gammas, mse=mse, minimizer=minimizer, minimum=minimum)


def mse_unimodal(curve: MseCurve, rtol: float = 1e-9) -> bool:
    """True when the curve falls then rises at most once along the grid."""
    steps = np.diff(curve.mse[::-1])  # ascending gamma
    scale = rtol * float(np.max(curve.mse))
    signs = np.sign(np.where(np.abs(steps) <= scale, 0.0, steps))
    rising = np.maximum.accumulate(signs > 0)
    return not bool(np.any(rising & (signs < 0)))


def suboptimal_rho(r_x0, sigma_z2: float, n: Optional[int] = None) -> float:
    """``n sigma_z^2 / Tr(R)``."""
    r = np.asarray(r_x0, dtype=np.float64)
    n = r.shape[0] if n is None else n
    trace = float(np.trace(r))
    if not trace > 0:
        raise DegenerateCovariance(f"covariance trace must be positive, got {trace}")
    return n * sigma_z2 / trace


def worst_case_perturbation(a, x, y, delta: float) -> NDArray[np.float64]:
    """Rank-one perturbation of spectral norm ``delta`` that maximizes the residual."""
    if delta < 0:
        raise OutOfDomain(f"delta must be >= 0, got {delta}")
    a, x, y = (np.asarray(v, dtype=np.float64) for v in (a, x, y))
    residual = a @ x - y
    x_norm = float(np.linalg.norm(x))
    residual_norm = float(np.linalg.norm(residual))
    if x_norm == 0.0:
        raise Undefined("worst-case perturbation is undefined at x = 0")
    if residual_norm == 0.0:
        raise Undefined("worst-case perturbation is undefined for a zero residual")
    return np.outer(residual / residual_norm, x / x_norm) * delta


def _significant(svd: SvdFactors, part: SpectralPartition, rho: float):
    if not (np.isfinite(rho) and rho > 0):
        raise OutOfDomain(f"rho must be finite and > 0, got {rho}")
    s1 = svd.sigma[: part.n1] ** 2
    return s1, s1 + rho


def delta_bound_exact(rho: float, svd: SvdFactors, part: SpectralPartition, r_x0, sigma_z2: float) -> float:
    """Perturbation bound from the averaged secular equation, given the true ``R`` and noise."""
    s1, d1 = _significant(svd, part, rho)
    r1 = projected_covariance_diagonal(svd, r_x0)[: part.n1]
    d1_2 = d1 ** 2
    numerator = sigma_z2 * np.sum(s1 / d1_2) + np.sum(s1 * s1 * r1 / d1_2)
    denominator = sigma_z2 * np.sum(1.0 / d1_2) + part.n2 * sigma_z2 / rho ** 2 + np.sum(s1 * r1 / d1_2)
    return float(np.sqrt(numerator / denominator))


def delta_bound_approx(rho: float, svd: SvdFactors, part: SpectralPartition) -> float:
    """Prior-free perturbation bound at ``rho``."""
    s1, d1 = _significant(svd, part, rho)
    weight = (part.beta * s1 + rho) / d1 ** 2
    numerator = np.sum(s1 * weight)
    denominator = np.sum(weight) + part.n2 / rho
    return float(np.sqrt(numerator / denominator))


def delta_bound_trace(rho: float, svd: SvdFactors, part: SpectralPartition, r_x0, sigma_z2: float) -> float:
    """Exact bound with ``diag(V1^T R V1)`` replaced by ``Tr(R) / n1``.

    At ``rho = n sigma_z^2 / Tr(R)`` this equals :func:`delta_bound_approx`.
    """
    s1, d1 = _significant(svd, part, rho)
    trace = float(np.trace(np.asarray(r_x0, dtype=np.float64)))
    if not trace > 0:
        raise DegenerateCovariance(f"covariance trace must be positive, got {trace}")
    shift = part.n1 * sigma_z2 / trace
    d1_2 = d1 ** 2
    numerator = np.sum(s1 * (s1 + shift) / d1_2)
    denominator = np.sum((s1 + shift) / d1_2) + part.n2 * shift / rho ** 2
    return float(np.sqrt(numerator / denominator))


def _spread(values: NDArray[np.float64], average: float) -> float:
    return float(max(1.0 - np.min(values) / average, np.max(values) / average - 1.0))


def _filter_diagonal(svd: SvdFactors, rho: float, k: int, p: int) -> NDArray[np.float64]:
    s2 = svd.sigma ** 2
    return s2 ** k / (s2 + rho) ** p


def approximation_error(svd: SvdFactors, rho: float, r_x0, k: int = 0, p: int = 2) -> float:
    """Normalized error of replacing ``Tr(H V^T R V)`` by ``Tr(H) Tr(R) / n``."""
    h = _filter_diagonal(svd, rho, k, p)
    r_diag = projected_covariance_diagonal(svd, r_x0)
    reference = float(np.sum(h)) * float(np.sum(r_diag)) / svd.n
    return (float(h @ r_diag) - reference) / reference


def error_bounds(
    svd: SvdFactors,
    part: SpectralPartition,
    rho: float,
    r_x0=None,
    snr_max_db: Optional[float] = None,
    k: int = 0,
    p: int = 2,
) -> ErrorBoundReport:
    """Bounds on the trace approximation error.

    ``mu_a`` depends only on the filter ``sigma^(2k) / (sigma^2 + rho)^p``;
    ``mu_x`` needs ``R`` and is infinite when it is not given.
    ``rho_min_lower`` is ``sigma_n1^2 exp(-snr_max_db / 10)``, the smallest
    suboptimal rho an SNR of ``snr_max_db`` admits.
    """
    if not (np.isfinite(rho) and rho > 0):
        raise OutOfDomain(f"rho must be finite and > 0, got {rho}")
    snr_max_db = settings.SNR_MAX_DB if snr_max_db is None else snr_max_db

    h = _filter_diagonal(svd, rho, k, p)
    mu_a = _spread(h, float(np.mean(h)))

    mu_x = float("inf")
    if r_x0 is not None:
        r = np.asarray(r_x0, dtype=np.float64)
        average = float(np.trace(r)) / r.shape[0]
        if not average > 0:
            raise DegenerateCovariance("covariance trace must be positive")
        mu_x = _spread(linalg.eigvalsh(r), average)

    # 0.018 sigma_n1^2 at 40 dB
    rho_min_lower = float(svd.sigma[part.n1 - 1] ** 2 * np.exp(-snr_max_db / 10.0))
    return ErrorBoundReport(mu_x=mu_x, mu_a=mu_a, mu=min(mu_x, mu_a), rho_min_lower=rho_min_lower)

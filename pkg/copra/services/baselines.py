"""Reference parameter-selection methods.

Every functional is evaluated spectrally from ``b = U^T y`` and the
component of ``y`` outside ``range(U)``, over a descending log grid of
``gamma`` values. The selected ``gamma`` is then handed to
:func:`copra.services.regularizer.rls_solve`.

* GCV: ``V = m ||r||^2 / (m - sum sigma^2 / (sigma^2 + gamma))^2``, grid
  minimum refined by golden-section search inside the neighbouring cells.
* L-curve: corner of maximal signed curvature of
  ``(log ||A x - y||, log ||x||)``.
* Quasi-optimality: minimum of ``||gamma dx/dgamma||``.

L-curve and quasi-optimality only search grid values at or above the square
of the smallest numerically nonzero singular value.
"""

import logging
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize

from copra.config import settings
from copra.errors import InvalidCovariance, InvalidDimension, InvalidMatrix, NoCorner, SingularSystem
from copra.models import GammaGrid, LCurveTerms, Selection, SvdFactors
from copra.schemas import MethodId

from .regularizer import projected_observation, rls_solve

logger = logging.getLogger(__name__)

GRID_FLOOR_REL = 1e-16
NEAR_SINGULAR_REL = 1e-14


def gamma_grid(sigma_max: float, count: Optional[int] = None) -> GammaGrid:
    """``count`` log-spaced values from ``sigma_max^2`` down to ``1e-16 sigma_max^2``."""
    count = count or settings.GRID_POINTS
    if count < 16:
        raise InvalidDimension(f"grid needs at least 16 points, got {count}")
    if not sigma_max > 0:
        raise InvalidMatrix("largest singular value must be positive")
    top = sigma_max ** 2
    values = np.geomspace(top, GRID_FLOOR_REL * top, count)
    values.setflags(write=False)
    return GammaGrid(values=values)


def _observation_terms(svd: SvdFactors, y):
    y = np.asarray(y, dtype=np.float64)
    b = projected_observation(svd, y)
    perpendicular = y - svd.u @ b
    return b, float(perpendicular @ perpendicular)


def pseudo_inverse_drops(svd: SvdFactors, rcond: float = 0.0) -> int:
    """Number of singular values an OLS solve with ``rcond`` discards."""
    return int(np.count_nonzero(svd.sigma <= rcond * svd.sigma_max))


def ols_solve(svd: SvdFactors, y, rcond: float = 0.0) -> NDArray[np.float64]:
    """``V Sigma^+ U^T y``.

    With the default ``rcond = 0`` only exactly-zero singular values are
    dropped; a positive ``rcond`` gives the truncated pseudo-inverse.
    """
    b = projected_observation(svd, y)
    sigma = svd.sigma
    keep = sigma > rcond * svd.sigma_max
    if not np.all(keep):
        logger.warning(f"OLS: dropping {int(np.count_nonzero(~keep))} singular values (pseudo-inverse)")
    elif sigma[-1] < NEAR_SINGULAR_REL * svd.sigma_max:
        logger.debug(f"OLS: near-singular system, sigma_n/sigma_1 = {sigma[-1] / svd.sigma_max:.2e}")
    coefficients = np.zeros_like(b)
    coefficients[keep] = b[keep] / sigma[keep]
    return svd.v @ coefficients


def gcv_function(svd: SvdFactors, y, gammas) -> NDArray[np.float64]:
    b, outside = _observation_terms(svd, y)
    s2 = svd.sigma[:, None] ** 2
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))[None, :]
    d = s2 + g
    residual2 = np.sum((g / d) ** 2 * b[:, None] ** 2, axis=0) + outside
    trace = svd.m - np.sum(s2 / d, axis=0)
    return svd.m * residual2 / trace ** 2


def _grid_argmin(values: NDArray[np.float64]) -> int:
    return int(np.nanargmin(values))


def _is_endpoint(index: int, count: int) -> bool:
    return index in (0, count - 1)


def search_floor(svd: SvdFactors) -> float:
    """Square of the smallest singular value above the numerical-rank tolerance."""
    tolerance = svd.sigma_max * max(svd.m, svd.n) * np.finfo(np.float64).eps
    kept = svd.sigma[svd.sigma > tolerance]
    return float(kept[-1] ** 2)


def search_stop(svd: SvdFactors, grid: GammaGrid) -> int:
    """Number of leading grid values not below :func:`search_floor` (at least two)."""
    return max(int(np.count_nonzero(grid.values >= search_floor(svd))), 2)


def gcv_select(svd: SvdFactors, y, grid: Optional[GammaGrid] = None) -> Selection:
    grid = grid or gamma_grid(svd.sigma_max)
    values = gcv_function(svd, y, grid.values)
    k = _grid_argmin(values)
    gamma, best = float(grid.values[k]), float(values[k])

    if not _is_endpoint(k, grid.count):
        # refine in log(gamma) between the neighbouring grid points
        log_values = np.log(grid.values)
        objective = lambda t: float(gcv_function(svd, y, np.exp(t))[0])
        try:
            result = optimize.minimize_scalar(
                objective,
                bracket=(log_values[k + 1], log_values[k], log_values[k - 1]),
                method="golden",
            )
            low, high = grid.values[k + 1], grid.values[k - 1]
            refined = float(np.clip(np.exp(result.x), low, high))
            refined_value = objective(np.log(refined))
            if refined_value <= best:
                gamma, best = refined, refined_value
        except ValueError as e:
            logger.debug(f"GCV golden-section refinement skipped: {e}")
    else:
        logger.debug(f"GCV minimum at grid end (gamma={gamma:.3e})")

    return Selection(gamma=gamma, at_endpoint=_is_endpoint(k, grid.count), value=best, index=k)


def lcurve_terms(svd: SvdFactors, y, gammas) -> LCurveTerms:
    """``||x_gamma||^2``, ``||A x_gamma - y||^2`` and their first two derivatives."""
    b, outside = _observation_terms(svd, y)
    s2 = svd.sigma[:, None] ** 2
    w = (svd.sigma[:, None] * b[:, None]) ** 2  # sigma^2 b^2
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))[None, :]
    d = s2 + g
    return LCurveTerms(
        eta=np.sum(w / d ** 2, axis=0),
        eta_d1=-2.0 * np.sum(w / d ** 3, axis=0),
        eta_d2=6.0 * np.sum(w / d ** 4, axis=0),
        res=np.sum(g ** 2 * b[:, None] ** 2 / d ** 2, axis=0) + outside,
        res_d1=2.0 * np.sum(g * w / d ** 3, axis=0),
        res_d2=2.0 * np.sum(w * (s2 - 2.0 * g) / d ** 4, axis=0),
    )


def lcurve_curvature(svd: SvdFactors, y, gammas) -> NDArray[np.float64]:
    """Signed curvature of ``(log ||r||, log ||x||)``; the corner is its maximum."""
    t = lcurve_terms(svd, y, gammas)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi_d1 = t.res_d1 / (2.0 * t.res)
        xi_d2 = (t.res_d2 * t.res - t.res_d1 ** 2) / (2.0 * t.res ** 2)
        zeta_d1 = t.eta_d1 / (2.0 * t.eta)
        zeta_d2 = (t.eta_d2 * t.eta - t.eta_d1 ** 2) / (2.0 * t.eta ** 2)
        kappa = (xi_d1 * zeta_d2 - xi_d2 * zeta_d1) / (xi_d1 ** 2 + zeta_d1 ** 2) ** 1.5
    return kappa


def lcurve_select(svd: SvdFactors, y, grid: Optional[GammaGrid] = None) -> Selection:
    grid = grid or gamma_grid(svd.sigma_max)
    stop = search_stop(svd, grid)
    kappa = lcurve_curvature(svd, y, grid.values[:stop])
    if not np.any(np.isfinite(kappa)) or np.nanmax(kappa) <= 0:
        raise NoCorner("L-curve has no point of positive curvature")
    k = int(np.nanargmax(kappa))
    return Selection(gamma=float(grid.values[k]), at_endpoint=_is_endpoint(k, stop), value=float(kappa[k]), index=k)


def quasiopt_function(svd: SvdFactors, y, gammas) -> NDArray[np.float64]:
    b = projected_observation(svd, y)
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))[None, :]
    d = svd.sigma[:, None] ** 2 + g
    return np.sqrt(np.sum((g * svd.sigma[:, None] * b[:, None] / d ** 2) ** 2, axis=0))


def quasiopt_select(svd: SvdFactors, y, grid: Optional[GammaGrid] = None) -> Selection:
    grid = grid or gamma_grid(svd.sigma_max)
    stop = search_stop(svd, grid)
    values = quasiopt_function(svd, y, grid.values[:stop])
    k = _grid_argmin(values)
    at_endpoint = _is_endpoint(k, stop)
    if at_endpoint:
        logger.debug(f"Quasi-optimality minimum at grid end (gamma={grid.values[k]:.3e})")
    return Selection(gamma=float(grid.values[k]), at_endpoint=at_endpoint, value=float(values[k]), index=k)


def _is_scaled_identity(r: NDArray[np.float64]) -> bool:
    diagonal = np.diag(r)
    return bool(np.all(r == np.diag(diagonal)) and np.all(diagonal == diagonal[0]))


def lmmse_oracle(svd: SvdFactors, y, r_x0, sigma_z2: float) -> NDArray[np.float64]:
    """``(A^T A + sigma_z^2 R^-1)^-1 A^T y`` with the true second-moment matrix ``R``."""
    r = np.asarray(r_x0, dtype=np.float64)
    if r.shape != (svd.n, svd.n):
        raise InvalidCovariance(f"covariance has shape {r.shape}, expected ({svd.n}, {svd.n})")
    if not sigma_z2 > 0:
        raise InvalidCovariance(f"noise variance must be positive, got {sigma_z2}")
    if not np.allclose(r, r.T, rtol=1e-12, atol=0.0):
        raise InvalidCovariance("covariance is not symmetric")

    if _is_scaled_identity(r):
        if not r[0, 0] > 0:
            raise InvalidCovariance("covariance is singular")
        return rls_solve(svd, y, sigma_z2 / r[0, 0])

    try:
        factor = linalg.cho_factor(r)
    except linalg.LinAlgError as e:
        raise InvalidCovariance("covariance is not positive definite") from e
    r_inv = linalg.cho_solve(factor, np.eye(svd.n))

    b = projected_observation(svd, y)
    gram = (svd.v * svd.sigma ** 2) @ svd.v.T
    rhs = svd.v @ (svd.sigma * b)
    try:
        return linalg.solve(gram + sigma_z2 * r_inv, rhs, assume_a="pos")
    except linalg.LinAlgError as e:
        raise SingularSystem("LMMSE system is singular") from e


SELECTORS = {
    MethodId.GCV: gcv_select,
    MethodId.LCURVE: lcurve_select,
    MethodId.QUASIOPT: quasiopt_select,
}


def select(method: MethodId, svd: SvdFactors, y, grid: Optional[GammaGrid] = None) -> Selection:
    try:
        selector = SELECTORS[MethodId(method)]
    except KeyError:
        raise ValueError(f"{method} is not a grid-based selector") from None
    return selector(svd, y, grid)

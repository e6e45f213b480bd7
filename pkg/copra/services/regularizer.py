"""Constrained-perturbation regularizer.

The regularization parameter is the positive root, beyond the small root
``epsilon``, of the characteristic function

    G(rho) = T1(rho) * W+(rho) - T0(rho) * W-(rho)

with ``b = U^T y``, ``d_i = sigma_i^2 + rho`` and ``beta = n / n1``::

    T1 = sum_i sigma_i^2 b_i^2 / d_i^2          T0 = sum_i b_i^2 / d_i^2
    W+ = sum_{i<=n1} (beta sigma_i^2 + rho) / d_i^2 + n2 / rho
    W- = sum_{i<=n1} sigma_i^2 (beta sigma_i^2 + rho) / d_i^2

``G1 = T1 W+`` and ``G2 = T0 W-`` are accumulated separately in extended
precision and subtracted last.
"""

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from copra.config import settings
from copra.errors import (
    DerivativeVanished,
    InvalidDimension,
    InvalidMatrix,
    NoConvergence,
    NotApplicable,
    OutOfDomain,
    SingularSystem,
)
from copra.models import CopraResult, EpsilonRoot, NewtonOutcome, SpectralPartition, SvdFactors
from copra.schemas import CopraConfig, SolverBranch

from .spectral import partition

logger = logging.getLogger(__name__)

LONG = np.longdouble

ROOT_SEARCH_CEILING = 1e15
EPSILON_PREMISE = 1e-3
# relative slack for the strict inequality of the existence condition
CONDITION_RTOL = 64 * float(np.finfo(np.longdouble).eps)
STEP_RTOL = 1e-14


def projected_observation(svd: SvdFactors, y: NDArray[np.float64]) -> NDArray[np.float64]:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (svd.m,):
        raise InvalidDimension(f"y has shape {y.shape}, expected ({svd.m},)")
    return svd.u.T @ y


def rls_solve(svd: SvdFactors, y: NDArray[np.float64], rho: float) -> NDArray[np.float64]:
    """Regularized least squares ``(A^T A + rho I)^-1 A^T y`` in SVD form."""
    if not (np.isfinite(rho) and rho >= 0):
        raise OutOfDomain(f"rho must be finite and >= 0, got {rho}")
    sigma = svd.sigma
    if rho == 0 and sigma[-1] == 0:
        raise SingularSystem("rho = 0 with a zero singular value")
    b = projected_observation(svd, y)
    return svd.v @ (sigma / (sigma ** 2 + rho) * b)


def _check_rho(rho) -> None:
    values = np.atleast_1d(rho)
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise OutOfDomain(f"rho must be finite and > 0, got {rho}")


def _spectral_terms(rhos, sigma, part: SpectralPartition, b):
    s2 = np.asarray(sigma, dtype=LONG)[:, None] ** 2
    b2 = np.asarray(b, dtype=LONG)[:, None] ** 2
    r = np.atleast_1d(np.asarray(rhos, dtype=LONG))[None, :]
    d = s2 + r
    s1, d1 = s2[: part.n1], d[: part.n1]
    weight = (LONG(part.beta) * s1 + r)
    return s2, b2, r, d, s1, d1, weight


def _parts(rhos, sigma, part: SpectralPartition, b) -> Tuple[NDArray, NDArray]:
    s2, b2, r, d, s1, d1, weight = _spectral_terms(rhos, sigma, part, b)
    d2 = d * d
    t1 = np.sum(s2 * b2 / d2, axis=0)
    t0 = np.sum(b2 / d2, axis=0)
    w_pos = np.sum(weight / (d1 * d1), axis=0) + LONG(part.n2) / r[0]
    w_neg = np.sum(s1 * weight / (d1 * d1), axis=0)
    return t1 * w_pos, t0 * w_neg


def characteristic_parts(rho: float, sigma, part: SpectralPartition, b) -> Tuple[float, float]:
    """Positive and subtracted products ``(G1, G2)`` at ``rho``."""
    _check_rho(rho)
    g1, g2 = _parts(rho, sigma, part, b)
    return float(g1[0]), float(g2[0])


def characteristic_g(rho: float, sigma, part: SpectralPartition, b) -> float:
    _check_rho(rho)
    g1, g2 = _parts(rho, sigma, part, b)
    return float(g1[0] - g2[0])


def _g_values(rhos, sigma, part, b) -> NDArray[np.float64]:
    g1, g2 = _parts(rhos, sigma, part, b)
    return (g1 - g2).astype(np.float64)


def characteristic_g_prime(rho: float, sigma, part: SpectralPartition, b) -> float:
    """Term-wise derivative of :func:`characteristic_g`."""
    _check_rho(rho)
    s2, b2, r, d, s1, d1, weight = _spectral_terms(rho, sigma, part, b)
    d2, d3 = d * d, d * d * d
    d1_2, d1_3 = d1 * d1, d1 * d1 * d1

    t1 = np.sum(s2 * b2 / d2, axis=0)
    t0 = np.sum(b2 / d2, axis=0)
    t1_d = -2 * np.sum(s2 * b2 / d3, axis=0)
    t0_d = -2 * np.sum(b2 / d3, axis=0)

    w_pos = np.sum(weight / d1_2, axis=0) + LONG(part.n2) / r[0]
    w_neg = np.sum(s1 * weight / d1_2, axis=0)
    bend = (d1 - 2 * weight) / d1_3
    w_pos_d = np.sum(bend, axis=0) - LONG(part.n2) / (r[0] * r[0])
    w_neg_d = np.sum(s1 * bend, axis=0)

    value = t1_d * w_pos + t1 * w_pos_d - (t0_d * w_neg + t0 * w_neg_d)
    return float(value[0])


def root_condition(sigma, part: SpectralPartition, b) -> bool:
    """Existence condition ``n sum sigma^2 b^2 > (sum_{i<=n1} sigma^2) (sum b^2)``."""
    s2 = np.asarray(sigma, dtype=LONG) ** 2
    b2 = np.asarray(b, dtype=LONG) ** 2
    lhs = LONG(part.n) * np.sum(s2 * b2)
    rhs = np.sum(s2[: part.n1]) * np.sum(b2)
    return bool(lhs - rhs > CONDITION_RTOL * rhs)


def default_floor(sigma) -> float:
    return settings.EPSILON_FLOOR_REL * float(np.asarray(sigma)[0]) ** 2


def epsilon_root(sigma, part: SpectralPartition, b, floor: Optional[float] = None) -> EpsilonRoot:
    """Closed-form small root of ``G``, never below ``floor``."""
    if part.n2 == 0:
        raise NotApplicable("small root needs at least one trivial singular value (n2 = 0)")
    floor = default_floor(sigma) if floor is None else floor

    s2 = np.asarray(sigma, dtype=LONG) ** 2
    b2 = np.asarray(b, dtype=LONG) ** 2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv2 = np.sum(b2 / s2)
        inv4 = np.sum(b2 / (s2 * s2))
        inv_n1 = np.sum(1 / s2[: part.n1])
        beta = LONG(part.beta)
        numerator = LONG(part.n2) * inv2
        denominator = beta * part.n1 * inv4 - beta * inv2 * inv_n1
        formula = float(numerator / denominator)

    if not (np.isfinite(denominator) and denominator > 0 and np.isfinite(formula)):
        logger.warning(f"Small-root denominator is {float(denominator):.3e}; using the floor {floor:.3e}")
        return EpsilonRoot(value=floor, formula=formula, floored=True)

    value = max(formula, floor)
    premise = EPSILON_PREMISE * float(s2[part.n1 - 1])
    if value > premise:
        logger.warning(f"Small root {value:.3e} is not small against sigma_n1^2 ({float(s2[part.n1 - 1]):.3e})")
    return EpsilonRoot(value=value, formula=formula, floored=formula < floor)


def newton_solve(
    g: Callable[[float], float],
    g_prime: Callable[[float], float],
    cfg: CopraConfig,
    rho_init: Optional[float] = None,
    bracket: Optional[Tuple[float, float]] = None,
    scale: Optional[Callable[[float], float]] = None,
) -> NewtonOutcome:
    """Newton iteration on ``g`` with an optional sign-change bracket.

    Stops when ``|g(rho)| < cfg.xi * scale(rho)`` (``scale`` defaults to 1)
    or when the step falls below ``STEP_RTOL * rho``. Inside a bracket
    ``(lo, hi)`` with ``g(lo) < 0 < g(hi)``, a step that leaves the bracket
    or a vanishing derivative is replaced by a geometric bisection step.
    """
    rho = rho_init if rho_init is not None else cfg.rho_init
    if rho is None or not rho > 0:
        raise OutOfDomain(f"initial iterate must be > 0, got {rho}")
    tolerance = (lambda r: cfg.xi * scale(r)) if scale is not None else (lambda r: cfg.xi)
    lo, hi = bracket if bracket is not None else (None, None)

    trace = [float(rho)]
    safeguard_steps = 0
    value = g(rho)
    if abs(value) < tolerance(rho):
        return NewtonOutcome(rho=float(rho), iters=0, residual=abs(value), trace=tuple(trace))

    for iteration in range(1, cfg.max_iter + 1):
        if lo is not None and lo < rho < hi and np.isfinite(value):
            if value < 0:
                lo = rho
            else:
                hi = rho

        slope = g_prime(rho)
        candidate = rho - value / slope if np.isfinite(slope) and slope != 0 else None

        if lo is not None:
            if candidate is None or not lo < candidate < hi:
                candidate = math.sqrt(lo * hi)
                safeguard_steps += 1
                logger.debug(f"Newton step {iteration} left ({lo:.3e}, {hi:.3e}); bisecting")
        elif candidate is None:
            raise DerivativeVanished(f"derivative vanished at rho={rho:.6e}", rho=rho)
        elif not (np.isfinite(candidate) and candidate > 0):
            raise NoConvergence(f"iterate left the positive axis at step {iteration}", rho=rho, iters=iteration)

        step = abs(candidate - rho)
        rho = float(candidate)
        trace.append(rho)
        value = g(rho)
        logger.debug(f"Newton step {iteration}: rho={rho:.9e}, G={value:.3e}")

        bracket_closed = lo is not None and hi / lo - 1.0 < STEP_RTOL
        if abs(value) < tolerance(rho) or step <= STEP_RTOL * rho or bracket_closed:
            return NewtonOutcome(
                rho=rho,
                iters=iteration,
                residual=abs(value),
                trace=tuple(trace),
                safeguard_steps=safeguard_steps,
            )

    raise NoConvergence(f"no convergence after {cfg.max_iter} iterations", rho=rho, iters=cfg.max_iter)


def find_bracket(
    sigma,
    part: SpectralPartition,
    b,
    lower: float,
    upper: float,
    points: int,
) -> Optional[Tuple[float, float]]:
    """Last negative-to-positive sign change of ``G`` on a log grid."""
    grid = np.geomspace(lower, upper, points)
    values = _g_values(grid, sigma, part, b)
    changes = np.nonzero((values[:-1] < 0) & (values[1:] > 0))[0]
    if changes.size == 0:
        return None
    i = int(changes[-1])
    return float(grid[i]), float(grid[i + 1])


def _solve_root(sigma, part: SpectralPartition, b, epsilon: float, cfg: CopraConfig) -> NewtonOutcome:
    upper = ROOT_SEARCH_CEILING * float(sigma[0]) ** 2
    bracket = find_bracket(sigma, part, b, epsilon, upper, cfg.bracket_points)
    if bracket is None:
        logger.warning("No sign change of G above the small root; Newton runs without a bracket")

    return newton_solve(
        lambda r: characteristic_g(r, sigma, part, b),
        lambda r: characteristic_g_prime(r, sigma, part, b),
        cfg,
        rho_init=cfg.rho_init or 10.0 * epsilon,
        bracket=bracket,
        scale=lambda r: characteristic_parts(r, sigma, part, b)[0],
    )


def implied_delta(svd: SvdFactors, y, x_hat, rho: float) -> Optional[float]:
    """Perturbation bound ``rho ||x_hat|| / ||y - A x_hat||``; None on zero residual."""
    residual = np.asarray(y, dtype=np.float64) - svd.apply(x_hat)
    residual_norm = float(np.linalg.norm(residual))
    if residual_norm == 0.0:
        return None
    return rho * float(np.linalg.norm(x_hat)) / residual_norm


def secular_residual(svd: SvdFactors, y, rho: float, delta: float) -> float:
    """``delta^2 ||y - A x_rho||^2 - rho^2 ||x_rho||^2``, zero at a consistent pair."""
    _check_rho(rho)
    y = np.asarray(y, dtype=np.float64)
    b = projected_observation(svd, y).astype(LONG)
    s2 = svd.sigma.astype(LONG) ** 2
    d = s2 + LONG(rho)
    outside = max(LONG(y @ y) - np.sum(b * b), LONG(0))
    residual2 = np.sum((LONG(rho) * b / d) ** 2) + outside
    solution2 = np.sum(s2 * b * b / (d * d))
    return float(LONG(delta) ** 2 * residual2 - LONG(rho) ** 2 * solution2)


def estimate(svd: SvdFactors, y, cfg: Optional[CopraConfig] = None) -> CopraResult:
    """Select rho by the characteristic equation and return the regularized estimate.

    When the existence condition fails, or Newton does not converge, rho
    falls back to the small root; the latter case is flagged.
    """
    cfg = cfg or CopraConfig()
    if svd.sigma_max <= 0:
        raise InvalidMatrix("operator is identically zero")
    y = np.asarray(y, dtype=np.float64)
    b = projected_observation(svd, y)
    sigma = svd.sigma
    part = partition(svd, cfg.c)
    floor = cfg.epsilon_floor or default_floor(sigma)
    flags = []

    try:
        eps = epsilon_root(sigma, part, b, floor)
        if eps.floored:
            flags.append("epsilon-floored")
    except NotApplicable:
        eps = EpsilonRoot(value=floor, formula=float("nan"), floored=True)
        flags.append("no-trivial-values")

    condition = root_condition(sigma, part, b)
    branch = SolverBranch.EPSILON_FALLBACK
    rho, iters, trace = eps.value, 0, ()
    if condition:
        try:
            outcome = _solve_root(sigma, part, b, eps.value, cfg)
            rho, iters, trace = outcome.rho, outcome.iters, outcome.trace
            branch = SolverBranch.NEWTON_ROOT
            if outcome.safeguard_steps:
                flags.append("newton-safeguarded")
        except (NoConvergence, DerivativeVanished) as e:
            logger.warning(f"Newton failed ({e}); falling back to the small root")
            flags.append("newton-failed")
            iters = getattr(e, "iters", 0)

    x_hat = rls_solve(svd, y, rho)
    return CopraResult(
        rho=float(rho),
        x_hat=x_hat,
        branch=branch,
        iters=iters,
        g_residual=abs(characteristic_g(rho, sigma, part, b)),
        condition_satisfied=condition,
        delta=implied_delta(svd, y, x_hat, rho),
        n1=part.n1,
        epsilon=eps.value,
        trace=tuple(trace),
        flags=tuple(flags),
    )

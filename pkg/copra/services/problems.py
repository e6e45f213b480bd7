"""Test problems for discrete ill-posed systems ``y = A x0 + z``.

All kernels are discretized with the midpoint rule on ``n`` cells unless
noted otherwise, which yields square operators:

* ``shaw``: one-dimensional image restoration, ``s, t in [-pi/2, pi/2]``,
  ``K(s, t) = (cos s + cos t)^2 (sin u / u)^2`` with
  ``u = pi (sin s + sin t)``, solution ``2 exp(-6 (t - 0.8)^2) + exp(-2 (t + 0.5)^2)``.
* ``baart``: ``K(s, t) = exp(s cos t)``, ``s in [0, pi/2]``,
  ``t in [0, pi]``, solution ``sin t``.
* ``foxgood``: ``K(s, t) = sqrt(s^2 + t^2)`` on ``[0, 1]``, solution ``t``.
  Mildly ill-posed, not square-integrable-singular.
* ``deriv2``: Green's function of the second derivative on ``[0, 1]``,
  ``K(s, t) = s (t - 1)`` for ``s < t`` and ``t (s - 1)`` otherwise,
  solution ``t``. Condition number grows like ``n^2``.
* ``heat``: inverse heat equation as a Volterra convolution, lower
  triangular Toeplitz matrix with first column
  ``k(t) = h / (2 kappa sqrt(pi)) t^(-3/2) exp(-1 / (4 kappa^2 t))``;
  ``kappa`` defaults to 1 and can be overridden.
* ``wing``: ``K(s, t) = t exp(-s t^2)`` on ``[0, 1]``, solution the
  indicator of ``(1/3, 2/3)``.
* ``spikes``: heat-type kernel ``K(s, t) = t / (2 sqrt(pi) s^(3/2)) exp(-t^2 / (4 s))``
  on ``(0, 5]`` with a spike-train solution.
* ``ilaplace``: inverse Laplace transform on ``[0, inf)`` with
  Gauss-Laguerre quadrature, ``s_i = 10 i / n``, solution ``exp(-t / 2)``.
* ``identity``: ``A = I``, ``x0 = 1``; equal singular values.

The random models are :func:`rank_deficient` (``A = B B^T / m``) and
:func:`full_rank` (``A = B``), and :func:`tomo` builds the ray operator.
"""

import logging
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np
from numpy.typing import NDArray
from scipy import special

from copra.errors import DegenerateSignal, InvalidDimension, InvalidMatrix, UnknownProblem
from copra.models import IllPosedProblem, NoisyObservation
from copra.schemas import ProblemDocument, SvdDocument, X0Distribution
from . import tomography

logger = logging.getLogger(__name__)

DECAY_FLOOR = 1e-10
GAP_RATIO = 1e6


def _midpoints(lower: float, upper: float, n: int) -> NDArray[np.float64]:
    h = (upper - lower) / n
    return lower + (np.arange(n) + 0.5) * h


def _shaw(n: int, params: Mapping[str, Any]):
    if n % 2:
        raise InvalidDimension(f"shaw requires an even n, got {n}")
    h = np.pi / n
    s = _midpoints(-np.pi / 2, np.pi / 2, n)
    cos_sum = np.cos(s)[:, None] + np.cos(s)[None, :]
    sin_sum = np.sin(s)[:, None] + np.sin(s)[None, :]
    # np.sinc(x) = sin(pi x) / (pi x), so the kernel's sin(u)/u is sinc(sin s + sin t)
    a = h * cos_sum ** 2 * np.sinc(sin_sum) ** 2
    x0 = 2.0 * np.exp(-6.0 * (s - 0.8) ** 2) + np.exp(-2.0 * (s + 0.5) ** 2)
    return a, x0, {}


def _baart(n: int, params: Mapping[str, Any]):
    s = _midpoints(0.0, np.pi / 2, n)
    t = _midpoints(0.0, np.pi, n)
    a = (np.pi / n) * np.exp(s[:, None] * np.cos(t)[None, :])
    return a, np.sin(t), {}


def _foxgood(n: int, params: Mapping[str, Any]):
    t = _midpoints(0.0, 1.0, n)
    a = (1.0 / n) * np.sqrt(t[:, None] ** 2 + t[None, :] ** 2)
    return a, t.copy(), {}


def _deriv2(n: int, params: Mapping[str, Any]):
    t = _midpoints(0.0, 1.0, n)
    s_col, t_row = t[:, None], t[None, :]
    kernel = np.where(s_col < t_row, s_col * (t_row - 1.0), t_row * (s_col - 1.0))
    return (1.0 / n) * kernel, t.copy(), {}


def _heat(n: int, params: Mapping[str, Any]):
    if n % 2:
        raise InvalidDimension(f"heat requires an even n, got {n}")
    kappa = float(params.get("kappa", 1.0))
    if kappa <= 0:
        raise InvalidDimension(f"heat requires kappa > 0, got {kappa}")
    h = 1.0 / n
    t = _midpoints(0.0, 1.0, n)
    column = h / (2.0 * kappa * np.sqrt(np.pi)) * t ** -1.5 * np.exp(-1.0 / (4.0 * kappa ** 2 * t))
    idx = np.arange(n)
    lag = idx[:, None] - idx[None, :]
    a = np.where(lag >= 0, column[np.clip(lag, 0, n - 1)], 0.0)

    x0 = np.zeros(n)
    ti = 20.0 * np.arange(1, n // 2 + 1) / n
    x0[: n // 2] = np.where(
        ti < 2.0,
        0.75 * ti ** 2 / 4.0,
        np.where(ti < 3.0, 0.75 + (ti - 2.0) * (3.0 - ti), 0.75 * np.exp(-2.0 * (ti - 3.0))),
    )
    return a, x0, {"kappa": kappa}


def _wing(n: int, params: Mapping[str, Any]):
    t = _midpoints(0.0, 1.0, n)
    a = (1.0 / n) * t[None, :] * np.exp(-t[:, None] * t[None, :] ** 2)
    x0 = ((t > 1.0 / 3.0) & (t < 2.0 / 3.0)).astype(float)
    return a, x0, {}


def _spikes(n: int, params: Mapping[str, Any]):
    h = 5.0 / n
    s = _midpoints(0.0, 5.0, n)
    t = _midpoints(0.0, 5.0, n)
    a = h * t[None, :] / (2.0 * np.sqrt(np.pi) * s[:, None] ** 1.5) * np.exp(
        -t[None, :] ** 2 / (4.0 * s[:, None])
    )
    x0 = np.zeros(n)
    positions = (np.array([0.1, 0.3, 0.5, 0.7, 0.9]) * n).astype(int)
    x0[positions] = np.array([1.0, 0.8, 0.6, 0.4, 0.2])
    return a, x0, {}


def _ilaplace(n: int, params: Mapping[str, Any]):
    nodes, weights = special.roots_laguerre(n)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    s = 10.0 * np.arange(1, n + 1) / n
    # w_j exp(t_j) exp(-s_i t_j), assembled in log space
    a = np.exp(log_weights[None, :] + nodes[None, :] * (1.0 - s[:, None]))
    return a, np.exp(-nodes / 2.0), {}


def _identity(n: int, params: Mapping[str, Any]):
    return np.eye(n), np.ones(n), {}


GENERATORS: Dict[str, Callable[[int, Mapping[str, Any]], Any]] = {
    "shaw": _shaw,
    "baart": _baart,
    "foxgood": _foxgood,
    "heat": _heat,
    "deriv2": _deriv2,
    "wing": _wing,
    "spikes": _spikes,
    "ilaplace": _ilaplace,
    "identity": _identity,
}


def generate(name: str, n: int, params: Optional[Mapping[str, Any]] = None) -> IllPosedProblem:
    """Build the named deterministic test problem on an ``n``-point grid."""
    try:
        builder = GENERATORS[name]
    except KeyError:
        raise UnknownProblem(f"Unknown problem '{name}'; expected one of {sorted(GENERATORS)}") from None
    if n < 2:
        raise InvalidDimension(f"n must be at least 2, got {n}")

    a, x0, meta = builder(n, params or {})
    meta = {"n": n, **meta}
    logger.debug(f"Generated {name} with n={n}")
    return _freeze(IllPosedProblem(name=name, a=a, x0=x0, meta=meta))


def _draw_x0(rng: np.random.Generator, n: int, dist: X0Distribution) -> NDArray[np.float64]:
    if dist is X0Distribution.GAUSSIAN:
        return rng.standard_normal(n)
    return rng.uniform(0.0, 1.0, n)


def rank_deficient(
    m: int,
    r: int,
    seed: int,
    dist: X0Distribution = X0Distribution.GAUSSIAN,
) -> IllPosedProblem:
    """``A = B B^T / m`` with ``B`` an ``m x r`` standard Gaussian matrix."""
    if not m > r >= 1:
        raise InvalidDimension(f"rank_deficient requires m > r >= 1, got m={m}, r={r}")
    dist = X0Distribution(dist)
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((m, r))
    a = (b @ b.T) / m
    x0 = _draw_x0(rng, m, dist)
    meta = {"m": m, "r": r, "seed": seed, "dist": dist.value}
    return _freeze(IllPosedProblem(name="rank_deficient", a=a, x0=x0, meta=meta))


def full_rank(
    m: int,
    n: int,
    seed: int,
    dist: X0Distribution = X0Distribution.GAUSSIAN,
) -> IllPosedProblem:
    """Tall standard Gaussian operator; reference case with smooth singular-value decay."""
    if not m >= n >= 2:
        raise InvalidDimension(f"full_rank requires m >= n >= 2, got m={m}, n={n}")
    dist = X0Distribution(dist)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    x0 = _draw_x0(rng, n, dist)
    meta = {"m": m, "n": n, "seed": seed, "dist": dist.value}
    return _freeze(IllPosedProblem(name="full_rank", a=a, x0=x0, meta=meta))


def tomo(n_side: int, n_rays: Optional[int] = None, seed: int = 0) -> IllPosedProblem:
    """Random-ray tomography of the bundled phantom.

    ``n_rays`` defaults to ``n_side**2`` (square operator); the default is
    recorded in ``meta['n_rays_default']``.
    """
    if n_side < 2:
        raise InvalidDimension(f"tomo requires n_side >= 2, got {n_side}")
    n_pixels = n_side * n_side
    defaulted = n_rays is None
    n_rays = n_pixels if n_rays is None else n_rays
    if n_rays < n_pixels:
        raise InvalidDimension(f"tomo requires n_rays >= {n_pixels}, got {n_rays}")

    rng = np.random.default_rng(seed)
    a = tomography.ray_matrix(n_side, n_rays, rng)
    x0 = tomography.stack_columns(tomography.phantom(n_side))
    meta = {"n_side": n_side, "n_rays": n_rays, "seed": seed, "n_rays_default": defaulted}
    return _freeze(IllPosedProblem(name="tomo", a=a, x0=x0, meta=meta))


def observe(problem: IllPosedProblem, snr_db: float, seed: int) -> NoisyObservation:
    """Add white Gaussian noise at ``snr_db = 10 log10(||A x0||^2 / (n sigma_z^2))``."""
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    clean = problem.clean_signal
    energy = float(clean @ clean)
    if energy == 0.0:
        raise DegenerateSignal(f"{problem.name}: A x0 is zero, SNR is undefined")

    sigma_z2 = energy / (problem.n * 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    y = clean + np.sqrt(sigma_z2) * rng.standard_normal(problem.m)
    return NoisyObservation(y=y, sigma_z2=sigma_z2, snr_db=float(snr_db), seed=seed)


def nmse(x_hat: NDArray[np.float64], x0: NDArray[np.float64]) -> float:
    diff = x_hat - x0
    return float(diff @ diff) / float(x0 @ x0)


def decay_class(sigma: NDArray[np.float64]) -> str:
    """Classify a descending spectrum as ``smooth``, ``gap`` or ``ill-posed``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma[-1] >= DECAY_FLOOR * sigma[0]:
        return "smooth"
    significant = sigma[sigma >= DECAY_FLOOR * sigma[0]]
    following = sigma[1: significant.size + 1]
    with np.errstate(divide="ignore"):
        ratios = significant[: following.size] / following
    if np.any(ratios > GAP_RATIO):
        return "gap"
    return "ill-posed"


def to_document(problem: IllPosedProblem, svd=None) -> ProblemDocument:
    document = ProblemDocument(
        name=problem.name,
        m=problem.m,
        n=problem.n,
        seed=problem.meta.get("seed"),
        a=problem.a.tolist(),
        x0=problem.x0.tolist(),
        meta=dict(problem.meta),
    )
    if svd is not None:
        document.svd = SvdDocument(u=svd.u.tolist(), sigma=svd.sigma.tolist(), v=svd.v.tolist())
    return document


def from_document(document: ProblemDocument) -> IllPosedProblem:
    a = np.array(document.a, dtype=np.float64).reshape(document.m, document.n)
    x0 = np.array(document.x0, dtype=np.float64)
    return _freeze(IllPosedProblem(name=document.name, a=a, x0=x0, meta=dict(document.meta)))


def _freeze(problem: IllPosedProblem) -> IllPosedProblem:
    if not (np.all(np.isfinite(problem.a)) and np.all(np.isfinite(problem.x0))):
        raise InvalidMatrix(f"{problem.name}: generator produced non-finite entries")
    problem.a.setflags(write=False)
    problem.x0.setflags(write=False)
    return problem

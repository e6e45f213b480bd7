import logging

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from copra.errors import FactorizationFailed, InvalidDimension, InvalidMatrix, InvalidThresholdConstant
from copra.models import SpectralPartition, SvdFactors

logger = logging.getLogger(__name__)


def compute_svd(a: NDArray[np.float64]) -> SvdFactors:
    """Thin SVD of a tall dense matrix.

    Falls back from the divide-and-conquer driver to ``gesvd`` when the
    former does not converge.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidMatrix(f"expected a 2-D matrix, got shape {a.shape}")
    m, n = a.shape
    if m < n:
        raise InvalidDimension(f"expected m >= n, got {m}x{n}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")

    try:
        u, sigma, vt = linalg.svd(a, full_matrices=False, lapack_driver="gesdd")
    except linalg.LinAlgError:
        logger.warning("gesdd did not converge, retrying with gesvd")
        try:
            u, sigma, vt = linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except linalg.LinAlgError as e:
            raise FactorizationFailed(f"SVD of {m}x{n} matrix did not converge") from e

    v = np.ascontiguousarray(vt.T)
    for array in (u, sigma, v):
        array.setflags(write=False)
    return SvdFactors(u=u, sigma=sigma, v=v)


def partition_spectrum(sigma: NDArray[np.float64], c: float) -> SpectralPartition:
    if not 0.0 < c < 1.0:
        raise InvalidThresholdConstant(f"c must lie in (0, 1), got {c}")
    s2 = np.asarray(sigma, dtype=np.float64) ** 2
    n = s2.size
    threshold = c * float(np.mean(s2))
    # ties count as significant
    n1 = max(int(np.count_nonzero(s2 >= threshold)), 1)
    return SpectralPartition(n1=n1, n2=n - n1, threshold=threshold, c=c, beta=n / n1)


def partition(svd: SvdFactors, c: float) -> SpectralPartition:
    """Split singular values at ``c`` times the mean of ``sigma_i^2``."""
    part = partition_spectrum(svd.sigma, c)
    logger.debug(f"Partition c={c}: n1={part.n1}, n2={part.n2}, threshold={part.threshold:.3e}")
    return part
